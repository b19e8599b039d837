#!/usr/bin/env python3
"""Calibrate the simulated UWB noise against a raw stop-accuracy target.

Raw stop accuracy reads one noisy sample per stop, so its mean is
sigma * sqrt(pi/2); the script starts there, refines by proportional
scaling over seeded runs, and optionally writes the calibrated scenario.

Usage:
    python scripts/calibrate_noise.py [--target-mm 131.9] [--write-config FILE]
"""
import argparse
import subprocess
import sys


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenario", default="default")
    parser.add_argument("--target-mm", type=float, default=131.9)
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--write-config")
    args = parser.parse_args()
    cmd = [
        sys.executable, "-m", "uwbvo.cli", "calibrate",
        "--scenario", args.scenario,
        "--target-mm", str(args.target_mm),
        "--seeds", str(args.seeds),
    ]
    if args.write_config:
        cmd += ["--write-config", args.write_config]
    sys.exit(subprocess.run(cmd).returncode)


if __name__ == "__main__":
    main()
