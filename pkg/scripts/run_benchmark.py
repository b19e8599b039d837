#!/usr/bin/env python3
"""Reproduce the desk-scale benchmark: all methods on both presets.

Simulates the worst-case preset (VO reference loss from the sixth stop
onward) and the best-case preset (VO healthy) over a seed batch, evaluates
every method, and prints per-preset comparison tables plus the restart
counts of the self-corrective method at the two mutual-error thresholds.

Usage:
    python scripts/run_benchmark.py [--seeds 10] [--out runs/]
"""
import argparse
import subprocess
import sys
from pathlib import Path


def sh(*args: str) -> None:
    print("+", " ".join(args))
    result = subprocess.run([sys.executable, "-m", "uwbvo.cli", *args])
    if result.returncode not in (0,):
        sys.exit(result.returncode)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--out", default="runs")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()
    out = Path(args.out)

    for preset in ("worst-case", "best-case"):
        logs = out / preset.replace("-", "_")
        sh("simulate", "--scenario", preset, "--seeds", str(args.seeds),
           "--out", str(logs))
        sh("run", "--logs", str(logs), "--method", "all",
           "--seeds", str(args.seeds), "--jobs", str(args.jobs))
        print(f"\n=== {preset} (beta = 3 cm) ===")
        sh("compare", str(logs))

    # restart trade-off: rerun the self-corrective method at beta = 6 cm
    logs60 = out / "worst_case_beta60"
    sh("simulate", "--scenario", "worst-case", "--seeds", str(args.seeds),
       "--out", str(logs60))
    sh("run", "--logs", str(logs60), "--method", "self-corrective",
       "--seeds", str(args.seeds), "--beta-mm", "60", "--jobs", str(args.jobs))
    print("\n=== worst-case, self-corrective at beta = 6 cm ===")
    sh("compare", str(logs60))


if __name__ == "__main__":
    main()
