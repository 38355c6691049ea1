#!/usr/bin/env python3
"""Run the ramped-drift sequence experiment and print the method table."""

import argparse
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(ROOT / "configs" / "cpm_experiment.conf"))
    ap.add_argument("--out", default=str(ROOT / "results" / "cpm_experiment"))
    ap.add_argument("--cache-dir", default=str(ROOT / "results" / "cache"))
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()

    cmd = [sys.executable, "-m", "driftaudit", "cpm-experiment",
           "--config", args.config, "--out-dir", args.out,
           "--cache-dir", args.cache_dir]
    if args.seed is not None:
        cmd += ["--seed", str(args.seed)]
    subprocess.run(cmd, check=True)
    print(f"tables and histograms in {args.out}")


if __name__ == "__main__":
    main()
