#!/usr/bin/env python3
"""End-to-end demo on synthetic confidence logs.

Generates baseline and production JSONL confidence logs from a trained
synthetic classifier, then walks the full CLI pipeline: baseline -> audit
(clean and drifted) -> calibrate -> monitor.
"""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from driftaudit import simlab as sl

ROOT = Path(__file__).resolve().parent.parent
OUT = ROOT / "results" / "demo"


def write_jsonl(path: Path, records) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(
                {"id": r.record_id, "label": r.predicted_label,
                 "confidence": r.winning_confidence}
            ) + "\n")


def cli(*argv) -> int:
    return subprocess.run(
        [sys.executable, "-m", "driftaudit", *argv], check=False
    ).returncode


def main() -> None:
    mix = sl.MixtureSpec.make(
        [(0, 0), (4, 4), (4, -4), (-4, 4), (-4, -4)], [1] * 5, 400, seed=3
    )
    drift = sl.DriftSpec(kind=sl.DriftKind.HELD_OUT_CLASS, held_out_class=0)
    setup = sl.build_experiment(mix, drift, seed=3)

    base_records = sl.predict_records(setup.model, setup.clean.features, "base-")
    write_jsonl(OUT / "baseline.jsonl", base_records)

    rng = np.random.default_rng(7)
    clean_idx = rng.choice(setup.clean.size, 400, replace=True)
    prod_clean = sl.predict_records(
        setup.model, setup.clean.features[clean_idx], "prod-"
    )
    write_jsonl(OUT / "production_clean.jsonl", prod_clean)

    batch = sl.compose_batch(
        setup.clean, setup.drift_pool, sl.DriftMixSpec(0.15, 400, seed=8)
    )
    write_jsonl(OUT / "production_drift.jsonl",
                sl.predict_records(setup.model, batch, "drift-"))

    print("== build baseline ==")
    cli("baseline", "--input", str(OUT / "baseline.jsonl"),
        "--out", str(OUT / "profile.json"))
    print("== audit clean batch (expect exit 0) ==")
    code = cli("audit", "--baseline", str(OUT / "profile.json"),
               "--production", str(OUT / "production_clean.jsonl"),
               "--report", str(OUT / "report_clean.json"))
    print("exit:", code)
    print("== audit drifted batch (expect exit 1) ==")
    code = cli("audit", "--baseline", str(OUT / "profile.json"),
               "--production", str(OUT / "production_drift.jsonl"),
               "--report", str(OUT / "report_drift.json"),
               "--csv", str(OUT / "report_drift.csv"))
    print("exit:", code)
    print("== calibrate a monitoring table ==")
    cli("calibrate", "--kind", "cvm", "--alpha", "0.001", "--t-max", "400",
        "--replications", "4000", "--seed", "1",
        "--out", str(OUT / "table.json"),
        "--cache-dir", str(ROOT / "results" / "cache"))
    print("== monitor the drifted stream (expect exit 1 eventually) ==")
    stream = OUT / "stream.jsonl"
    with open(stream, "w", encoding="utf-8") as fh:
        for path in (OUT / "production_clean.jsonl", OUT / "production_drift.jsonl"):
            fh.write(path.read_text())
    code = cli("monitor", "--baseline", str(OUT / "profile.json"),
               "--table", str(OUT / "table.json"),
               "--input", str(stream), "--out", str(OUT / "events.jsonl"))
    print("exit:", code)


if __name__ == "__main__":
    main()
