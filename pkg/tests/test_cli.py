"""CLI contract tests: exit codes, file formats, schemas, determinism."""

import json
import subprocess
import sys
from importlib.resources import files

import jsonschema
import numpy as np
import pytest

from driftaudit import changepoint as cp
from driftaudit import simlab as sl
from driftaudit.stat_tests import TestKind


def run_cli(*argv, stdin=None):
    return subprocess.run(
        [sys.executable, "-m", "driftaudit", *argv],
        capture_output=True,
        text=True,
        input=stdin,
    )


def load_schema(name: str) -> dict:
    return json.loads(
        (files("driftaudit") / "schemas" / name).read_text(encoding="utf-8")
    )


def validate_schema(doc: dict, schema_name: str) -> None:
    jsonschema.validate(doc, load_schema(schema_name))


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "id": r.record_id,
                        "label": r.predicted_label,
                        "confidence": r.winning_confidence,
                    }
                )
                + "\n"
            )


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthetic confidence logs plus a monitoring table, built once."""
    root = tmp_path_factory.mktemp("cli")
    mix = sl.MixtureSpec.make(
        [(0, 0), (4, 4), (4, -4), (-4, 4), (-4, -4)], [1] * 5, 300, seed=3
    )
    drift = sl.DriftSpec(kind=sl.DriftKind.HELD_OUT_CLASS, held_out_class=0)
    setup = sl.build_experiment(mix, drift, seed=3)
    rng = np.random.default_rng(0)

    base_records = sl.predict_records(setup.model, setup.clean.features, "b-")
    write_jsonl(root / "base.jsonl", base_records)

    drifted = sl.compose_batch(
        setup.clean, setup.drift_pool, sl.DriftMixSpec(0.2, 400, seed=8)
    )
    write_jsonl(root / "prod_drift.jsonl", sl.predict_records(setup.model, drifted, "d-"))

    clean_batch = sl.compose_batch(
        setup.clean, None, sl.DriftMixSpec(0.0, 400, seed=9)
    )
    write_jsonl(root / "prod_clean.jsonl", sl.predict_records(setup.model, clean_batch, "c-"))

    table = cp.calibrate_thresholds(
        TestKind.CRAMER_VON_MISES, 0.001, 350, 3000, seed=21
    )
    table.save(root / "table.json")

    base_conf = np.array([r.winning_confidence for r in base_records])
    stream = root / "stream_change.jsonl"
    with open(stream, "w", encoding="utf-8") as fh:
        for i, v in enumerate(rng.choice(base_conf, 200, replace=True)):
            fh.write(json.dumps({"id": f"s{i}", "label": "1", "confidence": float(v)}) + "\n")
        fh.write("this line is garbage\n")
        shifted = np.clip(rng.choice(base_conf, 120, replace=True) - 0.5, 0, 1)
        for i, v in enumerate(shifted):
            fh.write(json.dumps({"id": f"t{i}", "label": "1", "confidence": float(v)}) + "\n")

    proc = run_cli("baseline", "--input", str(root / "base.jsonl"),
                   "--out", str(root / "profile.json"))
    assert proc.returncode == 0, proc.stderr
    return root


# ---------------------------------------------------------------------------
# baseline / audit
# ---------------------------------------------------------------------------

def test_baseline_profile_schema(workspace):
    doc = json.loads((workspace / "profile.json").read_text())
    validate_schema(doc, "baseline_profile.schema.json")


def test_audit_clean_exits_zero(workspace):
    proc = run_cli(
        "audit", "--baseline", str(workspace / "profile.json"),
        "--production", str(workspace / "prod_clean.jsonl"),
        "--report", str(workspace / "rep_clean.json"),
    )
    assert proc.returncode == 0, proc.stderr
    doc = json.loads((workspace / "rep_clean.json").read_text())
    validate_schema(doc, "audit_report.schema.json")
    assert doc["drift_alert"] is False


def test_audit_drift_exits_one(workspace):
    proc = run_cli(
        "audit", "--baseline", str(workspace / "profile.json"),
        "--production", str(workspace / "prod_drift.jsonl"),
        "--report", str(workspace / "rep_drift.json"),
        "--csv", str(workspace / "rep_drift.csv"),
    )
    assert proc.returncode == 1
    doc = json.loads((workspace / "rep_drift.json").read_text())
    validate_schema(doc, "audit_report.schema.json")
    assert doc["drift_alert"] is True
    rows = (workspace / "rep_drift.csv").read_text().strip().splitlines()
    assert rows[0].startswith("auditor,")
    assert rows[-1].startswith("ALL,")


def test_audit_tolerates_sparse_malformed_lines(workspace):
    mixed = workspace / "prod_mixed.jsonl"
    text = (workspace / "prod_clean.jsonl").read_text()
    mixed.write_text(text + "one bad line of 401\n")
    proc = run_cli(
        "audit", "--baseline", str(workspace / "profile.json"),
        "--production", str(mixed),
        "--report", str(workspace / "rep_mixed.json"),
    )
    assert proc.returncode == 0, proc.stderr
    doc = json.loads((workspace / "rep_mixed.json").read_text())
    assert doc["malformed_lines"] == 1


def test_audit_rejects_heavily_malformed_input(workspace):
    bad = workspace / "prod_bad.jsonl"
    lines = (workspace / "prod_clean.jsonl").read_text().splitlines()[:40]
    bad.write_text("\n".join(lines + ["junk"] * 10) + "\n")
    proc = run_cli(
        "audit", "--baseline", str(workspace / "profile.json"),
        "--production", str(bad),
        "--report", str(workspace / "rep_bad.json"),
    )
    assert proc.returncode == 3


def test_audit_usage_error(workspace):
    proc = run_cli(
        "audit", "--baseline", str(workspace / "profile.json"),
        "--production", str(workspace / "prod_clean.jsonl"),
        "--report", str(workspace / "x.json"), "--alpha", "2.0",
    )
    assert proc.returncode == 2


def test_missing_required_flag_is_usage_error():
    proc = run_cli("audit", "--baseline", "x.json")
    assert proc.returncode == 2


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------

def test_calibrate_validates_before_work(tmp_path):
    proc = run_cli("calibrate", "--kind", "cvm", "--alpha", "0",
                   "--t-max", "100", "--out", str(tmp_path / "t.json"))
    assert proc.returncode == 2


def test_calibrate_cache_and_round_trip(tmp_path):
    args = [
        "calibrate", "--kind", "lepage", "--alpha", "0.01", "--t-max", "60",
        "--replications", "1000", "--seed", "5",
        "--cache-dir", str(tmp_path / "cache"),
    ]
    p1 = run_cli(*args, "--out", str(tmp_path / "t1.json"))
    assert p1.returncode == 0, p1.stderr
    p2 = run_cli(*args, "--out", str(tmp_path / "t2.json"))
    assert p2.returncode == 0
    assert "reusing cached" in p2.stderr
    assert (tmp_path / "t1.json").read_bytes() == (tmp_path / "t2.json").read_bytes()
    doc = json.loads((tmp_path / "t1.json").read_text())
    validate_schema(doc, "threshold_table.schema.json")
    loaded = cp.ThresholdTable.load(tmp_path / "t1.json")
    assert loaded.to_json_dict() == doc


# ---------------------------------------------------------------------------
# monitor
# ---------------------------------------------------------------------------

def test_monitor_detects_change_and_warns_on_garbage(workspace, tmp_path):
    events_path = tmp_path / "events.jsonl"
    proc = run_cli(
        "monitor", "--baseline", str(workspace / "profile.json"),
        "--table", str(workspace / "table.json"),
        "--input", str(workspace / "stream_change.jsonl"),
        "--out", str(events_path),
    )
    assert proc.returncode == 1
    events = [json.loads(l) for l in events_path.read_text().splitlines()]
    for e in events:
        validate_schema(e, "monitor_event.schema.json")
    statuses = [e["status"] for e in events]
    assert "warning" in statuses  # the garbage line
    assert statuses[-1] == "change"
    change = events[-1]
    assert change["t"] > 200  # after the stable prefix
    assert 150 <= change["k_hat"] < change["t"]


def test_monitor_clean_stream_runs_to_end(workspace, tmp_path):
    rng = np.random.default_rng(5)
    profile = json.loads((workspace / "profile.json").read_text())
    base_conf = np.asarray(profile["winning_confidences"])
    stream = tmp_path / "clean_stream.jsonl"
    with open(stream, "w", encoding="utf-8") as fh:
        for i, v in enumerate(rng.choice(base_conf, 150, replace=True)):
            fh.write(json.dumps({"id": f"c{i}", "label": "1", "confidence": float(v)}) + "\n")
    proc = run_cli(
        "monitor", "--baseline", str(workspace / "profile.json"),
        "--table", str(workspace / "table.json"),
        "--input", str(stream), "--out", str(tmp_path / "ev.jsonl"),
    )
    assert proc.returncode == 0, proc.stderr
    events = [json.loads(l) for l in (tmp_path / "ev.jsonl").read_text().splitlines()]
    assert events[-1]["status"] == "end"
    assert events[-1]["records_seen"] == 150


# ---------------------------------------------------------------------------
# outliers
# ---------------------------------------------------------------------------

def test_outliers_from_csv(tmp_path):
    src = tmp_path / "counts.csv"
    src.write_text("label,count\na,100\nb,100\nc,100\nd,100\ne,1000\n")
    proc = run_cli("outliers", "--input", str(src), "--out", str(tmp_path / "f.json"))
    assert proc.returncode == 0, proc.stderr
    doc = json.loads((tmp_path / "f.json").read_text())
    validate_schema(doc, "outlier_flags.schema.json")
    by_method = {m["method"]: m["flagged"] for m in doc["methods"]}
    assert by_method["iqr_inner"] == ["e"]


def test_outliers_from_jsonl(workspace, tmp_path):
    proc = run_cli(
        "outliers", "--input", str(workspace / "base.jsonl"),
        "--out", str(tmp_path / "flags.json"),
    )
    assert proc.returncode == 0, proc.stderr
    doc = json.loads((tmp_path / "flags.json").read_text())
    assert doc["histogram"]["total"] == 2000


# ---------------------------------------------------------------------------
# simulate / cpm-experiment (fast configs; full scale runs in acceptance)
# ---------------------------------------------------------------------------

SIM_CONF = """
class_means = [[0, 0], [4, 4], [4, -4], [-4, 4], [-4, -4]]
class_sigmas = [1, 1, 1, 1, 1]
records_per_class = 300
drift_kind = "held_out_class"
held_out_class = 0
epochs = 200
baseline_per_class = 300
clean_per_class = 300
test_kind = "ks"
alpha = 0.05
batch_size = 300
grid = [0.02, 0.10]
iterations = 50
seed = 0
"""

CPM_CONF = """
class_means = [[0, 0], [3, 3], [3, -3], [-3, 3], [-3, -3]]
class_sigmas = [1.2, 1.2, 1.2, 1.2, 1.2]
records_per_class = 300
drift_kind = "out_of_domain"
held_out_class = 0
alt_class_means = [[0, 3], [3, 0], [0, -3], [-3, 0]]
alt_class_sigmas = [0.9, 0.9, 0.9, 0.9]
alt_records_per_class = 300
alt_seed = 77
epochs = 80
sample_size = 10
clean_samples = 20
ramp_samples = 10
total_samples = 45
replications = 30
cpm_kinds = ["cvm"]
cpm_alpha = 0.002
cpm_t_max = 450
cpm_calibration_replications = 1000
cpm_seed = 11
seed = 0
"""


def test_simulate_outputs_and_schema(tmp_path):
    conf = tmp_path / "sim.conf"
    conf.write_text(SIM_CONF)
    proc = run_cli("simulate", "--config", str(conf), "--out-dir", str(tmp_path / "out"))
    assert proc.returncode == 0, proc.stderr
    doc = json.loads((tmp_path / "out" / "result.json").read_text())
    validate_schema(doc, "simulate_result.schema.json")
    rows = (tmp_path / "out" / "heatmap.csv").read_text().splitlines()
    assert rows[0] == "auditor,0.0200,0.1000"
    assert rows[1].startswith("ALL,")
    assert len(rows) == 2 + 4  # header + ALL + one row per label


def test_simulate_deterministic_bytes(tmp_path):
    conf = tmp_path / "sim.conf"
    conf.write_text(SIM_CONF)
    run_cli("simulate", "--config", str(conf), "--out-dir", str(tmp_path / "a"))
    run_cli("simulate", "--config", str(conf), "--out-dir", str(tmp_path / "b"))
    assert (tmp_path / "a" / "result.json").read_bytes() == (
        tmp_path / "b" / "result.json"
    ).read_bytes()
    assert (tmp_path / "a" / "heatmap.csv").read_bytes() == (
        tmp_path / "b" / "heatmap.csv"
    ).read_bytes()


def test_cpm_experiment_outputs_and_schema(tmp_path):
    conf = tmp_path / "cpm.conf"
    conf.write_text(CPM_CONF)
    proc = run_cli(
        "cpm-experiment", "--config", str(conf),
        "--out-dir", str(tmp_path / "out"),
        "--cache-dir", str(tmp_path / "cache"),
    )
    assert proc.returncode == 0, proc.stderr
    doc = json.loads((tmp_path / "out" / "summary.json").read_text())
    validate_schema(doc, "cpm_summary.schema.json")
    table = (tmp_path / "out" / "summary.csv").read_text().splitlines()
    assert table[0].startswith("method,type,pr_determined_k_before_drift")
    assert {r.split(",")[0] for r in table[1:]} == {"cpm_cvm", "splits_t", "pairs_t"}
    hist = (tmp_path / "out" / "histogram.csv").read_text().splitlines()
    assert len(hist) == 1 + 45
