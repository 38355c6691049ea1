"""Command-line surface.

Subcommands: calibrate, baseline, audit, monitor, outliers, simulate,
cpm-experiment.  Exit codes: 0 success, 1 drift alert (audit/monitor),
2 usage error, 3 runtime error.  Every subcommand is deterministic given its
flags, seed and input files; worker count only changes how calibration work
is spread across threads, never the numbers.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import auditor, changepoint, config as cfgmod, cpm_experiment, label_outliers, simlab
from .errors import DriftAuditError, InvalidParameterError
from .stat_tests import TestKind

logger = logging.getLogger("driftaudit")

EXIT_OK = 0
EXIT_ALERT = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3

CACHE_ENV_VAR = "DRIFTAUDIT_CACHE_DIR"
FORMAT_VERSION = "1"


class UsageError(Exception):
    pass


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write_csv(path: Path, rows: list[list[str]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _cache_dir(args) -> Path | None:
    if getattr(args, "cache_dir", None):
        return Path(args.cache_dir)
    env = os.environ.get(CACHE_ENV_VAR)
    return Path(env) if env else None


def _set_workers(args) -> None:
    workers = getattr(args, "workers", None)
    if workers:
        if workers < 1:
            raise UsageError("--workers must be >= 1")
        import numba

        numba.set_num_threads(workers)


def _load_config_with_overrides(args, overrides: dict) -> dict:
    cfg = cfgmod.read_config(args.config)
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    return cfg


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_calibrate(args) -> int:
    if not 0.0 < args.alpha < 1.0:
        raise UsageError("--alpha must be in (0, 1)")
    if args.t_max <= args.burn_in:
        raise UsageError("--t-max must exceed --burn-in")
    if args.replications < 1000:
        raise UsageError("--replications must be >= 1000")
    if args.stride < 1:
        raise UsageError("--stride must be >= 1")
    _set_workers(args)
    cache = _cache_dir(args)
    table = changepoint.calibrate_thresholds(
        TestKind(args.kind), args.alpha, args.t_max, args.replications,
        seed=args.seed, burn_in=args.burn_in, stride=args.stride,
        cache_dir=cache,
    )
    table.save(args.out)
    if cache is not None:
        print(
            "cache:",
            cache / changepoint.cache_filename(
                TestKind(args.kind), args.alpha, args.t_max,
                args.replications, args.seed, args.burn_in, args.stride,
            ),
            file=sys.stderr,
        )
    print(f"threshold table written to {args.out}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    records, malformed = auditor.read_confidence_jsonl(args.input)
    profile = auditor.build_baseline(records, created_from=str(args.input))
    profile.save(args.out)
    print(
        f"baseline written to {args.out}: {profile.total} records, "
        f"{len(profile.label_counts)} labels, {malformed} malformed lines skipped"
    )
    return EXIT_OK


def cmd_audit(args) -> int:
    if not 0.0 < args.alpha < 1.0:
        raise UsageError("--alpha must be in (0, 1)")
    if not 0.0 <= args.malformed_threshold <= 1.0:
        raise UsageError("--malformed-threshold must be in [0, 1]")
    profile = auditor.BaselineProfile.load(args.baseline)
    records, malformed = auditor.read_confidence_jsonl(args.production)
    seen = malformed + len(records)
    if seen and malformed / seen > args.malformed_threshold:
        raise DriftAuditError(
            f"{malformed}/{seen} malformed production lines exceeds the "
            f"threshold {args.malformed_threshold}"
        )
    report = auditor.audit_batch(
        profile, records, test_kind=TestKind(args.kind), alpha=args.alpha,
        mode=auditor.AuditMode(args.mode), malformed_lines=malformed,
    )
    _write_json(Path(args.report), report.to_json_dict())
    if args.csv:
        _write_csv(Path(args.csv), report.to_csv_rows())
    print(f"audit report written to {args.report}; drift_alert={report.drift_alert}")
    return EXIT_ALERT if report.drift_alert else EXIT_OK


def cmd_monitor(args) -> int:
    profile = auditor.BaselineProfile.load(args.baseline)
    table = changepoint.ThresholdTable.load(args.table)
    monitor = auditor.monitor_stream(profile, table)
    source = sys.stdin if args.input == "-" else open(args.input, "r", encoding="utf-8")
    sink = (
        open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    )

    def emit(event: dict) -> None:
        sink.write(json.dumps(event, sort_keys=True) + "\n")

    detection = None
    try:
        for line_no, line in enumerate(source, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                record = auditor.ConfidenceRecord(
                    record_id=str(obj["id"]),
                    predicted_label=str(obj["label"]),
                    winning_confidence=float(obj["confidence"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError,
                    DriftAuditError) as exc:
                monitor.rejected += 1
                emit({"status": "warning", "line": line_no, "error": str(exc)})
                continue
            detection = monitor.push_record(record)
            if detection is None:
                emit({"status": "monitoring", "t": monitor.t})
            else:
                emit(
                    {
                        "status": "change",
                        "t": detection.t_detect,
                        "k_hat": detection.k_hat,
                        "statistic": detection.statistic,
                        "record_id": record.record_id,
                    }
                )
                break
        if detection is None:
            emit(
                {
                    "status": "end",
                    "records_seen": monitor.t,
                    "rejected": monitor.rejected,
                }
            )
    finally:
        if source is not sys.stdin:
            source.close()
        if sink is not sys.stdout:
            sink.close()
    return EXIT_ALERT if detection is not None else EXIT_OK


def cmd_outliers(args) -> int:
    path = Path(args.input)
    fmt = args.format
    if fmt == "auto":
        fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    if fmt == "csv":
        histogram = label_outliers.LabelHistogram.from_csv(path)
    else:
        histogram = label_outliers.LabelHistogram.from_jsonl(path)
    flags = label_outliers.check_label_distribution(histogram)
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": "outlier_flags",
        "histogram": {
            "counts": dict(sorted(histogram.counts.items())),
            "total": histogram.total,
        },
        "methods": [f.to_json_dict() for f in flags],
    }
    _write_json(Path(args.out), payload)
    n_flagged = sum(1 for f in flags if f.flagged)
    print(f"outlier flags written to {args.out}; {n_flagged}/5 methods flagged")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_config_with_overrides(args, {"seed": args.seed})
    _set_workers(args)
    mixture = cfgmod.parse_mixture(cfg)
    drift = cfgmod.parse_drift_spec(cfg)
    grid = cfgmod.parse_grid(cfg)
    seed = int(cfg.get("seed", 0))
    setup = simlab.build_experiment(
        mixture,
        drift,
        epochs=int(cfg.get("epochs", 300)),
        learning_rate=float(cfg.get("learning_rate", 0.5)),
        noise_level=float(cfg.get("noise_level", 0.0)),
        baseline_per_class=int(cfg.get("baseline_per_class", 500)),
        clean_per_class=int(cfg.get("clean_per_class", 500)),
        seed=seed,
    )
    result = simlab.min_drift_search(
        setup.model,
        setup.baseline,
        setup.clean,
        setup.drift_pool,
        grid,
        iterations=int(cfg.get("iterations", 50)),
        batch_size=int(cfg.get("batch_size", 500)),
        test_kind=TestKind(cfg.get("test_kind", "ks")),
        alpha=float(cfg.get("alpha", 0.05)),
        seed=seed,
    )
    out_dir = Path(args.out_dir)
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": "simulate_result",
        "config": cfg,
        "model": {
            "final_train_accuracy": setup.model.final_train_accuracy,
            "epochs": setup.model.epochs,
            "learning_rate": setup.model.learning_rate,
            "noise_level": setup.model.noise_level,
        },
        "search": result.to_json_dict(),
    }
    _write_json(out_dir / "result.json", payload)
    _write_csv(out_dir / "heatmap.csv", result.heatmap_rows())
    minimal = result.minimal_fraction
    print(
        "minimal detectable drift fraction:",
        "not detected" if minimal is None else f"{minimal:.2f}",
    )
    return EXIT_OK


def cmd_cpm_experiment(args) -> int:
    cfg = _load_config_with_overrides(args, {"seed": args.seed})
    _set_workers(args)
    cache = _cache_dir(args)
    mixture = cfgmod.parse_mixture(cfg)
    drift = cfgmod.parse_drift_spec(cfg)
    seed = int(cfg.get("seed", 0))
    setup = simlab.build_experiment(
        mixture,
        drift,
        epochs=int(cfg.get("epochs", 80)),
        learning_rate=float(cfg.get("learning_rate", 0.5)),
        noise_level=float(cfg.get("noise_level", 0.0)),
        baseline_per_class=int(cfg.get("baseline_per_class", 500)),
        clean_per_class=int(cfg.get("clean_per_class", 500)),
        seed=seed,
    )
    clean_pool, drift_pool = cpm_experiment.confidence_pools(setup)
    protocol = cpm_experiment.SequenceProtocol(
        sample_size=int(cfg.get("sample_size", 20)),
        clean_samples=int(cfg.get("clean_samples", 50)),
        ramp_samples=int(cfg.get("ramp_samples", 20)),
        total_samples=int(cfg.get("total_samples", 120)),
        replications=int(cfg.get("replications", 300)),
        seed=seed,
    )
    kinds = [TestKind(k) for k in cfg.get("cpm_kinds", ["cvm", "lepage", "student_t"])]
    tables = {}
    for kind in kinds:
        tables[kind.value] = changepoint.calibrate_thresholds(
            kind,
            float(cfg.get("cpm_alpha", 0.0005)),
            int(cfg.get("cpm_t_max", 1600)),
            int(cfg.get("cpm_calibration_replications", 10000)),
            seed=int(cfg.get("cpm_seed", 11)),
            burn_in=int(cfg.get("cpm_burn_in", protocol.sample_size)),
            stride=int(cfg.get("cpm_stride", protocol.sample_size)),
            cache_dir=cache,
        )
    outcomes = cpm_experiment.run_replications(
        clean_pool,
        drift_pool,
        protocol,
        tables,
        splits_alpha=float(cfg.get("splits_alpha", cpm_experiment.DEFAULT_SPLITS_ALPHA)),
        pairs_alpha=float(cfg.get("pairs_alpha", cpm_experiment.DEFAULT_PAIRS_ALPHA)),
    )
    summaries = cpm_experiment.summarize(outcomes, protocol)
    out_dir = Path(args.out_dir)
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": "cpm_experiment_summary",
        "config": cfg,
        "protocol": asdict(protocol),
        "methods": {m: s.to_json_dict() for m, s in sorted(summaries.items())},
    }
    _write_json(out_dir / "summary.json", payload)
    _write_csv(out_dir / "summary.csv", cpm_experiment.summary_csv_rows(summaries))
    _write_csv(
        out_dir / "histogram.csv",
        cpm_experiment.histogram_csv_rows(summaries, protocol),
    )
    for method in sorted(summaries):
        s = summaries[method]
        print(
            f"{method}: Pr(detection before drift)="
            f"{s.pr_detection_before_drift:.3f}, detections={s.detections}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftaudit",
        description="Detect data drift from classifier labels and confidences.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="calibrate change-point thresholds")
    p.add_argument("--kind", required=True, choices=["student_t", "ks", "cvm", "lepage"])
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--t-max", type=int, required=True)
    p.add_argument("--replications", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--burn-in", type=int, default=changepoint.DEFAULT_BURN_IN)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser("baseline", help="build a baseline profile from JSONL records")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_baseline)

    p = sub.add_parser("audit", help="audit a production batch against a baseline")
    p.add_argument("--baseline", required=True)
    p.add_argument("--production", required=True)
    p.add_argument("--kind", default="ks",
                   choices=[k.value for k in TestKind])
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--mode", default="both",
                   choices=[m.value for m in auditor.AuditMode])
    p.add_argument("--report", required=True)
    p.add_argument("--csv", default=None)
    p.add_argument("--malformed-threshold", type=float, default=0.01)
    p.set_defaults(handler=cmd_audit)

    p = sub.add_parser("monitor", help="stream records through a change detector")
    p.add_argument("--baseline", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--input", required=True, help="JSONL file or - for stdin")
    p.add_argument("--out", default=None, help="event log path (default stdout)")
    p.set_defaults(handler=cmd_monitor)

    p = sub.add_parser("outliers", help="label-count outlier methods (all of them)")
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="auto", choices=["auto", "jsonl", "csv"])
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_outliers)

    p = sub.add_parser("simulate", help="minimal-detectable-drift experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser(
        "cpm-experiment",
        help="ramped-drift sequence experiment: monitors vs naive T-tests",
    )
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(handler=cmd_cpm_experiment)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidParameterError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DriftAuditError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
