"""The classifier-confidence drift auditor.

Builds a baseline profile from classifier output events (predicted label plus
winning-label confidence), compares production confidence distributions
against it with a two-sample test, and wraps the sequential change-point
detector for streaming use.  No feature vectors and no ground-truth labels
enter any signature here: the auditor sees only what the classifier emitted.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .changepoint import Detection, DetectorState, ThresholdTable
from .errors import InsufficientDataError, InvalidParameterError, InvalidRecordError
from .stat_tests import TestKind, TestResult, two_sample_test

logger = logging.getLogger(__name__)

FORMAT_VERSION = "1"
MIN_BASELINE_RECORDS = 30
MIN_PRODUCTION_RECORDS = 30
MIN_PER_LABEL_RECORDS = 10

DEFAULT_TEST_KIND = TestKind.KOLMOGOROV_SMIRNOV
DEFAULT_ALPHA = 0.05

_PROB_SUM_TOL = 1e-6
_PROB_MAX_TOL = 1e-9


@dataclass(frozen=True)
class ConfidenceRecord:
    """One classifier output event.

    ``class_probabilities`` is optional; when present it must be a proper
    distribution whose argmax matches the predicted label and whose maximum
    equals the winning confidence.
    """

    record_id: str
    predicted_label: str
    winning_confidence: float
    class_probabilities: dict[str, float] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.winning_confidence <= 1.0:
            raise InvalidRecordError(
                f"record {self.record_id!r}: confidence "
                f"{self.winning_confidence} outside [0, 1]"
            )
        probs = self.class_probabilities
        if probs is None:
            return
        total = sum(probs.values())
        if abs(total - 1.0) > _PROB_SUM_TOL:
            raise InvalidRecordError(
                f"record {self.record_id!r}: class probabilities sum to {total}"
            )
        top_label = max(probs, key=probs.get)
        if top_label != self.predicted_label:
            raise InvalidRecordError(
                f"record {self.record_id!r}: argmax {top_label!r} does not match "
                f"predicted label {self.predicted_label!r}"
            )
        if abs(probs[top_label] - self.winning_confidence) > _PROB_MAX_TOL:
            raise InvalidRecordError(
                f"record {self.record_id!r}: max probability {probs[top_label]} "
                f"does not match winning confidence {self.winning_confidence}"
            )


def read_confidence_jsonl(path) -> tuple[list[ConfidenceRecord], int]:
    """Read line-delimited JSON records with keys id/label/confidence[/probs].

    Malformed lines (bad JSON, missing keys, invalid values) are skipped and
    counted; the count belongs in any report built from this file.
    """
    records: list[ConfidenceRecord] = []
    malformed = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                records.append(
                    ConfidenceRecord(
                        record_id=str(obj["id"]),
                        predicted_label=str(obj["label"]),
                        winning_confidence=float(obj["confidence"]),
                        class_probabilities=(
                            {str(k): float(v) for k, v in obj["probs"].items()}
                            if obj.get("probs") is not None
                            else None
                        ),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError,
                    InvalidRecordError):
                malformed += 1
                logger.debug("skipping malformed line %d of %s", line_no, path)
    return records, malformed


# ---------------------------------------------------------------------------
# Baseline profile
# ---------------------------------------------------------------------------

@dataclass
class BaselineProfile:
    """Persisted empirical confidence distributions from a trusted period."""

    winning_confidences: np.ndarray
    per_label_confidences: dict[str, np.ndarray]
    label_counts: dict[str, int]
    total: int
    created_from: str = ""

    def to_json_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "baseline_profile",
            "created_from": self.created_from,
            "total": self.total,
            "label_counts": dict(sorted(self.label_counts.items())),
            "winning_confidences": [float(v) for v in self.winning_confidences],
            "per_label_confidences": {
                label: [float(v) for v in values]
                for label, values in sorted(self.per_label_confidences.items())
            },
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "BaselineProfile":
        if payload.get("kind") != "baseline_profile":
            raise InvalidParameterError("not a baseline profile document")
        if payload.get("format_version") != FORMAT_VERSION:
            raise InvalidParameterError(
                f"unsupported format version {payload.get('format_version')!r}"
            )
        return cls(
            winning_confidences=np.asarray(
                payload["winning_confidences"], dtype=np.float64
            ),
            per_label_confidences={
                k: np.asarray(v, dtype=np.float64)
                for k, v in payload["per_label_confidences"].items()
            },
            label_counts={k: int(v) for k, v in payload["label_counts"].items()},
            total=int(payload["total"]),
            created_from=payload.get("created_from", ""),
        )

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"
        )

    @classmethod
    def load(cls, path) -> "BaselineProfile":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def build_baseline(
    records: list[ConfidenceRecord], created_from: str = ""
) -> BaselineProfile:
    """Build the empirical baseline; labels are discovered from the records."""
    if len(records) < MIN_BASELINE_RECORDS:
        raise InsufficientDataError(
            f"baseline needs at least {MIN_BASELINE_RECORDS} records, "
            f"got {len(records)}"
        )
    labels = np.array([r.predicted_label for r in records])
    confs = np.array([r.winning_confidence for r in records], dtype=np.float64)
    return build_baseline_arrays(labels, confs, created_from)


def build_baseline_arrays(
    labels: np.ndarray, confidences: np.ndarray, created_from: str = ""
) -> BaselineProfile:
    """Array fast path used by the simulation lab (same semantics)."""
    labels = np.asarray(labels)
    confidences = np.asarray(confidences, dtype=np.float64)
    if labels.size != confidences.size:
        raise InvalidParameterError("labels and confidences must align")
    if labels.size < MIN_BASELINE_RECORDS:
        raise InsufficientDataError(
            f"baseline needs at least {MIN_BASELINE_RECORDS} records, "
            f"got {labels.size}"
        )
    per_label: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for label in np.unique(labels):
        mask = labels == label
        per_label[str(label)] = confidences[mask].copy()
        counts[str(label)] = int(mask.sum())
    return BaselineProfile(
        winning_confidences=confidences.copy(),
        per_label_confidences=per_label,
        label_counts=counts,
        total=int(labels.size),
        created_from=created_from,
    )


# ---------------------------------------------------------------------------
# Batch audit
# ---------------------------------------------------------------------------

class AuditMode(str, enum.Enum):
    LABEL_AGNOSTIC = "label_agnostic"
    PER_LABEL = "per_label"
    BOTH = "both"


@dataclass(frozen=True)
class LabelResult:
    """Per-auditor outcome inside a report."""

    test: TestResult | None
    alert: bool
    skipped: bool = False
    novel: bool = False
    baseline_n: int = 0
    production_n: int = 0

    def to_json_dict(self) -> dict:
        return {
            "statistic": None if self.test is None else float(self.test.statistic),
            "p_value": None if self.test is None else self.test.p_value,
            "alert": self.alert,
            "skipped": self.skipped,
            "novel": self.novel,
            "baseline_n": self.baseline_n,
            "production_n": self.production_n,
        }


@dataclass
class AuditReport:
    """Outcome of one batch audit."""

    test_kind: TestKind
    alpha: float
    mode: AuditMode
    production_size: int
    label_agnostic: LabelResult | None
    per_label: dict[str, LabelResult]
    drift_alert: bool
    malformed_lines: int = 0
    notes: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "audit_report",
            "test_kind": self.test_kind.value,
            "alpha": self.alpha,
            "mode": self.mode.value,
            "production_size": self.production_size,
            "drift_alert": self.drift_alert,
            "malformed_lines": self.malformed_lines,
            "label_agnostic": (
                None if self.label_agnostic is None
                else self.label_agnostic.to_json_dict()
            ),
            "per_label": {
                label: result.to_json_dict()
                for label, result in sorted(self.per_label.items())
            },
            "notes": list(self.notes),
        }

    def to_csv_rows(self) -> list[list[str]]:
        """Flat rows: header, one row per tested label, one ALL row."""
        rows = [
            ["auditor", "statistic", "p_value", "alert", "skipped", "novel",
             "baseline_n", "production_n"]
        ]

        def fmt(result: LabelResult, name: str) -> list[str]:
            stat = "" if result.test is None else repr(float(result.test.statistic))
            pv = (
                ""
                if result.test is None or result.test.p_value is None
                else repr(float(result.test.p_value))
            )
            return [
                name, stat, pv,
                str(int(result.alert)), str(int(result.skipped)),
                str(int(result.novel)),
                str(result.baseline_n), str(result.production_n),
            ]

        for label, result in sorted(self.per_label.items()):
            rows.append(fmt(result, label))
        if self.label_agnostic is not None:
            rows.append(fmt(self.label_agnostic, "ALL"))
        return rows


def audit_batch(
    profile: BaselineProfile,
    production: list[ConfidenceRecord],
    test_kind: TestKind = DEFAULT_TEST_KIND,
    alpha: float = DEFAULT_ALPHA,
    mode: AuditMode = AuditMode.BOTH,
    malformed_lines: int = 0,
) -> AuditReport:
    """Compare production confidences to the baseline; alert on significance."""
    labels = np.array([r.predicted_label for r in production])
    confs = np.array([r.winning_confidence for r in production], dtype=np.float64)
    return audit_arrays(
        profile, labels, confs, test_kind=test_kind, alpha=alpha, mode=mode,
        malformed_lines=malformed_lines,
    )


def audit_arrays(
    profile: BaselineProfile,
    labels: np.ndarray,
    confidences: np.ndarray,
    test_kind: TestKind = DEFAULT_TEST_KIND,
    alpha: float = DEFAULT_ALPHA,
    mode: AuditMode = AuditMode.BOTH,
    malformed_lines: int = 0,
) -> AuditReport:
    """Array fast path behind ``audit_batch`` (identical decision logic)."""
    test_kind = TestKind(test_kind)
    mode = AuditMode(mode)
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError("alpha must be in (0, 1)")
    labels = np.asarray(labels)
    confidences = np.asarray(confidences, dtype=np.float64)
    if labels.size != confidences.size:
        raise InvalidParameterError("labels and confidences must align")
    if labels.size < MIN_PRODUCTION_RECORDS:
        raise InsufficientDataError(
            f"production batch needs at least {MIN_PRODUCTION_RECORDS} records, "
            f"got {labels.size}"
        )

    label_agnostic: LabelResult | None = None
    per_label: dict[str, LabelResult] = {}

    if mode in (AuditMode.LABEL_AGNOSTIC, AuditMode.BOTH):
        test = two_sample_test(profile.winning_confidences, confidences, test_kind)
        alert = test.p_value is not None and test.p_value < alpha
        label_agnostic = LabelResult(
            test=test,
            alert=alert,
            baseline_n=profile.total,
            production_n=int(confidences.size),
        )

    if mode in (AuditMode.PER_LABEL, AuditMode.BOTH):
        prod_labels = [str(v) for v in np.unique(labels)]
        for label in sorted(set(prod_labels) | set(profile.per_label_confidences)):
            base = profile.per_label_confidences.get(label)
            prod_vals = confidences[labels == label]
            if base is None:
                # production label never seen in the baseline
                per_label[label] = LabelResult(
                    test=None, alert=True, novel=True,
                    baseline_n=0, production_n=int(prod_vals.size),
                )
                continue
            if (
                prod_vals.size < MIN_PER_LABEL_RECORDS
                or base.size < MIN_PER_LABEL_RECORDS
            ):
                per_label[label] = LabelResult(
                    test=None, alert=False, skipped=True,
                    baseline_n=int(base.size), production_n=int(prod_vals.size),
                )
                continue
            test = two_sample_test(base, prod_vals, test_kind)
            alert = test.p_value is not None and test.p_value < alpha
            per_label[label] = LabelResult(
                test=test, alert=alert,
                baseline_n=int(base.size), production_n=int(prod_vals.size),
            )

    if mode is AuditMode.LABEL_AGNOSTIC:
        drift_alert = bool(label_agnostic.alert)
    elif mode is AuditMode.PER_LABEL:
        drift_alert = any(r.alert for r in per_label.values())
    else:
        drift_alert = bool(label_agnostic.alert) or any(
            r.alert for r in per_label.values()
        )

    return AuditReport(
        test_kind=test_kind,
        alpha=alpha,
        mode=mode,
        production_size=int(confidences.size),
        label_agnostic=label_agnostic,
        per_label=per_label,
        drift_alert=drift_alert,
        malformed_lines=malformed_lines,
        notes=[
            "per-label p-values are reported raw, with no multiple-comparison "
            "correction; apply one downstream if needed"
        ],
    )


# ---------------------------------------------------------------------------
# Streaming monitor
# ---------------------------------------------------------------------------

class StreamMonitor:
    """Feeds winning confidences of incoming records into a change detector.

    The detector is self-starting on the stream; the baseline profile only
    provides reporting context.  Invalid records raise and leave the detector
    untouched, so a caller can log and continue.
    """

    def __init__(self, profile: BaselineProfile, table: ThresholdTable):
        self.profile = profile
        self.detector = DetectorState(table)
        self.rejected = 0

    @property
    def t(self) -> int:
        return self.detector.t

    def push_record(self, record: ConfidenceRecord) -> Detection | None:
        if not 0.0 <= record.winning_confidence <= 1.0:
            self.rejected += 1
            raise InvalidRecordError(
                f"record {record.record_id!r}: confidence "
                f"{record.winning_confidence} outside [0, 1]"
            )
        return self.detector.push(record.winning_confidence)

    def push_confidence(self, value: float) -> Detection | None:
        if not 0.0 <= value <= 1.0:
            self.rejected += 1
            raise InvalidRecordError(f"confidence {value} outside [0, 1]")
        return self.detector.push(value)


def monitor_stream(profile: BaselineProfile, table: ThresholdTable) -> StreamMonitor:
    return StreamMonitor(profile, table)
