"""Outlier detection over per-class prediction counts.

These are the baseline methods a label-distribution auditor would use: Tukey
fences at two multipliers, the modified z-score, the Hampel identifier, and a
one-dimensional DBSCAN.  They are implemented to measure (and regression-test)
their failure mode: on naturally imbalanced class counts they flag extreme
classes even when nothing drifted, so their false-positive rate is far too
high to monitor with.
"""

from __future__ import annotations

import csv
import enum
import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, InvalidParameterError

MAD_CONSISTENCY = 1.4826       # MAD to sigma under normality
MEAN_AD_CONSISTENCY = 1.2533   # mean absolute deviation to sigma fallback
MODIFIED_Z_NUMERATOR = 0.6745


class OutlierMethod(str, enum.Enum):
    IQR_INNER = "iqr_inner"
    IQR_OUTER = "iqr_outer"
    MODIFIED_ZSCORE = "modified_zscore"
    HAMPEL = "hampel"
    DBSCAN_1D = "dbscan_1d"


@dataclass(frozen=True)
class LabelHistogram:
    """Counts of records per predicted label."""

    counts: dict[str, int]
    total: int

    def __post_init__(self) -> None:
        if self.total < 1:
            raise InvalidParameterError("histogram must contain at least one record")
        if sum(self.counts.values()) != self.total:
            raise InvalidParameterError("counts do not sum to total")
        if any(c < 0 for c in self.counts.values()):
            raise InvalidParameterError("counts must be non-negative")

    @classmethod
    def from_counts(cls, counts: dict[str, int]) -> "LabelHistogram":
        return cls(counts=dict(counts), total=sum(counts.values()))

    @classmethod
    def from_labels(cls, labels) -> "LabelHistogram":
        return cls.from_counts(Counter(str(v) for v in labels))

    @classmethod
    def from_jsonl(cls, path) -> "LabelHistogram":
        counts: Counter = Counter()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    counts[str(json.loads(line)["label"])] += 1
                except (json.JSONDecodeError, KeyError, TypeError):
                    continue
        return cls.from_counts(counts)

    @classmethod
    def from_csv(cls, path) -> "LabelHistogram":
        counts: dict[str, int] = {}
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            for row in reader:
                if not row or row[0] == "label":
                    continue
                counts[row[0]] = counts.get(row[0], 0) + int(row[1])
        return cls.from_counts(counts)


@dataclass(frozen=True)
class OutlierFlags:
    method: OutlierMethod
    flagged: frozenset[str]
    parameters: dict[str, float] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "method": self.method.value,
            "flagged": sorted(self.flagged),
            "parameters": {k: float(v) for k, v in sorted(self.parameters.items())},
        }


def _ordered(h: LabelHistogram) -> tuple[list[str], np.ndarray]:
    labels = sorted(h.counts)
    return labels, np.array([h.counts[l] for l in labels], dtype=np.float64)


def iqr_outliers(h: LabelHistogram, multiplier: float = 1.5) -> OutlierFlags:
    """Flag counts outside [Q1 - multiplier*IQR, Q3 + multiplier*IQR].

    Quantiles use linear interpolation.  Multiplier 1.5 gives the inner
    fences, 3.0 the outer fences.
    """
    if multiplier <= 0:
        raise InvalidParameterError("multiplier must be positive")
    labels, counts = _ordered(h)
    if len(labels) < 4:
        raise InsufficientDataError("need at least 4 labels for quartile fences")
    q1, q3 = np.quantile(counts, [0.25, 0.75])
    iqr = q3 - q1
    lo, hi = q1 - multiplier * iqr, q3 + multiplier * iqr
    flagged = frozenset(
        l for l, c in zip(labels, counts) if c < lo or c > hi
    )
    method = OutlierMethod.IQR_INNER if multiplier <= 1.5 else OutlierMethod.IQR_OUTER
    return OutlierFlags(
        method=method, flagged=flagged,
        parameters={"multiplier": multiplier, "low": lo, "high": hi},
    )


def _robust_scale(counts: np.ndarray) -> tuple[float, float]:
    """(median, sigma-consistent robust scale); falls back to the scaled mean
    absolute deviation when the MAD is zero."""
    med = float(np.median(counts))
    mad = float(np.median(np.abs(counts - med)))
    if mad > 0:
        return med, MAD_CONSISTENCY * mad
    mean_ad = float(np.mean(np.abs(counts - med)))
    return med, MEAN_AD_CONSISTENCY * mean_ad


def modified_zscore_outliers(
    h: LabelHistogram, threshold: float = 3.5
) -> OutlierFlags:
    """Flag |0.6745 * (count - median) / MAD| > threshold (robust z-score)."""
    labels, counts = _ordered(h)
    if len(labels) < 3:
        raise InsufficientDataError("need at least 3 labels")
    med = float(np.median(counts))
    mad = float(np.median(np.abs(counts - med)))
    if mad > 0:
        scores = MODIFIED_Z_NUMERATOR * (counts - med) / mad
    else:
        mean_ad = float(np.mean(np.abs(counts - med)))
        if mean_ad == 0:
            scores = np.zeros_like(counts)
        else:
            scores = (counts - med) / (MEAN_AD_CONSISTENCY * mean_ad)
    flagged = frozenset(
        l for l, s in zip(labels, scores) if abs(s) > threshold
    )
    return OutlierFlags(
        method=OutlierMethod.MODIFIED_ZSCORE, flagged=flagged,
        parameters={"threshold": threshold, "median": med, "mad": mad},
    )


def hampel_outliers(h: LabelHistogram, k: float = 3.0) -> OutlierFlags:
    """Flag counts outside median +/- k * 1.4826 * MAD."""
    labels, counts = _ordered(h)
    if len(labels) < 3:
        raise InsufficientDataError("need at least 3 labels")
    med, scale = _robust_scale(counts)
    lo, hi = med - k * scale, med + k * scale
    flagged = frozenset(l for l, c in zip(labels, counts) if c < lo or c > hi)
    return OutlierFlags(
        method=OutlierMethod.HAMPEL, flagged=flagged,
        parameters={"k": k, "low": lo, "high": hi},
    )


def dbscan_1d_outliers(
    h: LabelHistogram, eps: float | None = None, min_pts: int = 2
) -> OutlierFlags:
    """DBSCAN over the count values (absolute-difference metric); noise points
    are the flagged labels.  Default eps is 0.1 * median count."""
    labels, counts = _ordered(h)
    if eps is None:
        eps = 0.1 * float(np.median(counts))
    if eps <= 0:
        raise InvalidParameterError("eps must be positive")
    if min_pts < 2:
        raise InvalidParameterError("min_pts must be >= 2")
    n = len(labels)
    NOISE, UNSEEN = -1, 0
    assignment = [UNSEEN] * n
    cluster = 0

    def neighbors(i: int) -> list[int]:
        return [j for j in range(n) if abs(counts[j] - counts[i]) <= eps]

    for i in range(n):
        if assignment[i] != UNSEEN:
            continue
        seeds = neighbors(i)
        if len(seeds) < min_pts:
            assignment[i] = NOISE
            continue
        cluster += 1
        assignment[i] = cluster
        queue = [j for j in seeds if j != i]
        while queue:
            j = queue.pop()
            if assignment[j] == NOISE:
                assignment[j] = cluster
            if assignment[j] != UNSEEN:
                continue
            assignment[j] = cluster
            j_neighbors = neighbors(j)
            if len(j_neighbors) >= min_pts:
                queue.extend(j_neighbors)
    flagged = frozenset(
        l for l, a in zip(labels, assignment) if a == NOISE
    )
    return OutlierFlags(
        method=OutlierMethod.DBSCAN_1D, flagged=flagged,
        parameters={"eps": float(eps), "min_pts": float(min_pts)},
    )


def check_label_distribution(h: LabelHistogram) -> list[OutlierFlags]:
    """Run every method at its default parameters, for comparison reporting."""
    return [
        iqr_outliers(h, 1.5),
        iqr_outliers(h, 3.0),
        modified_zscore_outliers(h),
        hampel_outliers(h),
        dbscan_1d_outliers(h),
    ]
