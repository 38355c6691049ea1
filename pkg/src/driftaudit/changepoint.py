"""Distribution-free sequential change-point monitoring (CPM).

A detector watches a univariate stream; at each check time t it maximizes a
standardized two-sample statistic over every prefix/suffix split of x_1..x_t
and raises a change alert when that maximum exceeds a calibrated threshold
h_t.  Thresholds are calibrated by Monte Carlo so that the false-positive
rate stays at a fixed alpha per check, conditional on no earlier alert.

Calibration keeps a constant-size population of null streams: at each check
the (1 - alpha) quantile of the split maxima becomes h_t, streams above it
are dropped, and the freed slots are refilled with clones of surviving
streams (which keep their own future noise).  The population therefore
tracks the conditional distribution given survival, without the geometric
die-off that a remove-only scheme suffers, and the procedure stays
deterministic for a fixed (seed, replications) regardless of worker count.

Rank-based kinds (CvM, KS, Lepage) are exactly distribution-free, so their
null streams are Uniform(0,1); the Student kind is calibrated on Gaussian
streams and is only approximately distribution-free.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _split_kernels as _k
from .errors import (
    CalibrationError,
    DetectorStateError,
    InsufficientDataError,
    InvalidParameterError,
)
from .stat_tests import TestKind

logger = logging.getLogger(__name__)

FORMAT_VERSION = "1"
MIN_SEGMENT = 2
DEFAULT_BURN_IN = 10

_KIND_CODES = {
    TestKind.STUDENT_T: _k.KIND_STUDENT,
    TestKind.KOLMOGOROV_SMIRNOV: _k.KIND_KS,
    TestKind.CRAMER_VON_MISES: _k.KIND_CVM,
    TestKind.LEPAGE: _k.KIND_LEPAGE,
}

CPM_KINDS = tuple(_KIND_CODES)


def _kind_code(kind: TestKind) -> int:
    kind = TestKind(kind)
    if kind not in _KIND_CODES:
        raise InvalidParameterError(
            f"{kind.value} is not a supported change-point statistic; "
            f"choose one of {[k.value for k in CPM_KINDS]}"
        )
    return _KIND_CODES[kind]


def max_split_statistic(
    observations, kind: TestKind, min_segment: int = MIN_SEGMENT
) -> tuple[float, int]:
    """Maximum standardized split statistic and its argmax split k.

    Every split with at least ``min_segment`` observations per side is
    evaluated; ties resolve to the smallest k.  Student uses the absolute
    standardized T; CvM, KS and Lepage are used directly.
    """
    x = np.ascontiguousarray(observations, dtype=np.float64)
    if x.ndim != 1:
        x = x.ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("observations contain non-finite values")
    if min_segment < 1:
        raise InvalidParameterError("min_segment must be >= 1")
    if x.size < 2 * min_segment:
        raise InsufficientDataError(
            f"need at least {2 * min_segment} observations, got {x.size}"
        )
    d, k = _k.split_scan(x, min_segment, _kind_code(kind))
    return float(d), int(k)


class DetectorStatus(enum.Enum):
    MONITORING = "monitoring"
    CHANGE_DETECTED = "change_detected"


@dataclass(frozen=True)
class Detection:
    """A change alert: raised at time t_detect, change estimated at k_hat."""

    t_detect: int
    k_hat: int
    statistic: float


@dataclass
class ThresholdTable:
    """Calibrated threshold sequence h_t for one statistic kind.

    Checks happen at t = burn_in, burn_in + stride, ...; ``thresholds[j]``
    applies to the j-th check.  Beyond t_max the last threshold is reused
    (documented approximation; calibrating unbounded horizons is impossible).
    """

    test_kind: TestKind
    alpha: float
    burn_in: int
    t_max: int
    thresholds: np.ndarray
    calibration_replications: int
    seed: int
    stride: int = 1
    null_model: str = "uniform"
    distribution_free: bool = True

    def __post_init__(self) -> None:
        self.test_kind = TestKind(self.test_kind)
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        if not 0.0 < self.alpha < 1.0:
            raise InvalidParameterError("alpha must be in (0, 1)")
        if self.burn_in < 4:
            raise InvalidParameterError("burn_in must be >= 4")
        if self.stride < 1:
            raise InvalidParameterError("stride must be >= 1")
        if self.t_max <= self.burn_in:
            raise InvalidParameterError("t_max must exceed burn_in")
        expected = (self.t_max - self.burn_in) // self.stride + 1
        if self.thresholds.size != expected:
            raise InvalidParameterError(
                f"threshold list has {self.thresholds.size} entries, "
                f"expected {expected}"
            )
        if not np.all(np.isfinite(self.thresholds)) or np.any(self.thresholds <= 0):
            raise InvalidParameterError("thresholds must be finite and positive")

    def check_times(self) -> range:
        return range(self.burn_in, self.t_max + 1, self.stride)

    def is_check_time(self, t: int) -> bool:
        return t >= self.burn_in and (t - self.burn_in) % self.stride == 0

    def threshold_at(self, t: int) -> float:
        """Threshold for a check at time t (last value reused past t_max)."""
        j = (t - self.burn_in) // self.stride
        return float(self.thresholds[min(j, self.thresholds.size - 1)])

    def to_json_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "threshold_table",
            "test_kind": self.test_kind.value,
            "alpha": self.alpha,
            "burn_in": self.burn_in,
            "t_max": self.t_max,
            "stride": self.stride,
            "thresholds": [float(h) for h in self.thresholds],
            "calibration_replications": self.calibration_replications,
            "seed": self.seed,
            "null_model": self.null_model,
            "distribution_free": self.distribution_free,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ThresholdTable":
        if payload.get("kind") != "threshold_table":
            raise InvalidParameterError("not a threshold table document")
        if payload.get("format_version") != FORMAT_VERSION:
            raise InvalidParameterError(
                f"unsupported format version {payload.get('format_version')!r}"
            )
        return cls(
            test_kind=TestKind(payload["test_kind"]),
            alpha=payload["alpha"],
            burn_in=payload["burn_in"],
            t_max=payload["t_max"],
            thresholds=np.asarray(payload["thresholds"], dtype=np.float64),
            calibration_replications=payload["calibration_replications"],
            seed=payload["seed"],
            stride=payload.get("stride", 1),
            null_model=payload["null_model"],
            distribution_free=payload["distribution_free"],
        )

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"
        )

    @classmethod
    def load(cls, path) -> "ThresholdTable":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def cache_filename(
    kind: TestKind,
    alpha: float,
    t_max: int,
    replications: int,
    seed: int,
    burn_in: int,
    stride: int,
) -> str:
    return (
        f"cpm_{TestKind(kind).value}_a{alpha:g}_t{t_max}_r{replications}"
        f"_s{seed}_b{burn_in}_k{stride}.json"
    )


def calibrate_thresholds(
    kind: TestKind,
    alpha: float,
    t_max: int,
    replications: int,
    seed: int,
    burn_in: int = DEFAULT_BURN_IN,
    stride: int = 1,
    min_segment: int = MIN_SEGMENT,
    cache_dir: str | Path | None = None,
) -> ThresholdTable:
    """Monte-Carlo calibration of the conditional threshold sequence.

    Deterministic for a fixed (seed, replications): stream noise and the
    survivor resampling draw from two fixed child seeds, and the per-check
    kernel pass writes one slot per stream, so worker count cannot change
    the result.
    """
    kind = TestKind(kind)
    code = _kind_code(kind)
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError("alpha must be in (0, 1)")
    if replications < 1000:
        raise InvalidParameterError("replications must be >= 1000")
    if t_max <= burn_in:
        raise InvalidParameterError("t_max must exceed burn_in")
    if burn_in < max(4, 2 * min_segment):
        raise InvalidParameterError("burn_in too small for the split scan")

    cache_path = None
    if cache_dir is not None:
        cache_path = Path(cache_dir) / cache_filename(
            kind, alpha, t_max, replications, seed, burn_in, stride
        )
        if cache_path.exists():
            logger.info("reusing cached threshold table %s", cache_path)
            return ThresholdTable.load(cache_path)

    gaussian = kind is TestKind.STUDENT_T
    ss = np.random.SeedSequence(seed)
    noise_seed, resample_seed = ss.spawn(2)
    rng_noise = np.random.default_rng(noise_seed)
    rng_resample = np.random.default_rng(resample_seed)
    if gaussian:
        streams = rng_noise.standard_normal((replications, t_max))
    else:
        streams = rng_noise.random((replications, t_max))

    d = np.empty(replications, dtype=np.float64)
    k_hat = np.empty(replications, dtype=np.int64)
    thresholds = np.empty((t_max - burn_in) // stride + 1, dtype=np.float64)
    for j, t in enumerate(range(burn_in, t_max + 1, stride)):
        _k.split_scan_batch(streams, t, min_segment, code, d, k_hat)
        h = float(np.quantile(d, 1.0 - alpha))
        exceeded = np.flatnonzero(d > h)
        if exceeded.size >= replications:
            raise CalibrationError(
                f"all null streams exceeded the threshold at t={t}; "
                "increase replications"
            )
        if exceeded.size:
            survivors = np.flatnonzero(d <= h)
            donors = rng_resample.choice(survivors, size=exceeded.size)
            streams[exceeded, :t] = streams[donors, :t]
        thresholds[j] = h

    table = ThresholdTable(
        test_kind=kind,
        alpha=alpha,
        burn_in=burn_in,
        t_max=t_max,
        thresholds=thresholds,
        calibration_replications=replications,
        seed=seed,
        stride=stride,
        null_model="gaussian" if gaussian else "uniform",
        distribution_free=not gaussian,
    )
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        table.save(cache_path)
        logger.info("cached threshold table at %s", cache_path)
    return table


class DetectorState:
    """Streaming detector over one threshold table; one alert per lifetime."""

    def __init__(self, table: ThresholdTable, min_segment: int = MIN_SEGMENT):
        self.table = table
        self.min_segment = min_segment
        self._buf = np.empty(1024, dtype=np.float64)
        self._t = 0
        self._status = DetectorStatus.MONITORING
        self._detection: Detection | None = None

    @property
    def t(self) -> int:
        return self._t

    @property
    def status(self) -> DetectorStatus:
        return self._status

    @property
    def detection(self) -> Detection | None:
        return self._detection

    @property
    def observations(self) -> np.ndarray:
        return self._buf[: self._t].copy()

    def push(self, x: float) -> Detection | None:
        """Append one observation; returns a Detection when change is called."""
        if self._status is not DetectorStatus.MONITORING:
            raise DetectorStateError("detector already reported a change")
        x = float(x)
        if not math.isfinite(x):
            raise ValueError("observation must be finite")
        if self._t == self._buf.size:
            grown = np.empty(self._buf.size * 2, dtype=np.float64)
            grown[: self._t] = self._buf[: self._t]
            self._buf = grown
        self._buf[self._t] = x
        self._t += 1
        t = self._t
        if not self.table.is_check_time(t):
            return None
        d, k = _k.split_scan(
            self._buf[:t], self.min_segment, _kind_code(self.table.test_kind)
        )
        if d > self.table.threshold_at(t):
            self._status = DetectorStatus.CHANGE_DETECTED
            self._detection = Detection(t_detect=t, k_hat=int(k), statistic=float(d))
            return self._detection
        return None

    def extend(self, values) -> Detection | None:
        """Push values until exhausted or a change is detected."""
        for v in values:
            det = self.push(v)
            if det is not None:
                return det
        return None


# ---------------------------------------------------------------------------
# Null validation helpers (used by tests and the calibrate CLI)
# ---------------------------------------------------------------------------

def conditional_exceedance_rates(
    table: ThresholdTable, streams: int, seed: int
) -> np.ndarray:
    """Fresh-null conditional exceedance rate at each check time.

    Uses the same constant-population scheme as calibration so the rate at
    late checks is still estimated from ``streams`` particles.
    """
    gaussian = table.null_model == "gaussian"
    ss = np.random.SeedSequence(seed)
    noise_seed, resample_seed = ss.spawn(2)
    rng_noise = np.random.default_rng(noise_seed)
    rng_resample = np.random.default_rng(resample_seed)
    if gaussian:
        x = rng_noise.standard_normal((streams, table.t_max))
    else:
        x = rng_noise.random((streams, table.t_max))
    d = np.empty(streams, dtype=np.float64)
    k_hat = np.empty(streams, dtype=np.int64)
    code = _kind_code(table.test_kind)
    rates = np.empty(table.thresholds.size, dtype=np.float64)
    for j, t in enumerate(table.check_times()):
        _k.split_scan_batch(x, t, MIN_SEGMENT, code, d, k_hat)
        exceeded = np.flatnonzero(d > table.thresholds[j])
        rates[j] = exceeded.size / streams
        if exceeded.size == streams:
            rates[j + 1 :] = np.nan
            break
        if exceeded.size:
            survivors = np.flatnonzero(d <= table.thresholds[j])
            donors = rng_resample.choice(survivors, size=exceeded.size)
            x[exceeded, :t] = x[donors, :t]
    return rates


def null_detection_times(table: ThresholdTable, streams: int, seed: int) -> np.ndarray:
    """First alert time on independent fresh null streams (-1 when none)."""
    gaussian = table.null_model == "gaussian"
    rng = np.random.default_rng(seed)
    if gaussian:
        x = rng.standard_normal((streams, table.t_max))
    else:
        x = rng.random((streams, table.t_max))
    out = np.empty(streams, dtype=np.int64)
    _k.first_exceedance_batch(
        x,
        np.asarray(table.thresholds, dtype=np.float64),
        table.burn_in,
        table.stride,
        MIN_SEGMENT,
        _kind_code(table.test_kind),
        out,
    )
    return out
