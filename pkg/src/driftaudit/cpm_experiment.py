"""Ramped-drift sequence experiment: sequential monitors versus naive T-tests.

The protocol builds long observation sequences from a clean confidence pool
and a drift confidence pool: a clean head of ``clean_samples`` samples of
size n, then a ramp in which sample ``clean_samples + j`` carries exactly j
drift instances at random positions, then pure drift.  Sequential
change-point monitors and two naive fixed-critical-value T-test detectors
consume identical sequences; replications differ only by seed.

The two naive comparators:

* pairs: test sample 1 against sample t at every t with the classical
  critical value.  Repeated testing inflates the false-positive rate badly.
* splits: test every prefix/suffix split (grouped by sample) at every t and
  declare drift only when every split rejects at once.  That conjunctive
  retrospective rule almost never false-alarms but detects very late.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import stdtrit

from .changepoint import DetectorState, ThresholdTable
from .errors import InsufficientDataError, InvalidParameterError
from .simlab import ExperimentSetup, predict_confidences

CPM_METHOD_PREFIX = "cpm_"
SPLITS_T = "splits_t"
PAIRS_T = "pairs_t"

DEFAULT_SPLITS_ALPHA = 0.005
DEFAULT_PAIRS_ALPHA = 0.05


@dataclass(frozen=True)
class SequenceProtocol:
    sample_size: int = 20
    clean_samples: int = 50
    ramp_samples: int = 20
    total_samples: int = 120
    replications: int = 300
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sample_size < 2:
            raise InvalidParameterError("sample_size must be >= 2")
        if self.ramp_samples > self.sample_size:
            raise InvalidParameterError(
                "ramp_samples cannot exceed sample_size (sample 50+j holds "
                "exactly j drift instances)"
            )
        if self.total_samples <= self.clean_samples + self.ramp_samples:
            raise InvalidParameterError("total_samples too small for the ramp")
        if self.replications < 1:
            raise InvalidParameterError("replications must be >= 1")

    @property
    def total_observations(self) -> int:
        return self.total_samples * self.sample_size

    @property
    def drift_time(self) -> int:
        """Observation index of the last pre-drift value."""
        return self.clean_samples * self.sample_size


def build_sequence(
    clean_pool: np.ndarray,
    drift_pool: np.ndarray,
    protocol: SequenceProtocol,
    replication_seed: int,
) -> np.ndarray:
    """One observation sequence; draws are with replacement."""
    clean_pool = np.asarray(clean_pool, dtype=np.float64)
    drift_pool = np.asarray(drift_pool, dtype=np.float64)
    if clean_pool.size == 0 or drift_pool.size == 0:
        raise InsufficientDataError("both confidence pools must be non-empty")
    rng = np.random.default_rng(replication_seed)
    n = protocol.sample_size
    out = np.empty(protocol.total_observations, dtype=np.float64)
    for s in range(1, protocol.total_samples + 1):
        if s <= protocol.clean_samples:
            sample = rng.choice(clean_pool, size=n, replace=True)
        elif s <= protocol.clean_samples + protocol.ramp_samples:
            j = s - protocol.clean_samples
            sample = np.empty(n, dtype=np.float64)
            sample[:j] = rng.choice(drift_pool, size=j, replace=True)
            sample[j:] = rng.choice(clean_pool, size=n - j, replace=True)
            rng.shuffle(sample)  # drift instances at random positions
        else:
            sample = rng.choice(drift_pool, size=n, replace=True)
        out[(s - 1) * n : s * n] = sample
    return out


@dataclass(frozen=True)
class ReplicationOutcome:
    method: str
    detected: bool
    t_detect_sample: int | None = None
    k_hat_obs: int | None = None

    def __post_init__(self) -> None:
        if self.detected != (self.t_detect_sample is not None):
            raise InvalidParameterError("detected must match t_detect presence")

    def k_hat_sample(self, protocol: SequenceProtocol) -> int | None:
        if self.k_hat_obs is None:
            return None
        return math.ceil(self.k_hat_obs / protocol.sample_size)


def _sample_moments(
    sequence: np.ndarray, protocol: SequenceProtocol
) -> tuple[np.ndarray, np.ndarray]:
    grouped = sequence.reshape(protocol.total_samples, protocol.sample_size)
    return np.cumsum(grouped.sum(axis=1)), np.cumsum((grouped ** 2).sum(axis=1))


def _pooled_t(s1, q1, n1, s2, q2, n2):
    """Vectorized pooled-variance T; zero variance gives 0 or +/-inf."""
    m1 = s1 / n1
    m2 = s2 / n2
    ss = np.maximum(q1 - n1 * m1 * m1, 0.0) + np.maximum(q2 - n2 * m2 * m2, 0.0)
    pooled = ss / (n1 + n2 - 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (m1 - m2) / np.sqrt(pooled * (1.0 / n1 + 1.0 / n2))
    degenerate = pooled <= 0.0
    if np.any(degenerate):
        t = np.where(degenerate & (m1 == m2), 0.0, t)
        t = np.where(
            degenerate & (m1 != m2), np.copysign(np.inf, np.asarray(m1 - m2)), t
        )
    return t


def splits_t_detector(
    sequence: np.ndarray,
    protocol: SequenceProtocol,
    alpha: float = DEFAULT_SPLITS_ALPHA,
) -> ReplicationOutcome:
    """Retrospective all-splits T-test at classical critical values.

    At each sample t every split k = 1..t-1 compares observations of samples
    1..k with those of k+1..t; drift is declared at the first t where every
    split rejects, and the reported change point is the strongest split.
    """
    csum, csq = _sample_moments(sequence, protocol)
    n = protocol.sample_size
    for t in range(2, protocol.total_samples + 1):
        k = np.arange(1, t)
        n1 = k * n
        n2 = t * n - n1
        s1, q1 = csum[k - 1], csq[k - 1]
        t_stats = _pooled_t(s1, q1, n1, csum[t - 1] - s1, csq[t - 1] - q1, n2)
        crit = float(stdtrit(t * n - 2, 1.0 - alpha / 2.0))
        abs_t = np.abs(t_stats)
        if np.all(abs_t > crit):
            k_best = int(k[np.argmax(abs_t)])
            return ReplicationOutcome(
                method=SPLITS_T,
                detected=True,
                t_detect_sample=t,
                k_hat_obs=k_best * n,
            )
    return ReplicationOutcome(method=SPLITS_T, detected=False)


def pairs_t_detector(
    sequence: np.ndarray,
    protocol: SequenceProtocol,
    alpha: float = DEFAULT_PAIRS_ALPHA,
) -> ReplicationOutcome:
    """Sample-1-versus-sample-t T-test at the classical critical value."""
    csum, csq = _sample_moments(sequence, protocol)
    n = protocol.sample_size
    s1 = csum[0]
    q1 = csq[0]
    crit = float(stdtrit(2 * n - 2, 1.0 - alpha / 2.0))
    for t in range(2, protocol.total_samples + 1):
        st = csum[t - 1] - csum[t - 2]
        qt = csq[t - 1] - csq[t - 2]
        t_stat = float(_pooled_t(s1, q1, n, st, qt, n))
        if abs(t_stat) > crit:
            return ReplicationOutcome(
                method=PAIRS_T, detected=True, t_detect_sample=t, k_hat_obs=t * n
            )
    return ReplicationOutcome(method=PAIRS_T, detected=False)


def cpm_detector(
    sequence: np.ndarray,
    protocol: SequenceProtocol,
    table: ThresholdTable,
    method: str,
) -> ReplicationOutcome:
    detector = DetectorState(table)
    detection = detector.extend(sequence)
    if detection is None:
        return ReplicationOutcome(method=method, detected=False)
    return ReplicationOutcome(
        method=method,
        detected=True,
        t_detect_sample=math.ceil(detection.t_detect / protocol.sample_size),
        k_hat_obs=detection.k_hat,
    )


def run_replications(
    clean_pool: np.ndarray,
    drift_pool: np.ndarray,
    protocol: SequenceProtocol,
    cpm_tables: dict[str, ThresholdTable],
    splits_alpha: float = DEFAULT_SPLITS_ALPHA,
    pairs_alpha: float = DEFAULT_PAIRS_ALPHA,
) -> dict[str, list[ReplicationOutcome]]:
    """All methods consume byte-identical sequences within a replication."""
    methods = [CPM_METHOD_PREFIX + k for k in cpm_tables] + [SPLITS_T, PAIRS_T]
    outcomes: dict[str, list[ReplicationOutcome]] = {m: [] for m in methods}
    for rep in range(protocol.replications):
        rep_seed = int(np.random.SeedSequence((protocol.seed, rep)).generate_state(1)[0])
        sequence = build_sequence(clean_pool, drift_pool, protocol, rep_seed)
        for kind_name, table in cpm_tables.items():
            outcomes[CPM_METHOD_PREFIX + kind_name].append(
                cpm_detector(sequence, protocol, table, CPM_METHOD_PREFIX + kind_name)
            )
        outcomes[SPLITS_T].append(splits_t_detector(sequence, protocol, splits_alpha))
        outcomes[PAIRS_T].append(pairs_t_detector(sequence, protocol, pairs_alpha))
    return outcomes


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

@dataclass
class MethodSummary:
    method: str
    replications: int
    detections: int
    pr_determined_k_before_drift: float
    pr_detection_before_drift: float
    median_detection_delay: float | None
    histogram: dict[int, int] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "replications": self.replications,
            "detections": self.detections,
            "pr_determined_k_before_drift": self.pr_determined_k_before_drift,
            "pr_detection_before_drift": self.pr_detection_before_drift,
            "median_detection_delay": self.median_detection_delay,
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
        }


def summarize(
    outcomes: dict[str, list[ReplicationOutcome]], protocol: SequenceProtocol
) -> dict[str, MethodSummary]:
    """Per-method false-positive probabilities and detection-time summaries.

    A detection is a false positive when it lands before the first drift
    sample; the delay of a true detection is its sample index minus the last
    clean sample index.
    """
    if not outcomes or any(len(v) == 0 for v in outcomes.values()):
        raise InvalidParameterError("no outcomes to summarize")
    boundary = protocol.clean_samples + 1
    result: dict[str, MethodSummary] = {}
    for method, runs in outcomes.items():
        detections = [o for o in runs if o.detected]
        k_before = sum(
            1
            for o in detections
            if o.k_hat_sample(protocol) is not None
            and o.k_hat_sample(protocol) < boundary
        )
        t_before = sum(1 for o in detections if o.t_detect_sample < boundary)
        delays = [
            o.t_detect_sample - protocol.clean_samples
            for o in detections
            if o.t_detect_sample >= boundary
        ]
        histogram: dict[int, int] = {}
        for o in detections:
            histogram[o.t_detect_sample] = histogram.get(o.t_detect_sample, 0) + 1
        result[method] = MethodSummary(
            method=method,
            replications=len(runs),
            detections=len(detections),
            pr_determined_k_before_drift=k_before / len(runs),
            pr_detection_before_drift=t_before / len(runs),
            median_detection_delay=(
                float(np.median(delays)) if delays else None
            ),
            histogram=histogram,
        )
    return result


def summary_csv_rows(summaries: dict[str, MethodSummary]) -> list[list[str]]:
    rows = [
        [
            "method",
            "type",
            "pr_determined_k_before_drift",
            "pr_detection_before_drift",
            "detections",
            "median_detection_delay",
        ]
    ]
    for method in sorted(summaries):
        s = summaries[method]
        kind = "cpm" if method.startswith(CPM_METHOD_PREFIX) else "non-seq"
        rows.append(
            [
                method,
                kind,
                repr(round(s.pr_determined_k_before_drift, 6)),
                repr(round(s.pr_detection_before_drift, 6)),
                str(s.detections),
                "" if s.median_detection_delay is None
                else repr(float(s.median_detection_delay)),
            ]
        )
    return rows


def histogram_csv_rows(
    summaries: dict[str, MethodSummary], protocol: SequenceProtocol
) -> list[list[str]]:
    methods = sorted(summaries)
    rows = [["sample_index"] + methods]
    for t in range(1, protocol.total_samples + 1):
        rows.append(
            [str(t)] + [str(summaries[m].histogram.get(t, 0)) for m in methods]
        )
    return rows


# ---------------------------------------------------------------------------
# Confidence pools from the simulation lab
# ---------------------------------------------------------------------------

def confidence_pools(setup: ExperimentSetup) -> tuple[np.ndarray, np.ndarray]:
    """(clean confidences, drift confidences) as seen by the trained model."""
    _, clean_conf = predict_confidences(setup.model, setup.clean.features)
    _, drift_conf = predict_confidences(setup.model, setup.drift_pool)
    return clean_conf, drift_conf
