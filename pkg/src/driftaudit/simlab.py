"""Drift simulation laboratory.

Synthetic Gaussian-mixture datasets, a from-scratch multinomial logistic
classifier, drift injectors, label-ratio-preserving batch composition, and
the minimal-detectable-drift search.  Every operation is a pure function of
its inputs and a seed.

Drift kinds:

1. held_out_class      - train without one class, inject its records
2. selection_criteria  - train without the top-quantile slice of a feature,
                         inject the withheld records
3. out_of_domain       - inject draws from a different mixture
4. random_legal        - inject uniform draws inside the training envelope
5. feature_function    - inject records with one feature multiplied
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .auditor import (
    AuditMode,
    BaselineProfile,
    ConfidenceRecord,
    audit_arrays,
    build_baseline_arrays,
)
from .errors import InsufficientDataError, InvalidParameterError
from .stat_tests import TestKind


@dataclass(frozen=True)
class MixtureSpec:
    """Isotropic Gaussian mixture with one component per class."""

    num_classes: int
    dimension: int
    class_means: tuple[tuple[float, ...], ...]
    class_sigmas: tuple[float, ...]
    records_per_class: int
    seed: int

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise InvalidParameterError("need at least 2 classes")
        if self.dimension < 1:
            raise InvalidParameterError("dimension must be >= 1")
        if len(self.class_means) != self.num_classes:
            raise InvalidParameterError("one mean per class required")
        if len(self.class_sigmas) != self.num_classes:
            raise InvalidParameterError("one sigma per class required")
        if any(len(m) != self.dimension for m in self.class_means):
            raise InvalidParameterError("mean dimension mismatch")
        if any(s <= 0 for s in self.class_sigmas):
            raise InvalidParameterError("sigmas must be positive")
        if self.records_per_class < 1:
            raise InvalidParameterError("records_per_class must be >= 1")

    @classmethod
    def make(cls, means, sigmas, records_per_class, seed) -> "MixtureSpec":
        means = tuple(tuple(float(v) for v in m) for m in means)
        return cls(
            num_classes=len(means),
            dimension=len(means[0]),
            class_means=means,
            class_sigmas=tuple(float(s) for s in sigmas),
            records_per_class=int(records_per_class),
            seed=int(seed),
        )


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray  # (n, d)
    labels: np.ndarray    # (n,) original class ids
    num_classes: int
    envelope_min: np.ndarray = field(default=None)
    envelope_max: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        if self.features.shape[0] != self.labels.shape[0]:
            raise InvalidParameterError("features and labels must align")
        if self.envelope_min is None:
            object.__setattr__(self, "envelope_min", self.features.min(axis=0))
            object.__setattr__(self, "envelope_max", self.features.max(axis=0))

    @property
    def size(self) -> int:
        return int(self.labels.size)

    def subset(self, mask: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(
            features=self.features[mask],
            labels=self.labels[mask],
            num_classes=self.num_classes,
        )


def generate_dataset(spec: MixtureSpec) -> LabeledDataset:
    """records_per_class isotropic Gaussian draws per class, seeded."""
    rng = np.random.default_rng(spec.seed)
    blocks = []
    labels = []
    for k in range(spec.num_classes):
        mean = np.asarray(spec.class_means[k], dtype=np.float64)
        blocks.append(
            mean
            + spec.class_sigmas[k]
            * rng.standard_normal((spec.records_per_class, spec.dimension))
        )
        labels.append(np.full(spec.records_per_class, k, dtype=np.int64))
    return LabeledDataset(
        features=np.concatenate(blocks, axis=0),
        labels=np.concatenate(labels),
        num_classes=spec.num_classes,
    )


# ---------------------------------------------------------------------------
# Softmax classifier
# ---------------------------------------------------------------------------

@dataclass
class SoftmaxModel:
    """Multinomial logistic regression; rows map to original class ids."""

    weights: np.ndarray   # (K, d)
    biases: np.ndarray    # (K,)
    class_ids: np.ndarray  # (K,) original ids
    epochs: int
    learning_rate: float
    noise_level: float
    final_train_accuracy: float

    @property
    def num_classes(self) -> int:
        return int(self.class_ids.size)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.weights.shape[1]:
            raise InvalidParameterError(
                f"feature dimension {X.shape[1]} does not match model "
                f"dimension {self.weights.shape[1]}"
            )
        return _softmax(X @ self.weights.T + self.biases)


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_loss(
    weights: np.ndarray, biases: np.ndarray, X: np.ndarray, onehot: np.ndarray
) -> float:
    probs = _softmax(X @ weights.T + biases)
    return float(-np.sum(onehot * np.log(probs + 1e-300)) / X.shape[0])


def cross_entropy_grad(
    weights: np.ndarray, biases: np.ndarray, X: np.ndarray, onehot: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    probs = _softmax(X @ weights.T + biases)
    delta = probs - onehot
    return delta.T @ X / X.shape[0], delta.mean(axis=0)


def train_classifier(
    data: LabeledDataset,
    epochs: int = 300,
    learning_rate: float = 0.5,
    noise_level: float = 0.0,
    seed: int = 0,
) -> SoftmaxModel:
    """Full-batch gradient descent on cross-entropy, zero-initialized.

    ``noise_level`` flips that fraction of training labels to a uniformly
    chosen other class before fitting, degrading the model on purpose (the
    knob behind the accuracy-versus-detectability experiments).
    """
    class_ids = np.unique(data.labels)
    if class_ids.size < 2:
        raise InvalidParameterError("training data must contain >= 2 classes")
    if not 0.0 <= noise_level < 1.0:
        raise InvalidParameterError("noise_level must be in [0, 1)")
    index_of = {c: i for i, c in enumerate(class_ids)}
    y = np.array([index_of[c] for c in data.labels], dtype=np.int64)
    if noise_level > 0.0:
        rng = np.random.default_rng(seed)
        n_flip = int(math.floor(noise_level * y.size))
        flip = rng.choice(y.size, size=n_flip, replace=False)
        offsets = rng.integers(1, class_ids.size, size=n_flip)
        y[flip] = (y[flip] + offsets) % class_ids.size
    X = data.features
    k = class_ids.size
    onehot = np.zeros((y.size, k), dtype=np.float64)
    onehot[np.arange(y.size), y] = 1.0
    weights = np.zeros((k, X.shape[1]), dtype=np.float64)
    biases = np.zeros(k, dtype=np.float64)
    for _ in range(epochs):
        gw, gb = cross_entropy_grad(weights, biases, X, onehot)
        weights -= learning_rate * gw
        biases -= learning_rate * gb
    pred = np.argmax(X @ weights.T + biases, axis=1)
    accuracy = float(np.mean(pred == y))
    return SoftmaxModel(
        weights=weights,
        biases=biases,
        class_ids=class_ids,
        epochs=epochs,
        learning_rate=learning_rate,
        noise_level=noise_level,
        final_train_accuracy=accuracy,
    )


def predict_confidences(
    model: SoftmaxModel, X: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(predicted original class ids, winning confidences) for a batch."""
    probs = model.predict_proba(X)
    idx = np.argmax(probs, axis=1)  # smallest index on exact ties
    return model.class_ids[idx], probs[np.arange(probs.shape[0]), idx]


def predict(model: SoftmaxModel, x: np.ndarray, record_id: str = "0") -> ConfidenceRecord:
    probs = model.predict_proba(np.atleast_2d(x))[0]
    idx = int(np.argmax(probs))
    return ConfidenceRecord(
        record_id=record_id,
        predicted_label=str(model.class_ids[idx]),
        winning_confidence=float(probs[idx]),
        class_probabilities={
            str(c): float(p) for c, p in zip(model.class_ids, probs)
        },
    )


def predict_records(
    model: SoftmaxModel, X: np.ndarray, id_prefix: str = "r"
) -> list[ConfidenceRecord]:
    labels, confs = predict_confidences(model, X)
    return [
        ConfidenceRecord(f"{id_prefix}{i}", str(l), float(c))
        for i, (l, c) in enumerate(zip(labels, confs))
    ]


# ---------------------------------------------------------------------------
# Drift pools
# ---------------------------------------------------------------------------

class DriftKind(str, enum.Enum):
    HELD_OUT_CLASS = "held_out_class"
    SELECTION_CRITERIA = "selection_criteria"
    OUT_OF_DOMAIN = "out_of_domain"
    RANDOM_LEGAL = "random_legal"
    FEATURE_FUNCTION = "feature_function"


@dataclass(frozen=True)
class DriftSpec:
    kind: DriftKind
    held_out_class: int | None = None
    feature_index: int | None = None
    quantile: float | None = None
    alt_mixture: MixtureSpec | None = None
    multiplier: float | None = None
    pool_size: int = 2000

    def __post_init__(self) -> None:
        kind = DriftKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is DriftKind.HELD_OUT_CLASS and self.held_out_class is None:
            raise InvalidParameterError("held_out_class required for kind 1")
        if kind is DriftKind.SELECTION_CRITERIA:
            if self.feature_index is None or self.quantile is None:
                raise InvalidParameterError(
                    "feature_index and quantile required for kind 2"
                )
            if not 0.0 < self.quantile < 1.0:
                raise InvalidParameterError("quantile must be in (0, 1)")
        if kind is DriftKind.OUT_OF_DOMAIN and self.alt_mixture is None:
            raise InvalidParameterError("alt_mixture required for kind 3")
        if kind is DriftKind.FEATURE_FUNCTION:
            if self.feature_index is None or self.multiplier is None:
                raise InvalidParameterError(
                    "feature_index and multiplier required for kind 5"
                )
            if self.multiplier == 1.0:
                raise InvalidParameterError("multiplier must differ from 1")


@dataclass(frozen=True)
class DriftContext:
    """Inputs a drift pool may need: withheld records, the training data
    (envelope and base records), and a seed for generated pools."""

    base: LabeledDataset
    held_out: LabeledDataset | None = None
    seed: int = 0


def make_drift_pool(spec: DriftSpec, context: DriftContext) -> np.ndarray:
    kind = DriftKind(spec.kind)
    if kind in (DriftKind.HELD_OUT_CLASS, DriftKind.SELECTION_CRITERIA):
        if context.held_out is None or context.held_out.size == 0:
            raise InsufficientDataError("no withheld records available as drift")
        return context.held_out.features.copy()
    if kind is DriftKind.OUT_OF_DOMAIN:
        return generate_dataset(spec.alt_mixture).features
    if kind is DriftKind.RANDOM_LEGAL:
        rng = np.random.default_rng(context.seed)
        lo = context.base.envelope_min
        hi = context.base.envelope_max
        return rng.uniform(lo, hi, size=(spec.pool_size, lo.size))
    # feature_function
    pool = context.base.features.copy()
    pool[:, spec.feature_index] *= spec.multiplier
    return pool


# ---------------------------------------------------------------------------
# Batch composition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DriftMixSpec:
    drift_fraction: float
    batch_size: int
    seed: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.drift_fraction <= 1.0:
            raise InvalidParameterError("drift_fraction must be in [0, 1]")
        if self.batch_size < 30:
            raise InvalidParameterError("batch_size must be >= 30")


def largest_remainder(weights, total: int) -> np.ndarray:
    """Apportion ``total`` items proportionally to ``weights`` (Hamilton
    method; ties on the fractional part favor the lower index)."""
    w = np.asarray(weights, dtype=np.float64)
    if total < 0 or w.sum() <= 0:
        raise InvalidParameterError("invalid apportionment input")
    shares = w / w.sum() * total
    alloc = np.floor(shares).astype(np.int64)
    leftover = total - int(alloc.sum())
    if leftover > 0:
        frac = shares - alloc
        order = np.lexsort((np.arange(w.size), -frac))
        alloc[order[:leftover]] += 1
    return alloc


def compose_batch(
    clean: LabeledDataset, drift_pool: np.ndarray | None, mix: DriftMixSpec
) -> np.ndarray:
    """One production batch: a drift slice plus a clean slice whose label
    ratios match the clean source (largest-remainder apportionment).

    Sampling is with replacement; the output row order is shuffled.
    """
    rng = np.random.default_rng(mix.seed)
    n_drift = int(math.floor(mix.drift_fraction * mix.batch_size + 0.5))
    if n_drift > 0 and (drift_pool is None or len(drift_pool) == 0):
        raise InsufficientDataError("drift fraction > 0 but the drift pool is empty")
    n_clean = mix.batch_size - n_drift
    parts = []
    if n_clean > 0:
        classes, counts = np.unique(clean.labels, return_counts=True)
        alloc = largest_remainder(counts, n_clean)
        for cls, take in zip(classes, alloc):
            if take == 0:
                continue
            rows = np.flatnonzero(clean.labels == cls)
            parts.append(clean.features[rng.choice(rows, size=take, replace=True)])
    if n_drift > 0:
        idx = rng.choice(len(drift_pool), size=n_drift, replace=True)
        parts.append(np.asarray(drift_pool)[idx])
    batch = np.concatenate(parts, axis=0)
    rng.shuffle(batch, axis=0)
    return batch


# ---------------------------------------------------------------------------
# Experiment assembly
# ---------------------------------------------------------------------------

@dataclass
class ExperimentSetup:
    """Everything a drift-detection experiment needs, built from one seed."""

    model: SoftmaxModel
    baseline: BaselineProfile
    clean: LabeledDataset
    drift_pool: np.ndarray
    drift_spec: DriftSpec
    mixture: MixtureSpec


def _restrict_to_training_population(
    data: LabeledDataset, drift: DriftSpec, threshold: float | None
) -> LabeledDataset:
    if drift.kind is DriftKind.HELD_OUT_CLASS:
        return data.subset(data.labels != drift.held_out_class)
    if drift.kind is DriftKind.SELECTION_CRITERIA:
        return data.subset(data.features[:, drift.feature_index] <= threshold)
    return data


def build_experiment(
    mixture: MixtureSpec,
    drift: DriftSpec,
    epochs: int = 300,
    learning_rate: float = 0.5,
    noise_level: float = 0.0,
    baseline_per_class: int = 500,
    clean_per_class: int = 500,
    seed: int = 0,
) -> ExperimentSetup:
    """Train a model under the drift spec's hold-out rule, profile a fresh
    baseline, and materialize the clean pool and drift pool."""
    full = generate_dataset(replace(mixture, seed=seed))
    threshold = None
    if drift.kind is DriftKind.SELECTION_CRITERIA:
        threshold = float(
            np.quantile(full.features[:, drift.feature_index], drift.quantile)
        )
        held_out = full.subset(full.features[:, drift.feature_index] > threshold)
    elif drift.kind is DriftKind.HELD_OUT_CLASS:
        held_out = full.subset(full.labels == drift.held_out_class)
    else:
        held_out = None
    train_data = _restrict_to_training_population(full, drift, threshold)
    model = train_classifier(
        train_data, epochs=epochs, learning_rate=learning_rate,
        noise_level=noise_level, seed=seed + 1,
    )

    def fresh_clean(sub_seed: int, per_class: int) -> LabeledDataset:
        data = generate_dataset(
            replace(mixture, seed=sub_seed, records_per_class=per_class)
        )
        return _restrict_to_training_population(data, drift, threshold)

    baseline_data = fresh_clean(seed + 2, baseline_per_class)
    labels, confs = predict_confidences(model, baseline_data.features)
    baseline = build_baseline_arrays(
        labels.astype(str), confs, created_from=f"synthetic-seed-{seed}"
    )
    clean = fresh_clean(seed + 3, clean_per_class)
    drift_pool = make_drift_pool(
        drift, DriftContext(base=train_data, held_out=held_out, seed=seed + 4)
    )
    return ExperimentSetup(
        model=model,
        baseline=baseline,
        clean=clean,
        drift_pool=drift_pool,
        drift_spec=drift,
        mixture=mixture,
    )


# ---------------------------------------------------------------------------
# Minimal-drift search
# ---------------------------------------------------------------------------

@dataclass
class MinDriftResult:
    """Full detection-rate surface plus first consistently-detected fraction
    per auditor (None when never consistent: NotDetected)."""

    fractions: list[float]
    rates: dict[str, list[float]]
    minima: dict[str, float | None]
    iterations: int

    @property
    def minimal_fraction(self) -> float | None:
        return self.minima["ALL"]

    def to_json_dict(self) -> dict:
        return {
            "fractions": [float(f) for f in self.fractions],
            "iterations": self.iterations,
            "rates": {k: [float(v) for v in vals] for k, vals in sorted(self.rates.items())},
            "minima": {k: (None if v is None else float(v)) for k, v in sorted(self.minima.items())},
        }

    def heatmap_rows(self) -> list[list[str]]:
        header = ["auditor"] + [f"{f:.4f}" for f in self.fractions]
        rows = [header]
        rows.append(["ALL"] + [repr(round(v, 6)) for v in self.rates["ALL"]])
        for key in sorted(k for k in self.rates if k != "ALL"):
            rows.append([key] + [repr(round(v, 6)) for v in self.rates[key]])
        return rows


def min_drift_search(
    model: SoftmaxModel,
    baseline: BaselineProfile,
    clean: LabeledDataset,
    drift_pool: np.ndarray,
    grid: list[float],
    iterations: int = 50,
    batch_size: int = 500,
    test_kind: TestKind = TestKind.KOLMOGOROV_SMIRNOV,
    alpha: float = 0.05,
    seed: int = 0,
) -> MinDriftResult:
    """Detection rate per auditor per drift fraction over seeded iterations.

    A fraction qualifies for an auditor when at least half of the iterations
    alert; the reported minimum is the first qualifying fraction on the
    ascending grid.
    """
    grid = [float(f) for f in grid]
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidParameterError("grid must be non-empty and ascending")
    if any(not 0.0 <= f <= 1.0 for f in grid):
        raise InvalidParameterError("grid fractions must be in [0, 1]")
    if iterations < 50:
        raise InvalidParameterError(
            "consistency needs at least 50 iterations per fraction"
        )
    label_keys = sorted(baseline.per_label_confidences)
    alert_counts: dict[str, np.ndarray] = {
        key: np.zeros(len(grid), dtype=np.int64) for key in ["ALL", *label_keys]
    }
    for fi, fraction in enumerate(grid):
        for it in range(iterations):
            child_seed = np.random.SeedSequence((seed, fi, it))
            mix = DriftMixSpec(
                drift_fraction=fraction,
                batch_size=batch_size,
                seed=int(child_seed.generate_state(1)[0]),
            )
            batch = compose_batch(clean, drift_pool, mix)
            labels, confs = predict_confidences(model, batch)
            report = audit_arrays(
                baseline, labels.astype(str), confs,
                test_kind=test_kind, alpha=alpha, mode=AuditMode.BOTH,
            )
            alert_counts["ALL"][fi] += report.label_agnostic.alert
            for key in label_keys:
                result = report.per_label.get(key)
                if result is not None and result.alert:
                    alert_counts[key][fi] += 1
    need = math.ceil(iterations / 2)
    rates = {k: (v / iterations).tolist() for k, v in alert_counts.items()}
    minima: dict[str, float | None] = {}
    for key, counts in alert_counts.items():
        qualifying = np.flatnonzero(counts >= need)
        minima[key] = grid[int(qualifying[0])] if qualifying.size else None
    return MinDriftResult(
        fractions=grid, rates=rates, minima=minima, iterations=iterations
    )
