"""Flat key-value experiment configuration.

Config files are plain text: one ``key = value`` per line, ``#`` comments,
values parsed as JSON where possible (so lists and numbers work) with a
bare-string fallback.  Command-line flags override file values.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import InvalidParameterError
from .simlab import DriftKind, DriftSpec, MixtureSpec


def read_config(path) -> dict:
    values: dict = {}
    text = Path(path).read_text(encoding="utf-8")
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameterError(
                f"{path}:{line_no}: expected 'key = value', got {raw!r}"
            )
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        try:
            values[key] = json.loads(value)
        except json.JSONDecodeError:
            values[key] = value
    return values


def require(cfg: dict, key: str):
    if key not in cfg:
        raise InvalidParameterError(f"config is missing required key {key!r}")
    return cfg[key]


def parse_mixture(cfg: dict, prefix: str = "") -> MixtureSpec:
    means = require(cfg, prefix + "class_means")
    sigmas = require(cfg, prefix + "class_sigmas")
    return MixtureSpec.make(
        means,
        sigmas,
        int(require(cfg, prefix + "records_per_class")),
        int(cfg.get(prefix + "seed", cfg.get("seed", 0))),
    )


def parse_drift_spec(cfg: dict) -> DriftSpec:
    kind = DriftKind(require(cfg, "drift_kind"))
    alt = None
    if kind is DriftKind.OUT_OF_DOMAIN:
        alt = parse_mixture(cfg, prefix="alt_")
    return DriftSpec(
        kind=kind,
        held_out_class=(
            int(cfg["held_out_class"]) if "held_out_class" in cfg else None
        ),
        feature_index=(
            int(cfg["feature_index"]) if "feature_index" in cfg else None
        ),
        quantile=float(cfg["quantile"]) if "quantile" in cfg else None,
        alt_mixture=alt,
        multiplier=float(cfg["multiplier"]) if "multiplier" in cfg else None,
        pool_size=int(cfg.get("pool_size", 2000)),
    )


def parse_grid(cfg: dict) -> list[float]:
    if "grid" in cfg:
        return [float(f) for f in cfg["grid"]]
    start = float(cfg.get("grid_start", 0.01))
    stop = float(cfg.get("grid_stop", 0.25))
    step = float(cfg.get("grid_step", 0.01))
    if step <= 0 or stop < start:
        raise InvalidParameterError("invalid grid bounds")
    out = []
    value = start
    while value <= stop + 1e-12:
        out.append(round(value, 10))
        value += step
    return out
