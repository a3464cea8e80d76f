"""Experiment configuration: one JSON document per run.

Serialization is canonical (sorted keys, two-space indent, trailing newline)
so ``to_json(from_json(text)) == text`` for any text this module wrote.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field as dc_field, fields, replace
from pathlib import Path

from ..errors import ConfigError
from ..field import KERNEL_KINDS

EXPERIMENTS = (
    "sample",
    "events",
    "crossing-scan",
    "level-scan",
    "chemdist",
    "s-tail",
    "renorm-scan",
    "domination",
    "stretch",
)

SIDES = ("upper", "lower")


@dataclass(frozen=True)
class FieldSpec:
    kernel: str = "bargmann-fock"
    beta: float | None = None
    truncation: float | None = None
    eps: float | None = None
    spacing: float = 0.25
    dim: int = 2
    half_width: float | None = None
    extent: tuple[int, ...] | None = None


@dataclass(frozen=True)
class EventSpec:
    R: float | None = None
    kappa: float = 0.25
    levels: tuple[float, ...] = ()
    radii: tuple[float, ...] = ()
    side: str = "upper"
    distances: tuple[float, ...] = ()
    s: float | None = None
    thresholds: tuple[float, ...] = ()
    p_values: tuple[float, ...] = ()
    x_norms: tuple[int, ...] = ()
    C0: float = 9.0
    delta: float = 0.5
    sites: tuple[int, ...] | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    trials: int = 1
    seed: int = 0
    out: str = "runs"
    field: FieldSpec = dc_field(default_factory=FieldSpec)
    event: EventSpec = dc_field(default_factory=EventSpec)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("extent",):
            if d["field"][k] is not None:
                d["field"][k] = list(d["field"][k])
        for k, v in d["event"].items():
            if isinstance(v, tuple):
                d["event"][k] = list(v)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"

    def with_overrides(self, **kw) -> "ExperimentConfig":
        cfg = replace(self, **{k: v for k, v in kw.items() if v is not None})
        validate(cfg)
        return cfg


def _tuple(v, cast=float):
    if v is None:
        return None
    if isinstance(v, (int, float)):
        return (cast(v),)
    return tuple(cast(x) for x in v)


def _build(cls, data: dict, where: str, casts: dict):
    if not isinstance(data, dict):
        raise ConfigError(where, "must be a JSON object")
    known = {f.name for f in fields(cls)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"{where}.{sorted(extra)[0]}" if where else sorted(extra)[0], "unknown setting")
    kw = {}
    for k, v in data.items():
        name = f"{where}.{k}" if where else k
        try:
            kw[k] = casts[k](v) if k in casts and v is not None else v
        except (TypeError, ValueError) as exc:
            raise ConfigError(name, f"cannot parse {v!r}: {exc}") from None
    return cls(**kw)


_FIELD_CASTS = {
    "beta": float, "truncation": float, "eps": float, "spacing": float, "dim": int,
    "half_width": float, "extent": lambda v: _tuple(v, int), "kernel": str,
}
_EVENT_CASTS = {
    "R": float, "kappa": float, "levels": _tuple, "radii": _tuple, "side": str, "distances": _tuple,
    "s": float, "thresholds": _tuple, "p_values": _tuple, "x_norms": lambda v: _tuple(v, int),
    "C0": float, "delta": float, "sites": lambda v: _tuple(v, int),
}


def from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config", "must be a JSON object")
    data = dict(data)
    fs = _build(FieldSpec, data.pop("field", {}) or {}, "field", _FIELD_CASTS)
    es = _build(EventSpec, data.pop("event", {}) or {}, "event", _EVENT_CASTS)
    top = _build(ExperimentConfig, data, "", {"trials": int, "seed": int, "out": str, "experiment": str})
    cfg = replace(top, field=fs, event=es)
    validate(cfg)
    return cfg


def from_json(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from None
    return from_dict(data)


def load(path) -> ExperimentConfig:
    return from_json(Path(path).read_text(encoding="utf-8"))


def _finite(name, v, positive=False):
    if v is None:
        return
    if not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(name, f"must be a finite number, got {v!r}")
    if positive and v <= 0:
        raise ConfigError(name, f"must be positive, got {v!r}")


def _multiple_of(name, v, h):
    ratio = v / h
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
        raise ConfigError(name, f"{v} is not a positive integer multiple of spacing {h}")


def validate(cfg: ExperimentConfig) -> None:
    """Raise ConfigError naming the first offending setting."""
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
    if not isinstance(cfg.trials, int) or cfg.trials < 1:
        raise ConfigError("trials", "must be an integer >= 1")
    if not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")
    f, e = cfg.field, cfg.event
    if f.kernel not in KERNEL_KINDS:
        raise ConfigError("field.kernel", f"must be one of {', '.join(KERNEL_KINDS)}")
    if f.dim not in (2, 3):
        raise ConfigError("field.dim", "must be 2 or 3")
    _finite("field.spacing", f.spacing, positive=True)
    if f.kernel == "polynomial-decay":
        if f.beta is None:
            raise ConfigError("field.beta", "required for the polynomial-decay kernel")
        _finite("field.beta", f.beta)
        if f.beta <= f.dim:
            raise ConfigError("field.beta", f"must exceed dim={f.dim}")
    if f.truncation is not None:
        _finite("field.truncation", f.truncation)
        if f.truncation <= 1:
            raise ConfigError("field.truncation", "must exceed 1")
    if f.eps is not None:
        _finite("field.eps", f.eps, positive=True)
        _multiple_of("field.eps", f.eps, f.spacing)
    _finite("field.half_width", f.half_width, positive=True)
    if f.extent is not None and (len(f.extent) != f.dim or any(n < 2 for n in f.extent)):
        raise ConfigError("field.extent", f"need {f.dim} axis counts >= 2")
    _finite("event.R", e.R, positive=True)
    if e.R is not None and e.R <= 1:
        raise ConfigError("event.R", "must exceed 1")
    if not 0 < e.kappa < 1:
        raise ConfigError("event.kappa", "must lie in (0, 1)")
    if e.side not in SIDES:
        raise ConfigError("event.side", f"must be one of {', '.join(SIDES)}")
    for name in ("levels", "radii", "distances", "thresholds", "p_values"):
        for v in getattr(e, name):
            _finite(f"event.{name}", v)
    if any(not 0 < p <= 1 for p in e.p_values):
        raise ConfigError("event.p_values", "must lie in (0, 1]")
    if any(r < 2 for r in e.radii):
        raise ConfigError("event.radii", "must be >= 2")
    if any(x < 1 for x in e.x_norms):
        raise ConfigError("event.x_norms", "must be >= 1")
    if e.delta < 0:
        raise ConfigError("event.delta", "must be >= 0")
    _finite("event.s", e.s, positive=True)
    _require(cfg)


def _require(cfg: ExperimentConfig) -> None:
    f, e, kind = cfg.field, cfg.event, cfg.experiment
    need = {
        "events": ("R", "levels"),
        "crossing-scan": ("radii", "levels"),
        "level-scan": ("R", "levels"),
        "chemdist": ("levels", "distances"),
        "s-tail": ("levels", "s", "thresholds"),
        "renorm-scan": ("p_values", "x_norms"),
        "domination": ("R", "levels", "sites"),
        "stretch": ("levels", "distances"),
    }.get(kind, ())
    for name in need:
        v = getattr(e, name)
        if v is None or v == ():
            raise ConfigError(f"event.{name}", f"required by the {kind} experiment")
    if kind == "sample" and f.extent is None and f.half_width is None:
        raise ConfigError("field.extent", "sample needs field.extent or field.half_width")
    if kind == "stretch" and any(l <= 0 for l in e.levels):
        raise ConfigError("event.levels", "stretch levels must be > 0")
    if kind == "domination":
        _multiple_of("event.R", e.R / 10, f.spacing)
    if kind == "s-tail" and e.s < 10 * f.spacing:
        raise ConfigError("event.s", "must be at least 10 grid spacings")
