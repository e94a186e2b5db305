"""Engine configuration: every weight, threshold, and table in one place.

All values here are operating points, not learned quantities.  The full
config is hashed and the hash is stamped into every trace record so a log
can always be tied back to the exact settings that produced it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping


@dataclass(frozen=True)
class OnsetPriorConfig:
    """Hand-guided onset prior weights and abstention thresholds."""

    w_phase: float = 0.35
    w_prox: float = 0.30
    w_motion: float = 0.20
    w_supp: float = 0.15
    #: proximity bandwidth as a fraction of window length
    beta: float = 0.15
    #: support count saturation
    s_max: int = 5
    #: minimum stable-run length, frames
    run_len: int = 3
    #: half-width of the local-support neighborhood, frames
    neighborhood_radius: int = 2
    #: base onset-band half-width, frames
    band_radius: int = 3
    #: stability threshold as a fraction of the window motion range
    stability_eps: float = 0.05
    #: abstention thresholds: coverage, handedness purity, reliability
    c_min: float = 0.5
    h_min: float = 0.7
    kappa_min: float = 0.35
    #: reliability mixture weights (evidence, score, margin, support); sum to 1
    u_nu: float = 0.25
    u_score: float = 0.25
    u_margin: float = 0.25
    u_support: float = 0.25
    #: phase family -> candidate family compatibility; unlisted pairs fall back
    compat: Mapping[str, Mapping[str, float]] = field(
        default_factory=lambda: {
            "boundary": {"boundary": 1.0},
            "early": {"valley": 1.0},
            "mid": {"peak": 1.0, "valley": 0.8},
            "late": {"stab": 1.0},
        }
    )
    compat_default: float = 0.3


@dataclass(frozen=True)
class RefineConfig:
    """Blend weights for statistics-guided refinement, by head."""

    w_b: float = 0.3
    w_n: float = 0.3
    w_v: float = 0.3
    w_o: float = 0.3


@dataclass(frozen=True)
class AdapterConfig:
    """Reference affine adapter shape."""

    #: fixed onset-score grid resolution; grid cells map onto window frames
    onset_grid: int = 16
    #: variance floor added after the positivity map
    var_floor: float = 1e-6


@dataclass(frozen=True)
class ControllerConfig:
    """Supervisory controller scoring weights and heuristic tables."""

    lambda_utility: float = 1.0
    lambda_gain: float = 1.0
    lambda_cost: float = 1.0
    lambda_risk: float = 1.0
    base_cost: Mapping[str, float] = field(
        default_factory=lambda: {
            "timeline_query": 1.0,
            "choice_prompt": 0.7,
            "suggestion_card": 0.4,
            "silent_apply": 0.1,
        }
    )
    risk_multiplier: Mapping[str, float] = field(
        default_factory=lambda: {
            "human_only": 0.1,
            "human_confirm": 0.5,
            "safe_local": 1.0,
        }
    )
    status_weight: Mapping[str, float] = field(
        default_factory=lambda: {"empty": 0.0, "suggested": 0.5, "confirmed": 1.0}
    )
    #: seconds of annotator time equal to one base-cost unit
    seconds_per_cost_unit: float = 5.0
    #: exponential moving average decay for observed response latency
    cost_ema_decay: float = 0.9
    #: highest authority the policy permits
    max_authority: str = "safe_local"


@dataclass(frozen=True)
class LoopConfig:
    """Closed-loop execution settings."""

    #: decode refinement passes gated on strict joint-score improvement
    feedback_passes: int = 1
    #: hard cap on loop steps per event, a stall guard
    max_steps_per_event: int = 64


@dataclass(frozen=True)
class StatsConfig:
    """Statistics bundle shape."""

    onset_bins: int = 10


@dataclass(frozen=True)
class EngineConfig:
    onset: OnsetPriorConfig = field(default_factory=OnsetPriorConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    loop: LoopConfig = field(default_factory=LoopConfig)
    stats: StatsConfig = field(default_factory=StatsConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


class ConfigError(Exception):
    pass


_SECTIONS = {
    "onset": OnsetPriorConfig,
    "refine": RefineConfig,
    "adapter": AdapterConfig,
    "controller": ControllerConfig,
    "loop": LoopConfig,
    "stats": StatsConfig,
}


def config_from_dict(doc: Mapping[str, Any]) -> EngineConfig:
    """Build a config from a (possibly partial) dict, validating keys."""
    kwargs = {}
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for name, cls in _SECTIONS.items():
        section = doc.get(name, {})
        if not isinstance(section, Mapping):
            raise ConfigError(f"config section {name!r} must be a mapping")
        valid = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        bad = set(section) - valid
        if bad:
            raise ConfigError(f"unknown keys in config section {name!r}: {sorted(bad)}")
        try:
            kwargs[name] = cls(**section)
        except TypeError as exc:
            raise ConfigError(f"bad config section {name!r}: {exc}") from exc
    cfg = EngineConfig(**kwargs)
    _validate(cfg)
    return cfg


def _validate(cfg: EngineConfig) -> None:
    o = cfg.onset
    for key in ("w_phase", "w_prox", "w_motion", "w_supp", "beta", "c_min", "h_min", "kappa_min"):
        val = getattr(o, key)
        if not isinstance(val, (int, float)) or val < 0:
            raise ConfigError(f"onset.{key} must be non-negative, got {val!r}")
    usum = o.u_nu + o.u_score + o.u_margin + o.u_support
    if abs(usum - 1.0) > 1e-9:
        raise ConfigError(f"onset reliability weights must sum to 1, got {usum}")
    if o.c_min <= 0.0:
        raise ConfigError("onset.c_min must be positive (zero coverage must abstain)")
    for key in ("w_b", "w_n", "w_v", "w_o"):
        val = getattr(cfg.refine, key)
        if not (0.0 <= val <= 1.0):
            raise ConfigError(f"refine.{key} must be in [0, 1], got {val!r}")
    for key in ("lambda_utility", "lambda_gain", "lambda_cost", "lambda_risk"):
        val = getattr(cfg.controller, key)
        if not isinstance(val, (int, float)):
            raise ConfigError(f"controller.{key} must be a number, got {val!r}")
    if cfg.controller.max_authority not in ("human_only", "human_confirm", "safe_local"):
        raise ConfigError(f"unknown max_authority {cfg.controller.max_authority!r}")
    if cfg.stats.onset_bins < 1:
        raise ConfigError("stats.onset_bins must be >= 1")
    if cfg.adapter.onset_grid < 1:
        raise ConfigError("adapter.onset_grid must be >= 1")


def load_config(path: str | Path) -> EngineConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    return config_from_dict(doc)


def save_config(cfg: EngineConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True), encoding="utf-8")


def with_policy(cfg: EngineConfig, max_authority: str) -> EngineConfig:
    """Convenience: same config with a different authority cap."""
    return replace(cfg, controller=replace(cfg.controller, max_authority=max_authority))


def default_config() -> EngineConfig:
    return EngineConfig()
