"""Flat key=value configuration with validated defaults.

The config file format is one ``key=value`` pair per line (``#`` comments
allowed), no nesting, so two runs diff cleanly. CLI flags override file
values; unset keys fall back to the defaults below (compression-token cap 8,
probe-loss weight 1e-4, Huber knee 10, policy ratio 10 with pretraining
choices {1, 5, 10, 20, 50}, input cap 600).
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigurationError
from .runs import parse_kv


@dataclass(frozen=True)
class Settings:
    # losses and allocation
    lam: float = 1e-4
    delta: float = 10.0
    r_fixed: float = 10.0
    r_choices: tuple = (1.0, 5.0, 10.0, 20.0, 50.0)
    k_max: int = 8
    k_min: int = 1
    input_cap: int = 600
    allocation_from: str = "gold"
    # model
    n_layers: int = 4
    n_heads: int = 4
    d_model: int = 128
    d_ff: int = 512
    adapter_rank: int = 8
    n_probe_layers: int = 2
    probe_hidden: int = 64
    max_positions: int = 640
    dtype: str = "f32"
    # training
    steps: int = 200
    batch_size: int = 8
    lr: float = 0.3
    momentum: float = 0.9
    clip_norm: float = 1.0
    checkpoint_cadence: int = 0
    # generation
    max_regen_len: int = 160
    max_answer_len: int = 8


# file/flag key -> dataclass field (the loss weight is written "lambda")
KEY_ALIASES = {"lambda": "lam"}

_FIELD_TYPES = {f.name: f.type for f in fields(Settings)}


def _parse_value(key: str, raw, target):
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if target is float or target == "float":
            return float(raw)
        if target is int or target == "int":
            return int(raw)
        if target is str or target == "str":
            return str(raw)
        if target is tuple or target == "tuple":
            if isinstance(raw, (tuple, list)):
                return tuple(float(x) for x in raw)
            return tuple(float(x) for x in str(raw).split(",") if x.strip())
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"config key {key!r}: cannot parse {raw!r} ({exc})") from exc
    raise ConfigurationError(f"config key {key!r}: unsupported type {target}")


def validate(settings: Settings) -> Settings:
    s = settings
    if s.lam < 0:
        raise ConfigurationError("lambda must be >= 0")
    if s.delta <= 0:
        raise ConfigurationError("delta must be > 0")
    if s.r_fixed <= 0:
        raise ConfigurationError("r_fixed must be > 0 (the policy divides by it)")
    if not s.r_choices or any(r <= 0 for r in s.r_choices):
        raise ConfigurationError("r_choices must be a non-empty list of positive ratios")
    if not 1 <= s.k_min <= s.k_max:
        raise ConfigurationError("need 1 <= k_min <= k_max")
    if s.input_cap < 16:
        raise ConfigurationError("input_cap must be >= 16")
    if s.allocation_from not in ("gold", "probe"):
        raise ConfigurationError("allocation_from must be 'gold' or 'probe'")
    if s.dtype not in ("f32", "f64"):
        raise ConfigurationError("dtype must be 'f32' or 'f64'")
    if s.max_positions < s.input_cap + s.k_max + 16:
        raise ConfigurationError(
            f"max_positions={s.max_positions} too small for input_cap={s.input_cap} "
            f"+ k_max={s.k_max} + generation headroom"
        )
    if s.d_model % s.n_heads != 0:
        raise ConfigurationError("d_model must be divisible by n_heads")
    for name in ("steps", "batch_size", "n_layers", "n_heads", "d_model", "d_ff",
                 "adapter_rank", "n_probe_layers", "probe_hidden", "max_regen_len"):
        if getattr(s, name) < 1:
            raise ConfigurationError(f"{name} must be >= 1")
    if s.lr <= 0 or s.clip_norm <= 0:
        raise ConfigurationError("lr and clip_norm must be > 0")
    if not 0 <= s.momentum < 1:
        raise ConfigurationError("momentum must be in [0, 1)")
    if s.max_answer_len < 0 or s.checkpoint_cadence < 0:
        raise ConfigurationError("max_answer_len and checkpoint_cadence must be >= 0")
    return s


def load_config(path=None, overrides: dict | None = None) -> Settings:
    """Defaults, then file values, then overrides; unknown keys are errors."""
    values = {}

    def apply(key, raw, source):
        name = KEY_ALIASES.get(key, key)
        if name not in _FIELD_TYPES:
            raise ConfigurationError(f"unknown config key {key!r} (from {source})")
        values[name] = _parse_value(key, raw, _FIELD_TYPES[name])

    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        try:
            pairs = parse_kv(text)
        except ValueError as exc:
            raise ConfigurationError(f"config file {path}: {exc}") from exc
        for key, raw in pairs.items():
            apply(key, raw, str(path))
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        apply(key, raw, "override")
    return validate(Settings(**values))


def settings_dict(settings: Settings) -> dict:
    out = {}
    for f in fields(Settings):
        value = getattr(settings, f.name)
        if isinstance(value, tuple):
            value = ",".join(f"{v:g}" for v in value)
        key = "lambda" if f.name == "lam" else f.name
        out[key] = value
    return out


def model_config_from(settings: Settings, vocab_size: int):
    from .model import ModelConfig

    return ModelConfig(
        vocab_size=vocab_size,
        n_layers=settings.n_layers,
        n_heads=settings.n_heads,
        d_model=settings.d_model,
        d_ff=settings.d_ff,
        max_positions=settings.max_positions,
        adapter_rank=settings.adapter_rank,
        n_probe_layers=settings.n_probe_layers,
        probe_hidden=settings.probe_hidden,
        k_max=settings.k_max,
        dtype=settings.dtype,
    )


def train_config_from(settings: Settings, stage: str, seed: int, variant: str = "full"):
    from .training import TrainConfig

    return TrainConfig(
        stage=stage,
        steps=settings.steps,
        batch_size=settings.batch_size,
        lr=settings.lr,
        momentum=settings.momentum,
        clip_norm=settings.clip_norm,
        seed=seed,
        lam=settings.lam,
        delta=settings.delta,
        r_choices=settings.r_choices,
        r_fixed=settings.r_fixed,
        k_max=settings.k_max,
        k_min=settings.k_min,
        allocation_from=settings.allocation_from,
        variant=variant,
        checkpoint_cadence=settings.checkpoint_cadence,
    )


def policy_from(settings: Settings):
    from .controller import AllocationPolicy

    return AllocationPolicy(r=settings.r_fixed, k_max=settings.k_max, k_min=settings.k_min)
