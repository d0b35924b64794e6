"""Flat key-value experiment config.

Files hold one `key = value` pair per line; blank lines and lines
starting with `#` are ignored. Every attack and metric default the
experiments rely on (epsilon 0.1, l2 norm, 20 iterations, 2000 convexity
samples, mixup thresholds T 0.5 and D 8, quantiles 0.6 and 0.8) is a
named key here, so a config file documents the whole run.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from ..errors import ConfigError


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(part) for part in raw.split(",") if part.strip())


def _parse_int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(part) for part in raw.split(",") if part.strip())


def _parse_str_list(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def _parse_optional_float(raw: str):
    low = raw.strip().lower()
    if low in ("", "none", "auto"):
        return None
    return float(raw)


@dataclass
class ExperimentConfig:
    # top-level seed; every random stream in the pipeline derives from it
    seed: int = 0

    # data (ignored when dataset points at a file)
    dataset: str = ""
    n_classes: int = 3
    samples_per_class: int = 80
    d_audio: int = 6
    d_video: int = 6
    multi_label: bool = False
    cluster_spread: tuple[float, ...] = (0.25,)
    cross_modal_correlation: float = 0.9
    shapes: tuple[str, ...] = ("blob",)
    class_separation: float = 1.0
    shape_radius: tuple[float, ...] = (0.8,)
    ambient_noise: float = 0.02
    center_radius: tuple[float, ...] = ()
    train_fraction: float = 0.75

    # model
    bottleneck_audio: int = 4
    bottleneck_video: int = 4
    hidden_audio: tuple[int, ...] = (16,)
    hidden_video: tuple[int, ...] = (16,)
    hidden_head: tuple[int, ...] = (16,)
    activation: str = "relu"

    # training
    strategy: str = "plain"
    epochs: int = 60
    batch_size: int = 16
    learning_rate: float = 0.05
    optimizer: str = "sgd-momentum"
    momentum: float = 0.9

    # attack budget
    epsilon: float = 0.1
    norm: str = "l2"
    iterations: int = 20
    step_size: float | None = None
    mask: str = "both"

    # geometry
    tau: float = 0.8
    tau_low: float = 0.6
    geometry_norm: str = "l2"
    n_convexity: int = 2000

    # mixup gates
    mixup_convexity_threshold: float = 0.5
    mixup_density_threshold: float = 8.0
    mixup_fraction: float = 0.5

    # outputs
    dump_bottlenecks: bool = False


# field annotations are strings here (future annotations), keyed directly
_PARSERS = {
    "int": int,
    "float": float,
    "bool": _parse_bool,
    "str": str,
    "tuple[float, ...]": _parse_float_list,
    "tuple[int, ...]": _parse_int_list,
    "tuple[str, ...]": _parse_str_list,
    "float | None": _parse_optional_float,
}

_FIELD_PARSERS = {f.name: _PARSERS[str(f.type)] for f in fields(ExperimentConfig)}


_CHOICES = {
    "strategy": ("plain", "mixup", "at"),
    "activation": ("relu", "tanh"),
    "optimizer": ("sgd", "sgd-momentum"),
    "norm": ("l1", "l2", "linf"),
    "geometry_norm": ("l1", "l2", "linf"),
    "mask": ("audio", "video", "both"),
}

_POSITIVE = ("samples_per_class", "d_audio", "d_video", "epochs", "batch_size",
             "learning_rate", "iterations", "n_convexity", "bottleneck_audio",
             "bottleneck_video", "class_separation", "mixup_density_threshold")
_UNIT_INTERVAL = ("cross_modal_correlation", "mixup_fraction",
                  "mixup_convexity_threshold")


def validate_config(config: ExperimentConfig) -> ExperimentConfig:
    for name, choices in _CHOICES.items():
        if getattr(config, name) not in choices:
            raise ConfigError(f"{name}: must be one of {choices}, "
                              f"got {getattr(config, name)!r}")
    for name in _POSITIVE:
        if not getattr(config, name) > 0:
            raise ConfigError(f"{name}: must be > 0, got {getattr(config, name)}")
    for name in _UNIT_INTERVAL:
        value = getattr(config, name)
        if not (0.0 <= value <= 1.0):
            raise ConfigError(f"{name}: must lie in [0, 1], got {value}")
    if config.n_classes < 2:
        raise ConfigError(f"n_classes: must be >= 2, got {config.n_classes}")
    if any(r <= 0 for r in config.shape_radius):
        raise ConfigError(f"shape_radius: entries must be > 0, got {config.shape_radius}")
    if any(r < 0 for r in config.center_radius):
        raise ConfigError(f"center_radius: entries must be >= 0, got {config.center_radius}")
    if not (0.0 < config.train_fraction < 1.0):
        raise ConfigError(f"train_fraction: must lie in (0, 1), got {config.train_fraction}")
    for name in ("tau", "tau_low"):
        value = getattr(config, name)
        if not (0.0 < value < 1.0):
            raise ConfigError(f"{name}: must lie in (0, 1), got {value}")
    if config.epsilon < 0:
        raise ConfigError(f"epsilon: must be >= 0, got {config.epsilon}")
    if config.step_size is not None and not config.step_size > 0:
        raise ConfigError(f"step_size: must be > 0 or auto, got {config.step_size}")
    return config


def parse_config_text(text: str) -> ExperimentConfig:
    values = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {line!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        raw_value = raw_value.strip()
        if key not in _FIELD_PARSERS:
            raise ConfigError(f"unknown config key {key!r} on line {line_no}")
        try:
            values[key] = _FIELD_PARSERS[key](raw_value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    return validate_config(ExperimentConfig(**values))


def load_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text())


def apply_overrides(config: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Targeted CLI overrides (--epsilon, --seed, ...). None means keep."""
    for key, value in overrides.items():
        if value is None:
            continue
        if not hasattr(config, key):
            raise ConfigError(f"unknown config key {key!r}")
        setattr(config, key, value)
    return validate_config(config)
