"""Run configuration: INI-style file (``[section]`` + ``key = value``) overridden by flags.

Recognized sections and keys::

    [run]        seed, per_label, none_multiplier, train_fraction, valid_fraction, workers, render
    [patterns]   tall_body_frac, tall_body_mult, small_body_frac, tiny_shadow_frac,
                 long_shadow_mult, trend_slope_frac
    [generator]  every field of GeneratorConfig
    [optimizer]  epochs, batch_size, learning_rate, beta1, beta2, eps
    [attack]     scale_low, scale_high, bound, episodes, reset_period, seed

No environment variables are consulted.
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

from .attack import AttackConfig
from .market_data import DEFAULT_GENERATOR, GeneratorConfig
from .nn import TrainConfig
from .patterns import DEFAULT_THRESHOLDS, Thresholds


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    per_label: int = 1500
    none_multiplier: int = 2
    train_fraction: float = 0.8
    valid_fraction: float = 0.2
    workers: int = 1
    render: int = 0


@dataclass(frozen=True)
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    patterns: Thresholds = DEFAULT_THRESHOLDS
    generator: GeneratorConfig = DEFAULT_GENERATOR
    optimizer: TrainConfig = field(default_factory=TrainConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}


_SECTIONS = ("run", "patterns", "generator", "optimizer", "attack")


def _coerce(section: str, cls, key: str, text: str):
    types = {f.name: f.type for f in fields(cls)}
    if key not in types:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    kind = types[key] if isinstance(types[key], type) else {"int": int, "float": float, "str": str}[str(types[key])]
    try:
        return kind(float(text)) if kind is int and "." in text else kind(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {text!r} is not a valid {kind.__name__}") from None


def _update(obj, section: str, values: dict[str, Any], from_text: bool):
    if not values:
        return obj
    if from_text:
        values = {k: _coerce(section, type(obj), k, v) for k, v in values.items()}
    else:
        known = {f.name for f in fields(obj)}
        bad = set(values) - known
        if bad:
            raise ConfigError(f"unknown key(s) {sorted(bad)} for [{section}]")
    try:
        return replace(obj, **values)
    except ValueError as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def load_config(path: Optional[str | Path] = None, overrides: Optional[dict[str, dict[str, Any]]] = None) -> RunConfig:
    """Defaults, then the file, then ``overrides`` (already typed, e.g. parsed flags)."""
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keep key case
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
        unknown = set(parser.sections()) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown section(s) {sorted(unknown)}")
        for name in parser.sections():
            cfg = replace(cfg, **{name: _update(getattr(cfg, name), name, dict(parser[name]), True)})
    for name, values in (overrides or {}).items():
        values = {k: v for k, v in values.items() if v is not None}
        cfg = replace(cfg, **{name: _update(getattr(cfg, name), name, values, False)})
    if cfg.run.per_label < 1:
        raise ConfigError(f"per_label must be >= 1, got {cfg.run.per_label}")
    if not 0 < cfg.run.train_fraction < 1 or not 0 < cfg.run.valid_fraction < 1:
        raise ConfigError("train_fraction and valid_fraction must lie in (0, 1)")
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for name, values in cfg.to_dict().items():
        lines.append(f"[{name}]")
        lines += [f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}" for k, v in values.items()]
        lines.append("")
    return "\n".join(lines)
