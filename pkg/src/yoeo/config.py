"""Run configuration: sectioned ``key = value`` files plus flag overrides.

Defaults reproduce the published hyperparameter table (full-scale training);
desk-scale runs override ``hidden`` sizes and step counts.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, fields

from .errors import ConfigurationError

VARIANT_TAGS = ("full", "no_reg", "no_mu", "sarsa_target")


def _field(section, default, **meta):
    return dataclasses.field(default=default, metadata={"section": section, **meta})


@dataclass
class RunConfig:
    env: str = _field("run", "pointmass1d")
    dataset: str = _field("run", "")
    output_dir: str = _field("run", "runs/default")
    seed: int = _field("run", 0)
    variant: str = _field("run", "full")

    gamma: float = _field("train", 0.99)
    nstep: int = _field("train", 10)
    batch_size: int = _field("train", 100)
    value_steps: int = _field("train", 1_000_000)
    critic_steps: int = _field("train", 1_000_000)
    log_every: int = _field("train", 1000)

    n_value: int = _field("value", 5)
    value_lr: float = _field("value", 1e-4)
    value_weight_decay: float = _field("value", 0.0)
    feature_dim: int = _field("value", 64)
    value_hidden: int = _field("value", 256)
    n_quantiles: int = _field("value", 16)
    n_target_quantiles: int = _field("value", 16)
    kappa: float = _field("value", 1.0)
    ema_decay: float = _field("value", 0.995)

    n_critics: int = _field("critic", 5)
    critic_lr: float = _field("critic", 1e-3)
    critic_weight_decay: float = _field("critic", 1e-8)
    critic_hidden: int = _field("critic", 256)
    lam: float = _field("critic", 0.1)
    n_samples: int = _field("critic", 10)
    tau1: float = _field("critic", 0.9)
    tau2: float = _field("critic", 0.1)
    temperature: float = _field("critic", 1.0)
    median_target: bool = _field("critic", True)

    actor_lr: float = _field("actor", 3e-4)
    actor_hidden: int = _field("actor", 256)
    sigma: float = _field("actor", 0.3)
    noise_clip: float = _field("actor", 0.5)

    knn_k: int = _field("policy", 100)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must lie in (0, 1], got {self.gamma}")
        for name in ("nstep", "batch_size", "n_value", "feature_dim", "value_hidden", "n_quantiles",
                     "n_target_quantiles", "n_critics", "critic_hidden", "n_samples", "actor_hidden",
                     "knn_k", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("value_steps", "critic_steps"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        for name in ("value_lr", "critic_lr", "actor_lr", "kappa", "temperature"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("value_weight_decay", "critic_weight_decay", "lam", "sigma", "noise_clip"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ConfigurationError("ema_decay must lie in [0, 1]")
        if not (0.0 < self.tau2 < self.tau1 < 1.0):
            raise ConfigurationError(f"need 0 < tau2 < tau1 < 1, got tau1={self.tau1}, tau2={self.tau2}")
        if self.variant not in VARIANT_TAGS:
            raise ConfigurationError(f"variant must be one of {VARIANT_TAGS}, got {self.variant!r}")

    def replace(self, **changes) -> "RunConfig":
        unknown = set(changes) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return dataclasses.replace(self, **changes)


SECTIONS = ("run", "train", "value", "critic", "actor", "policy")


def _coerce(f, raw: str):
    try:
        if f.type in ("bool", bool):
            low = raw.strip().lower()
            if low not in ("true", "false"):
                raise ValueError(raw)
            return low == "true"
        if f.type in ("int", int):
            return int(raw.replace("_", ""))
        if f.type in ("float", float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigurationError(f"bad value for {f.name}: {raw!r}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def apply_overrides(cfg: RunConfig, raw: dict) -> RunConfig:
    """Apply ``{key: text}`` overrides, coercing each text to its field type."""
    by_name = {f.name: f for f in fields(cfg)}
    changes = {}
    for key, value in raw.items():
        if key not in by_name:
            raise ConfigurationError(f"unknown config key {key!r}")
        changes[key] = _coerce(by_name[key], value)
    return cfg.replace(**changes)


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None
    by_name = {f.name: f for f in fields(RunConfig)}
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigurationError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            f = by_name.get(key)
            if f is None or f.metadata["section"] != section:
                raise ConfigurationError(f"unknown config key {section}.{key}")
            values[key] = _coerce(f, raw)
    return RunConfig(**values)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text: every section in fixed order, every key explicit."""
    out = io.StringIO()
    for i, section in enumerate(SECTIONS):
        if i:
            out.write("\n")
        out.write(f"[{section}]\n")
        for f in fields(cfg):
            if f.metadata["section"] == section:
                out.write(f"{f.name} = {_format(getattr(cfg, f.name))}\n")
    return out.getvalue()


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(cfg: RunConfig, path):
    from .checkpoint import atomic_write

    atomic_write(path, serialize_config(cfg).encode("utf-8"))
