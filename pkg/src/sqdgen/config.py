"""Run configuration: a flat ``key = value`` text file with typed fields.

Blank lines and ``#`` comments are ignored. Unset optional fields are simply
omitted when serializing, so ``parse_config(serialize_config(cfg)) == cfg``.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from typing import Any, Mapping

from .recovery import RecoveryConfig
from .seeds import derive_seed

DEFAULT_SHOTS = 100_000


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    fcidump: str | None = None
    n_alpha: int | None = None
    n_beta: int | None = None
    eps_int: float = 1e-10
    eps_coeff: float = 1e-10
    eps_e: float = 1e-5
    n_max: int = 4
    x_percent: float = 2.0
    epochs: int = 3
    k_gibbs: int = 20
    lr: float = 0.001
    batch_size: int = 10
    target_size: int = 4000
    shots: int | None = None
    bitflip_p: float = 0.0
    counts: str | None = None
    seed: int = 0
    max_macro: int = 100
    cold_start: bool = False
    fci_cap: int = 20000
    reference_energy: float | None = None
    output: str = "out"

    def validate(self) -> RunConfig:
        for name in ("eps_int", "eps_coeff", "eps_e", "lr", "x_percent"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.n_max not in (2, 3, 4):
            raise ConfigError("n_max must be 2, 3 or 4")
        if self.counts is not None and self.shots is not None:
            raise ConfigError("give either shots (simulation) or a counts file, not both")
        if self.shots is not None and self.shots < 0:
            raise ConfigError("shots must be non-negative")
        if not 0.0 <= self.bitflip_p <= 1.0:
            raise ConfigError("bitflip_p must lie in [0, 1]")
        for name in ("epochs", "k_gibbs", "batch_size", "target_size", "max_macro", "fci_cap"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if (self.n_alpha is None) != (self.n_beta is None):
            raise ConfigError("set both n_alpha and n_beta or neither")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        return self

    @property
    def effective_shots(self) -> int:
        if self.counts is not None:
            return 0
        return DEFAULT_SHOTS if self.shots is None else self.shots

    def sampler_seed(self) -> int:
        return derive_seed(self.seed, "sampler")

    def recovery_config(self) -> RecoveryConfig:
        return RecoveryConfig(
            eps_coeff=self.eps_coeff,
            eps_e=self.eps_e,
            x_percent=self.x_percent,
            epochs=self.epochs,
            k_gibbs=self.k_gibbs,
            lr=self.lr,
            batch_size=self.batch_size,
            target_size=self.target_size,
            max_macro=self.max_macro,
            warm_start=not self.cold_start,
            seed=derive_seed(self.seed, "recovery"),
            reference_energy=self.reference_energy,
        )


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _field_kind(name: str) -> type:
    t = str(_FIELDS[name].type)
    for kind in (bool, int, float, str):
        if t.startswith(kind.__name__):
            return kind
    raise TypeError(f"unsupported field type {t}")


def coerce(name: str, raw: Any) -> Any:
    """Convert a raw (usually string) value to the type of field ``name``."""
    if name not in _FIELDS:
        raise ConfigError(f"unknown configuration key {name!r}")
    if raw is None:
        return None
    kind = _field_kind(name)
    if not isinstance(raw, str):
        return kind(raw)
    text = raw.strip()
    if text.lower() in ("none", ""):
        if _FIELDS[name].default is not None:
            raise ConfigError(f"{name} cannot be empty")
        return None
    try:
        if kind is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    values = dataclasses.asdict(base or RunConfig())
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in body.split("=", 1))
        values[key.replace("-", "_")] = coerce(key.replace("-", "_"), raw)
    return RunConfig(**values)


def parse_config(path: str | os.PathLike, base: RunConfig | None = None) -> RunConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), base)


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for name, value in dataclasses.asdict(cfg).items():
        if value is None:
            continue
        if isinstance(value, float):
            value = repr(value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"


def merge(cfg: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    values = dataclasses.asdict(cfg)
    for k, v in overrides.items():
        values[k] = coerce(k, v)
    return RunConfig(**values)
