"""Flat ``key=value`` run configuration with dotted namespaces.

Recognized namespaces are ``gail.*`` (training), ``synth.*`` (expert
synthesis, with ``synth.idm.*`` for car-following parameters), ``eval.*``
(metrics) and ``generate.*`` (rollout export).  Blank lines and ``#``
comments are ignored.  Two profiles ship with the package: ``desk`` and
``paper``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .data import IDMParams, SynthConfig
from .gail import TrainConfig

PROFILES = ("desk", "paper")


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    bins: int = 64
    smoothing: float = 1e-8
    bandwidth: float = 0.0  # 0 selects the median heuristic
    seed: int = 0

    def validate(self) -> None:
        if self.bins < 1:
            raise ConfigError("eval.bins must be at least 1")
        if not self.smoothing > 0:
            raise ConfigError("eval.smoothing must be positive")
        if self.bandwidth < 0:
            raise ConfigError("eval.bandwidth must be nonnegative")


@dataclass
class GenerateConfig:
    count: int = 16
    horizon: int = 64

    def validate(self) -> None:
        if self.count < 1 or self.horizon < 1:
            raise ConfigError("generate.count and generate.horizon must be at least 1")


@dataclass
class RunConfig:
    gail: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    generate: GenerateConfig = field(default_factory=GenerateConfig)

    def items(self) -> list[tuple[str, object]]:
        """Every leaf setting as ``(dotted key, value)`` in a stable order."""
        out = []
        for ns in ("gail", "synth", "eval", "generate"):
            out.extend(_leaves(getattr(self, ns), ns))
        return out

    def dumps(self) -> str:
        return "".join(f"{k}={_format(v)}\n" for k, v in self.items())

    def summary(self) -> str:
        """One-line rendering used in output file headers."""
        return " ".join(f"{k}={_format(v)}" for k, v in self.items())

    def set(self, key: str, raw: str) -> None:
        parts = key.strip().split(".")
        target = self
        for p in parts[:-1]:
            if not dataclasses.is_dataclass(target) or p not in _field_names(target):
                raise ConfigError(f"invalid config key {key!r}")
            target = getattr(target, p)
            if not dataclasses.is_dataclass(target):
                raise ConfigError(f"invalid config key {key!r}")
        name = parts[-1]
        if target is self or name not in _field_names(target):
            raise ConfigError(f"invalid config key {key!r}")
        current = getattr(target, name)
        if dataclasses.is_dataclass(current):
            raise ConfigError(f"invalid config key {key!r}")
        setattr(target, name, _coerce(raw.strip(), current, key))

    def validate(self) -> "RunConfig":
        try:
            self.gail.validate()
            self.synth.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.eval.validate()
        self.generate.validate()
        return self


def _field_names(obj) -> set[str]:
    return {f.name for f in dataclasses.fields(obj)}


def _leaves(obj, prefix: str):
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        key = f"{prefix}.{f.name}"
        if dataclasses.is_dataclass(v):
            yield from _leaves(v, key)
        else:
            yield key, v


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(raw: str, current, key: str):
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            items = [s for s in raw.split(",") if s.strip()]
            kinds = [type(x) for x in current] or [float]
            return tuple(kinds[min(i, len(kinds) - 1)](s) for i, s in enumerate(items))
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        cfg.set(key, raw)
    return cfg


def profile_text(name: str) -> str:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}")
    return resources.files("trajgail").joinpath(f"profiles/{name}.profile").read_text()


def load_config(source: str | Path | None = None, overrides: list[str] = ()) -> RunConfig:
    """Start from the desk profile, then apply a profile name or file, then overrides."""
    cfg = parse_config(profile_text("desk"))
    if source is not None:
        s = str(source)
        if s in PROFILES:
            cfg = parse_config(profile_text(s), RunConfig())
        else:
            path = Path(s)
            if not path.is_file():
                raise ConfigError(f"config file not found: {s}")
            cfg = parse_config(path.read_text(), cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k, v)
    return cfg.validate()


__all__ = ["ConfigError", "EvalConfig", "GenerateConfig", "RunConfig", "IDMParams",
           "load_config", "parse_config", "profile_text", "PROFILES"]
