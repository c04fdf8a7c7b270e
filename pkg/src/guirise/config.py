"""Key=value run configuration.

One ``section.field = value`` per line; ``#`` starts a comment. Sections:
sim, reward, grpo, sft, data, policy, labeler. Tuples are written ``4x4``
or ``3,3``; booleans as true/false.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from typing import Optional

from .sim import SimConfig
from .trajectory import GrpoConfig, RewardConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, field_name: Optional[str] = None,
                 source: str = "<config>"):
        self.line = line
        self.field_name = field_name
        self.source = source
        where = source if line is None else f"{source}:{line}"
        if field_name:
            where += f": field '{field_name}'"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class SftConfig:
    steps: int = 600
    learning_rate: float = 0.5
    batch_size: int = 8
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("steps >= 0, batch_size >= 1, learning_rate > 0 required")
        if self.optimizer not in ("adagrad", "sgd"):
            raise ValueError("optimizer must be 'adagrad' or 'sgd'")


@dataclass(frozen=True)
class DataConfig:
    sft_episodes: int = 50      # labeled episodes for the cold start
    rl_episodes: int = 200      # training contexts for GRPO (first sft_episodes shared)
    test_episodes: int = 100    # held out, disjoint generator indices
    test_offset: int = 1_000_000

    def __post_init__(self):
        if min(self.sft_episodes, self.rl_episodes, self.test_episodes) < 1:
            raise ValueError("episode counts must be >= 1")

    @property
    def train_episodes(self) -> int:
        return max(self.sft_episodes, self.rl_episodes)


@dataclass(frozen=True)
class PolicyConfig:
    n_buckets: int = 1 << 15
    max_len: int = 64
    n_bins: int = 20
    init: str = "sft"  # grpo starting point: sft | zero

    def __post_init__(self):
        if self.n_buckets < 1 or self.max_len < 1 or self.n_bins < 1:
            raise ValueError("n_buckets, max_len, n_bins must be positive")
        if self.init not in ("sft", "zero"):
            raise ValueError("init must be 'sft' or 'zero'")


@dataclass(frozen=True)
class LabelerConfig:
    thought: str = ""
    max_retries: int = 2
    timeout: float = 30.0


@dataclass(frozen=True)
class RunConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    sft: SftConfig = field(default_factory=SftConfig)
    data: DataConfig = field(default_factory=DataConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    labeler: LabelerConfig = field(default_factory=LabelerConfig)


SECTIONS = tuple(f.name for f in dataclasses.fields(RunConfig))


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def _coerce(text: str, hint, name: str):
    origin = typing.get_origin(hint)
    if hint is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    if hint is str:
        return text
    if origin is tuple:
        parts = [p for p in text.replace("x", ",").split(",") if p.strip()]
        args = typing.get_args(hint)
        return tuple(_coerce(p.strip(), args[0], name) for p in parts)
    raise ValueError(f"unsupported type {hint} for {name}")


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_format(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def parse_config(text: str, source: str = "<config>", base: Optional[RunConfig] = None) -> RunConfig:
    base = base or RunConfig()
    updates: dict[str, dict] = {s: {} for s in SECTIONS}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'section.field = value'", lineno, None, source)
        key, value = (s.strip() for s in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(f"unknown section in {key!r} (sections: {', '.join(SECTIONS)})", lineno, key, source)
        cls = type(getattr(base, section))
        hints = _hints(cls)
        if name not in hints:
            raise ConfigError(f"unknown field (known: {', '.join(hints)})", lineno, key, source)
        if key in lines:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})", lineno, key, source)
        try:
            updates[section][name] = _coerce(value, hints[name], key)
        except ValueError as exc:
            raise ConfigError(str(exc), lineno, key, source) from None
        lines[key] = lineno
    parts = {}
    for section in SECTIONS:
        current = getattr(base, section)
        try:
            parts[section] = dataclasses.replace(current, **updates[section])
        except (ValueError, TypeError) as exc:
            keys = [f"{section}.{n}" for n in updates[section]]
            first = min((lines[k] for k in keys), default=None)
            raise ConfigError(str(exc), first, ",".join(keys) or section, source) from None
    return RunConfig(**parts)


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=str(path)) from None
    return parse_config(text, str(path))


def dump_config(cfg: RunConfig) -> str:
    """Fully resolved config text; parse_config(dump_config(c)) == c."""
    out = []
    for section in SECTIONS:
        part = getattr(cfg, section)
        for f in dataclasses.fields(part):
            out.append(f"{section}.{f.name} = {_format(getattr(part, f.name))}")
    return "\n".join(out) + "\n"


def override(cfg: RunConfig, section: str, **kwargs) -> RunConfig:
    return dataclasses.replace(cfg, **{section: dataclasses.replace(getattr(cfg, section), **kwargs)})
