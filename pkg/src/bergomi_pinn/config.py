"""INI run configuration shared by the command-line tools.

A file has up to six sections; every key is optional and falls back to the
dataclass defaults::

    [run]      kind, curve_mode, vanilla_checkpoint
    [network]  n_layers, width, l1, l2, init_seed
    [train]    batch_size, samples, epochs, lr_start, lr_end, beta1, beta2, eps,
               clip_norm, seed, log_every, checkpoint_every
    [loss]     lambda1, lambda2, h_floor
    [mc]       paths, steps_per_year, seed, antithetic, n_steps, block_paths, target_se
    [evaluate] seed, count

Command-line overrides use ``section.key=value``.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from io import StringIO
from dataclasses import dataclass, field

from .bergomi import curve_nodes
from .losses import LossConfig
from .mc import McConfig
from .options import OptionKind
from .trainer import ConfigurationError, NetConfig, TrainConfig


@dataclass(frozen=True)
class RunConfig:
    kind: str = "call"
    curve_mode: str = "constant"
    vanilla_checkpoint: str = ""


@dataclass(frozen=True)
class BenchConfig:
    paths: int = 20_000
    steps_per_year: int = 250
    seed: int = 7_000_001
    antithetic: bool = False
    n_steps: int = 0  # 0: derive from steps_per_year
    block_paths: int = 50_000
    target_se: float = 0.0  # 0: no adaptive rerun

    def mc(self) -> McConfig:
        return McConfig(self.paths, self.steps_per_year, self.seed, self.antithetic,
                        self.n_steps or None, self.block_paths)


@dataclass(frozen=True)
class EvalConfig:
    seed: int = 9_000_001
    count: int = 500


@dataclass(frozen=True)
class Config:
    run: RunConfig = field(default_factory=RunConfig)
    network: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    mc: BenchConfig = field(default_factory=BenchConfig)
    evaluate: EvalConfig = field(default_factory=EvalConfig)

    def as_dict(self) -> dict:
        return {f.name: dataclasses.asdict(getattr(self, f.name)) for f in dataclasses.fields(self)}

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def kind(self) -> OptionKind:
        return OptionKind.parse(self.run.kind)


_SECTIONS = {f.name: f.default_factory for f in dataclasses.fields(Config)}


def _convert(cls, key: str, raw: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    if key not in fields:
        raise ConfigurationError(f"unknown key {key!r} for section of {cls.__name__}")
    default = getattr(cls(), key)
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "1", "yes", "on")
        if isinstance(default, int):
            return int(float(raw)) if float(raw).is_integer() else int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"bad value {raw!r} for {key}") from None
    return raw.strip()


def _build(values: dict) -> Config:
    parts = {}
    for name, factory in _SECTIONS.items():
        cls = type(factory())
        raw = values.get(name, {})
        try:
            parts[name] = cls(**{k: _convert(cls, k, v) for k, v in raw.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"[{name}] {exc}") from None
    cfg = Config(**parts)
    OptionKind.parse(cfg.run.kind)
    try:
        curve_nodes(cfg.run.curve_mode)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    return cfg


def load_config(path=None, overrides=()) -> Config:
    """Read an INI file (or defaults when ``path`` is None) and apply ``section.key=value`` overrides."""
    parser = configparser.ConfigParser()
    if path is not None:
        with open(path) as fh:
            parser.read_file(fh)
    values = {s: dict(parser[s]) for s in parser.sections()}
    for unknown in set(values) - set(_SECTIONS):
        raise ConfigurationError(f"unknown section [{unknown}]")
    for item in overrides:
        key, sep, val = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or section not in _SECTIONS:
            raise ConfigurationError(f"override {item!r} must look like section.key=value")
        values.setdefault(section, {})[name.strip()] = val
    return _build(values)


def dump_config(cfg: Config) -> str:
    parser = configparser.ConfigParser()
    for name, section in cfg.as_dict().items():
        parser[name] = {k: str(v) for k, v in section.items()}
    buf = StringIO()
    parser.write(buf)
    return buf.getvalue()
