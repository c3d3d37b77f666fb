"""Run configuration: one YAML (or JSON) file mapped onto dataclasses.

Every field has an explicit default; ``Config.to_dict`` echoes the resolved
values into the run manifest. Errors name the offending field, e.g.
``hyperparams.gamma: must be a positive real, got -1``.
"""

from __future__ import annotations

import dataclasses
import itertools
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .corpus import DEFAULT_EPOCH_SECONDS
from .model import Hyperparams, Solution


class ConfigError(ValueError):
    pass


@dataclass
class CorpusSection:
    path: Optional[str] = None
    min_frequency: int = 5
    epoch_seconds: float = DEFAULT_EPOCH_SECONDS
    test_fraction: float = 0.1

    def __post_init__(self):
        if self.min_frequency < 1:
            raise ValueError("min_frequency: must be a positive integer")
        if not self.epoch_seconds > 0:
            raise ValueError("epoch_seconds: must be positive")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction: must lie in [0, 1)")


@dataclass
class RegionsSection:
    # JSON file with "means" and "covs"; None fits k-means on the training split
    path: Optional[str] = None


@dataclass
class RunSection:
    seed: int = 0
    threads: int = 1
    top_n: int = 10
    epoch_checkpoints: bool = False

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError("seed: must be nonnegative")
        if self.threads < 1:
            raise ValueError("threads: must be a positive integer")
        if self.top_n < 1:
            raise ValueError("top_n: must be a positive integer")


@dataclass
class SyntheticSection:
    num_initial_clusters: int = 5
    num_epochs: int = 10
    docs_per_epoch: int = 200
    vocab_size: int = 50
    tokens_per_doc: int = 20
    init_scale: Optional[float] = 1.0
    topic_drift: Optional[float] = None
    region_drift: Optional[float] = None
    seed_mass: float = 1.0
    region_spread: float = 1.0
    epoch_seconds: float = 86400.0

    def __post_init__(self):
        for name in ("num_initial_clusters", "num_epochs", "docs_per_epoch", "vocab_size",
                     "tokens_per_doc"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name}: must be a positive integer")


@dataclass
class Config:
    corpus: CorpusSection = field(default_factory=CorpusSection)
    regions: RegionsSection = field(default_factory=RegionsSection)
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    run: RunSection = field(default_factory=RunSection)
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)

    def to_dict(self) -> dict:
        return {
            "corpus": dataclasses.asdict(self.corpus),
            "regions": dataclasses.asdict(self.regions),
            "hyperparams": self.hyperparams.to_dict(),
            "run": dataclasses.asdict(self.run),
            "synthetic": dataclasses.asdict(self.synthetic),
        }

    def synthetic_config(self):
        from .corpus import SyntheticConfig

        return SyntheticConfig(num_regions=self.hyperparams.num_regions,
                               hyperparams=self.hyperparams,
                               **dataclasses.asdict(self.synthetic))


SECTIONS = {"corpus": CorpusSection, "regions": RegionsSection, "hyperparams": Hyperparams,
            "run": RunSection, "synthetic": SyntheticSection}
PATH_FIELDS = {("corpus", "path"), ("regions", "path")}


def _check_type(value, hint, where: str):
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        args = typing.get_args(hint)
        if value is None and type(None) in args:
            return value
        hint = next(a for a in args if a is not type(None))
    if hint is bool:
        ok = isinstance(value, bool)
    elif hint is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif hint is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif hint is str:
        ok = isinstance(value, str)
    elif hint is Solution:
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        name = getattr(hint, "__name__", str(hint))
        raise ConfigError(f"{where}: expected {name}, got {value!r}")
    return value


def _build(section: str, cls, data: Any, base: Path):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"{section}.{key}: unknown field")
        value = _check_type(value, hints[key], f"{section}.{key}")
        if (section, key) in PATH_FIELDS and value is not None:
            value = str((base / value).resolve())
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ValueError as e:
        raise ConfigError(f"{section}.{e}") from None


def from_dict(data: Any, base: Path = Path(".")) -> Config:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    for key in data:
        if key not in SECTIONS:
            raise ConfigError(f"{key}: unknown section")
    return Config(**{name: _build(name, cls, data.get(name), base)
                     for name, cls in SECTIONS.items()})


def load(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"config: cannot read {path}: {e.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"config: {path} is not valid YAML ({e})") from None
    return from_dict(data, path.parent)


GRID_FIELDS = ("alpha", "gamma", "tau0", "rho0", "solution")


def load_grid(path) -> list[dict]:
    """Cartesian product of a ``{field: [values]}`` mapping, in file order."""
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"grid: cannot read {path}: {e.strerror}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"grid: {path} is not valid YAML ({e})") from None
    if not isinstance(data, dict) or not data:
        raise ConfigError("grid: expected a nonempty mapping of field -> list of values")
    for key, values in data.items():
        if key not in GRID_FIELDS:
            allowed = ", ".join(GRID_FIELDS)
            raise ConfigError(f"grid.{key}: not a sweepable field (allowed: {allowed})")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid.{key}: expected a nonempty list")
    keys = list(data)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(data[k] for k in keys))]
