"""
Run configuration files.

A run is described by one YAML file with one mapping per section::

    run:
      seed: 7
    data:
      kind: blobs
      num_classes: 3
    ga:
      population_size: 40
      threshold: 0.95

Missing sections and keys take their defaults; unknown ones are rejected with the
dotted key in the message.  ``--set section.key=value`` flags override the file.
Per-stage seeds are not configurable: they are all derived from ``run.seed``.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Type, TypeVar, Union

import yaml

from .enrichment import EnrichConfig
from .exceptions import ConfigError, ValidationError
from .genetic import GaConfig
from .nn import TrainConfig
from .rehearsal import SCHEMES

T = TypeVar("T")

DATA_KINDS = ("blobs", "moons", "idx", "dataset")
OLD_SOURCES = ("synthetic", "real")


# ---------------------------------------------------------------------------
# Sections
# ---------------------------------------------------------------------------


@dataclass
class RunSection:
    seed: int = 0
    threads: Optional[int] = None
    output_dir: str = "runs"
    run_id: Optional[str] = None
    progress: bool = False

    def __post_init__(self) -> None:
        if self.threads is not None and self.threads < 1:
            raise ValidationError(f"threads must be >= 1, got {self.threads}")

    @property
    def worker_threads(self) -> int:
        return self.threads or os.cpu_count() or 1


@dataclass
class DataSection:
    """Where a task's data comes from.

    ``blobs`` / ``moons`` are synthesised from the run seed, ``idx`` reads MNIST-style
    files and ``dataset`` reads files written by ``save_dataset``.
    Blob centers default to a circle; ``rotation`` turns it (the second task of a
    pair defaults to half a class step so its clusters sit between the first task's).
    """

    kind: str = "blobs"
    n_per_class: int = 200
    test_per_class: int = 100
    num_classes: int = 3
    centers: Optional[List[List[float]]] = None
    std: float = 0.05
    rotation: Optional[float] = None
    noise: float = 0.1
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    classes: Optional[List[int]] = None
    max_per_class: Optional[int] = None
    max_test_per_class: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind not in DATA_KINDS:
            raise ValidationError(f"unknown data kind {self.kind!r}; expected one of {', '.join(DATA_KINDS)}")
        if self.kind == "moons" and self.num_classes != 2:
            raise ValidationError("moons data always has num_classes = 2")
        if self.n_per_class < 1 or self.test_per_class < 1:
            raise ValidationError("n_per_class and test_per_class must be >= 1")


@dataclass
class ModelSection:
    hidden_dim: Optional[int] = None
    num_classes: Optional[int] = None
    checkpoint: Optional[str] = None

    def hidden_for(self, input_dim: int) -> int:
        if self.hidden_dim is not None:
            return self.hidden_dim
        return 16 if input_dim <= 2 else 256


@dataclass
class RehearseSection:
    scheme: str = "interleaved"
    epochs: int = 30
    sweep_fraction: float = 0.5
    old_source: str = "synthetic"
    class_offset: Optional[int] = None

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValidationError(f"unknown scheme {self.scheme!r}; valid schemes: {', '.join(SCHEMES)}")
        if self.old_source not in OLD_SOURCES:
            raise ValidationError(f"unknown old_source {self.old_source!r}; expected one of {', '.join(OLD_SOURCES)}")


@dataclass
class SyntheticSection:
    path: Optional[str] = None


@dataclass
class TrainOnSynthSection:
    repeats: int = 3
    include_real: bool = False

    def __post_init__(self) -> None:
        if self.repeats < 1:
            raise ValidationError(f"repeats must be >= 1, got {self.repeats}")


@dataclass
class BoundarySection:
    keep_fraction: float = 0.05
    cloud_size: int = 100_000
    repeats: int = 2
    epochs: int = 10
    # optimizer settings for the nets trained on the boundary points
    batch_size: int = 8
    learning_rate: float = 0.04

    def __post_init__(self) -> None:
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValidationError(f"keep_fraction must lie in (0, 1], got {self.keep_fraction}")
        if self.repeats < 1 or self.epochs < 1 or self.cloud_size < 1:
            raise ValidationError("repeats, epochs and cloud_size must be >= 1")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass
class AgreementSection:
    synth_b: str = "random"


@dataclass
class BenchSection:
    repeats: int = 1

    def __post_init__(self) -> None:
        if self.repeats < 1:
            raise ValidationError(f"repeats must be >= 1, got {self.repeats}")


@dataclass
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    new_data: Optional[DataSection] = None
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    ga: GaConfig = field(default_factory=GaConfig)
    enrich: EnrichConfig = field(default_factory=EnrichConfig)
    rehearse: RehearseSection = field(default_factory=RehearseSection)
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)
    train_on_synth: TrainOnSynthSection = field(default_factory=TrainOnSynthSection)
    boundary: BoundarySection = field(default_factory=BoundarySection)
    agreement: AgreementSection = field(default_factory=AgreementSection)
    bench: BenchSection = field(default_factory=BenchSection)

    def resolved(self) -> Dict[str, Any]:
        """Every section with defaults filled in, for the run manifest."""
        return {
            f.name: (dataclasses.asdict(getattr(self, f.name)) if getattr(self, f.name) is not None else None)
            for f in dataclasses.fields(self)
        }


_SECTIONS: Dict[str, Tuple[Type[Any], Tuple[str, ...]]] = {
    "run": (RunSection, ()),
    "data": (DataSection, ()),
    "new_data": (DataSection, ()),
    "model": (ModelSection, ()),
    "train": (TrainConfig, ("seed",)),
    "ga": (GaConfig, ("seed",)),
    "enrich": (EnrichConfig, ("seed",)),
    "rehearse": (RehearseSection, ()),
    "synthetic": (SyntheticSection, ()),
    "train_on_synth": (TrainOnSynthSection, ()),
    "boundary": (BoundarySection, ()),
    "agreement": (AgreementSection, ()),
    "bench": (BenchSection, ()),
}


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _coerce(key: str, default: Any, value: Any) -> Any:
    """Check ``value`` against the type of ``default``; exponent strings such as
    ``1e-3`` (YAML 1.1 leaves them unresolved) become floats.
    """
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                raise ConfigError(key, f"expected float, got str {value!r}") from None
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(key, f"expected {type(default).__name__}, got {type(value).__name__} {value!r}")
    return value


def _build_section(name: str, cls: Type[T], values: Any, excluded: Sequence[str]) -> T:
    if values is None:
        values = {}
    if not isinstance(values, Mapping):
        raise ConfigError(name, f"section must be a mapping, got {type(values).__name__}")
    defaults = cls()
    allowed = [f.name for f in dataclasses.fields(cls) if f.name not in excluded]
    checked: Dict[str, Any] = {}
    for key, value in values.items():
        if key not in allowed:
            raise ConfigError(f"{name}.{key}", f"unknown key; valid keys: {', '.join(allowed)}")
        checked[key] = _coerce(f"{name}.{key}", getattr(defaults, key), value)
    try:
        return cls(**checked)
    except ValidationError as exc:
        bad = next((k for k in values if k in str(exc)), None)
        raise ConfigError(f"{name}.{bad}" if bad else name, str(exc)) from exc


def parse_override(text: str) -> Tuple[str, str, Any]:
    """Split ``section.key=value``; the value is parsed as a YAML scalar."""
    dotted, sep, raw = text.partition("=")
    section, dot, key = dotted.strip().partition(".")
    if not sep or not dot or not section or not key:
        raise ConfigError(dotted or text, "overrides must look like section.key=value")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(dotted, f"cannot parse value {raw!r}: {exc}") from exc
    return section, key, value


def build_config(document: Mapping[str, Any], overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Validate a parsed document plus overrides into an :class:`ExperimentConfig`."""
    merged: Dict[str, Dict[str, Any]] = {}
    for section, values in (document or {}).items():
        if section not in _SECTIONS:
            raise ConfigError(str(section), f"unknown section; valid sections: {', '.join(_SECTIONS)}")
        if values is not None and not isinstance(values, Mapping):
            raise ConfigError(section, f"section must be a mapping, got {type(values).__name__}")
        merged[section] = dict(values or {})
    for text in overrides:
        section, key, value = parse_override(text)
        if section not in _SECTIONS:
            raise ConfigError(section, f"unknown section; valid sections: {', '.join(_SECTIONS)}")
        merged.setdefault(section, {})[key] = value

    built = {
        name: _build_section(name, cls, merged.get(name), excluded)
        for name, (cls, excluded) in _SECTIONS.items()
        if name in merged or name != "new_data"
    }
    return ExperimentConfig(**built)


def load_config(path: Optional[Union[str, Path]], overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Read a YAML config file (or none, for pure defaults) and apply overrides."""
    document: Any = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError("config", f"config file not found: {path}")
        try:
            document = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"{path}: {exc}") from exc
        if not isinstance(document, Mapping):
            raise ConfigError("config", f"{path}: top level must be a mapping of sections")
    return build_config(document, overrides)
