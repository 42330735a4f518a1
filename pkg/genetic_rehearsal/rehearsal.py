"""
Two-task sequences with rehearsal of the first task.

The solver keeps one shared softmax head: the old task owns class ids
``0..K1-1`` and the new task ``K1..K1+K2-1``.  Old-task accuracy is always
measured on real held-out data.

Schemes
-------
``interleaved``
    shuffled union of old rehearsal data and new data, trained epoch by epoch
``serial``
    one epoch of old rehearsal data, then one epoch of new data, per cycle
``sweep``
    every minibatch mixes fresh draws of old rehearsal data into new data
``random``
    interleaved, with uniform random vectors standing in for the old data
``none``
    new data only (the forgetting baseline)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .data_io import Dataset
from .exceptions import ShapeError, ValidationError
from .nn import SolverNetwork, TrainConfig, Trainer, accuracy_percent

logger = logging.getLogger(__name__)

SCHEMES = ("interleaved", "serial", "sweep", "random", "none")


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    train: Dataset
    test: Dataset
    class_offset: int = 0

    def __post_init__(self) -> None:
        if self.class_offset < 0:
            raise ValidationError(f"class_offset must be >= 0, got {self.class_offset}")
        if self.train.dim != self.test.dim:
            raise ShapeError(f"train has {self.train.dim} features but test has {self.test.dim}")

    @property
    def num_classes(self) -> int:
        return max(self.train.num_classes, self.test.num_classes)

    @property
    def output_classes(self) -> int:
        """Head width needed to hold this task after the offset."""
        return self.class_offset + self.num_classes

    def shifted_train(self) -> Dataset:
        return self.train.with_offset(self.class_offset, self.output_classes)

    def shifted_test(self) -> Dataset:
        return self.test.with_offset(self.class_offset, self.output_classes)


@dataclass
class RetentionRecord:
    epoch: int
    old_task_accuracy: float
    new_task_accuracy: float
    scheme: str


@dataclass
class RehearsalConfig:
    """Scheme settings; ``train`` carries the optimizer and minibatch settings."""

    scheme: str = "interleaved"
    epochs: int = 30
    sweep_fraction: float = 0.5
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValidationError(f"unknown scheme {self.scheme!r}; valid schemes: {', '.join(SCHEMES)}")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if not 0.0 < self.sweep_fraction < 1.0:
            raise ValidationError(f"sweep_fraction must lie in (0, 1), got {self.sweep_fraction}")


def interleave(old: Dataset, new: Dataset, rng: np.random.Generator) -> Dataset:
    """Shuffled union of ``old`` and ``new``.

    :raises ValidationError: when both are empty.
    """
    if len(old) == 0 and len(new) == 0:
        raise ValidationError("cannot interleave two empty datasets")
    union = Dataset.concatenate([old, new])
    return union.subset(rng.permutation(len(union)))


def random_vector_dataset(d: int, n_per_class: int, num_classes: int, rng: np.random.Generator) -> Dataset:
    """Uniform ``[0, 1]^d`` vectors, ``n_per_class`` labelled with each class."""
    if d < 1 or n_per_class < 0 or num_classes < 1:
        raise ValidationError("need d >= 1, n_per_class >= 0 and num_classes >= 1")
    features = rng.random((n_per_class * num_classes, d))
    labels = np.repeat(np.arange(num_classes), n_per_class)
    return Dataset(features, labels, num_classes)


def _prepare(solver: SolverNetwork, old_synth: Dataset, new_task: TaskSpec, old_test: Dataset):
    if new_task.output_classes > solver.num_classes:
        raise ValidationError(
            f"new task needs {new_task.output_classes} output units, solver has {solver.num_classes}"
        )
    for name, ds in (("old rehearsal data", old_synth), ("old test data", old_test), ("new task", new_task.train)):
        if ds.dim != solver.input_dim:
            raise ShapeError(f"{name} has {ds.dim} features, solver expects {solver.input_dim}")
    return new_task.shifted_train(), new_task.shifted_test()


def _record(epoch: int, solver: SolverNetwork, old_test: Dataset, new_test: Dataset, scheme: str) -> RetentionRecord:
    record = RetentionRecord(
        epoch=epoch,
        old_task_accuracy=accuracy_percent(solver, old_test),
        new_task_accuracy=accuracy_percent(solver, new_test),
        scheme=scheme,
    )
    logger.info(
        "%s epoch %d: old=%.2f%% new=%.2f%%", scheme, epoch, record.old_task_accuracy, record.new_task_accuracy
    )
    return record


def run_interleaved(
    solver: SolverNetwork,
    old_synth: Dataset,
    new_task: TaskSpec,
    old_test: Dataset,
    epochs: int = 30,
    *,
    train_cfg: Optional[TrainConfig] = None,
    scheme: str = "interleaved",
) -> List[RetentionRecord]:
    """Train on the shuffled union of ``old_synth`` and the new task, one record per epoch.

    An empty ``old_synth`` is the no-rehearsal control.
    """
    cfg = train_cfg or TrainConfig()
    new_train, new_test = _prepare(solver, old_synth, new_task, old_test)
    trainer = Trainer(solver, cfg)
    data = interleave(old_synth, new_train, trainer.rng)
    records = []
    for epoch in range(1, epochs + 1):
        trainer.run_epoch(data)
        records.append(_record(epoch, solver, old_test, new_test, scheme))
    return records


def run_serial(
    solver: SolverNetwork,
    old_synth: Dataset,
    new_task: TaskSpec,
    old_test: Dataset,
    cycles: int = 30,
    *,
    train_cfg: Optional[TrainConfig] = None,
) -> List[RetentionRecord]:
    """Alternate one epoch of ``old_synth`` with one epoch of new data; one record per cycle."""
    cfg = train_cfg or TrainConfig()
    new_train, new_test = _prepare(solver, old_synth, new_task, old_test)
    trainer = Trainer(solver, cfg)
    records = []
    for cycle in range(1, cycles + 1):
        if len(old_synth):
            trainer.run_epoch(old_synth)
        trainer.run_epoch(new_train)
        records.append(_record(cycle, solver, old_test, new_test, "serial"))
    return records


def run_sweep(
    solver: SolverNetwork,
    old_synth: Dataset,
    new_task: TaskSpec,
    old_test: Dataset,
    cycles: int = 30,
    fraction: float = 0.5,
    *,
    train_cfg: Optional[TrainConfig] = None,
    on_batch: Optional[Callable[[int, int], None]] = None,
) -> List[RetentionRecord]:
    """Mix freshly drawn old rows into every new-task minibatch.

    Each batch holds ``round(batch_size * fraction)`` old rows (at least one) and
    the rest new rows; ``on_batch(n_old, n_new)`` sees every batch's composition.
    One record per pass over the new data.
    """
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"sweep fraction must lie in (0, 1), got {fraction}")
    if len(old_synth) == 0:
        raise ValidationError("sweep rehearsal needs old rehearsal data")
    cfg = train_cfg or TrainConfig()
    new_train, new_test = _prepare(solver, old_synth, new_task, old_test)
    trainer = Trainer(solver, cfg)
    n_old = min(max(int(round(cfg.batch_size * fraction)), 1), max(cfg.batch_size - 1, 1))
    n_new = max(cfg.batch_size - n_old, 1)
    records = []
    for cycle in range(1, cycles + 1):
        order = trainer.rng.permutation(len(new_train))
        for start in range(0, len(order), n_new):
            new_idx = order[start : start + n_new]
            old_idx = trainer.rng.integers(0, len(old_synth), size=n_old)
            features = np.concatenate([old_synth.features[old_idx], new_train.features[new_idx]])
            labels = np.concatenate([old_synth.labels[old_idx], new_train.labels[new_idx]])
            trainer.train_batch(features, labels)
            if on_batch is not None:
                on_batch(old_idx.size, new_idx.size)
        records.append(_record(cycle, solver, old_test, new_test, "sweep"))
    return records


def run_scheme(
    solver: SolverNetwork,
    old_data: Optional[Dataset],
    new_task: TaskSpec,
    old_test: Dataset,
    cfg: RehearsalConfig,
    rng: np.random.Generator,
) -> List[RetentionRecord]:
    """Dispatch ``cfg.scheme``.

    ``old_data`` is the rehearsal set for ``interleaved`` / ``serial`` / ``sweep``
    (synthetic, or the real old training data for the upper bound).  ``random``
    draws uniform vectors of the same size and class balance; ``none`` ignores it.
    """
    old_classes = old_test.num_classes
    empty = Dataset.empty(solver.input_dim, old_classes)
    if cfg.scheme == "none":
        return run_interleaved(solver, empty, new_task, old_test, cfg.epochs, train_cfg=cfg.train, scheme="none")
    if old_data is None or len(old_data) == 0:
        raise ValidationError(f"scheme {cfg.scheme!r} needs old rehearsal data")
    if cfg.scheme == "random":
        per_class = max(len(old_data) // old_classes, 1)
        vectors = random_vector_dataset(solver.input_dim, per_class, old_classes, rng)
        return run_interleaved(solver, vectors, new_task, old_test, cfg.epochs, train_cfg=cfg.train, scheme="random")
    if cfg.scheme == "serial":
        return run_serial(solver, old_data, new_task, old_test, cfg.epochs, train_cfg=cfg.train)
    if cfg.scheme == "sweep":
        return run_sweep(solver, old_data, new_task, old_test, cfg.epochs, cfg.sweep_fraction, train_cfg=cfg.train)
    return run_interleaved(solver, old_data, new_task, old_test, cfg.epochs, train_cfg=cfg.train)
