"""Agreement score, accuracy and the softmax-spread boundary filter."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .data_io import Dataset
from .exceptions import ShapeError, ValidationError
from .nn import SolverNetwork, TrainConfig, predict, predict_proba, train

logger = logging.getLogger(__name__)


def _pair(a: np.ndarray, b: np.ndarray) -> tuple:
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"prediction vectors differ in length: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValidationError("prediction vectors are empty")
    return a, b


def agreement_score(preds_m: np.ndarray, preds_n: np.ndarray) -> float:
    """Percentage of positions where two models predict the same class."""
    a, b = _pair(preds_m, preds_n)
    return float(100.0 * np.count_nonzero(a == b) / a.size)


def accuracy(preds: np.ndarray, labels: np.ndarray) -> float:
    """Percentage of correct predictions."""
    a, b = _pair(preds, labels)
    return float(100.0 * np.count_nonzero(a == b) / a.size)


def softmax_std(solver: SolverNetwork, samples: np.ndarray) -> np.ndarray:
    """Population standard deviation (divisor K) of each row's softmax vector."""
    return predict_proba(solver, samples).std(axis=1)


def boundary_indices(solver: SolverNetwork, samples: np.ndarray, keep_fraction: float = 0.05) -> np.ndarray:
    """Indices of the ``ceil(keep_fraction * n)`` rows with the flattest softmax.

    Ties keep input order; indices come back sorted ascending.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValidationError("boundary filter needs a non-empty 2-D sample matrix")
    if not 0.0 < keep_fraction <= 1.0:
        raise ValidationError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    n = samples.shape[0]
    count = min(n, max(1, math.ceil(keep_fraction * n - 1e-9)))
    spread = softmax_std(solver, samples)
    return np.sort(np.argsort(spread, kind="stable")[:count])


def boundary_filter(solver: SolverNetwork, samples: np.ndarray, keep_fraction: float = 0.05) -> np.ndarray:
    """Rows closest to the solver's decision boundary, by least softmax spread."""
    samples = np.asarray(samples, dtype=np.float64)
    return samples[boundary_indices(solver, samples, keep_fraction)]


def boundary_dataset(
    solver: SolverNetwork,
    samples: np.ndarray,
    num_classes: int,
    keep_fraction: float = 0.05,
) -> Dataset:
    """:func:`boundary_filter` output labelled by the solver's argmax."""
    kept = boundary_filter(solver, samples, keep_fraction)
    labels = predict(solver, kept)
    if labels.size and labels.max() >= num_classes:
        raise ValidationError(f"solver labelled a boundary point as class {labels.max()}, outside [0, {num_classes})")
    return Dataset(kept, labels, num_classes)


@dataclass
class AgreementReport:
    alpha_a: float
    alpha_b: float
    accuracy_original: float
    accuracy_a: float
    accuracy_b: float
    sizes: Dict[str, int]
    seed: int


def agreement_experiment(
    original_train: Dataset,
    synth_a: Dataset,
    synth_b: Dataset,
    test: Dataset,
    seed: int,
    *,
    hidden_dim: int = 256,
    train_cfg: Optional[TrainConfig] = None,
) -> AgreementReport:
    """Train three same-initialised networks and score each synthetic model against
    the original-data model on the common ``test`` set.
    """
    cfg = train_cfg or TrainConfig(seed=seed)
    num_classes = max(original_train.num_classes, synth_a.num_classes, synth_b.num_classes, test.num_classes)
    initial = SolverNetwork.initialize(original_train.dim, hidden_dim, num_classes, seed)

    models = {}
    for name, data in (("original", original_train), ("a", synth_a), ("b", synth_b)):
        net, _ = train(initial.copy(), data, cfg)
        models[name] = predict(net, test.features)

    report = AgreementReport(
        alpha_a=agreement_score(models["original"], models["a"]),
        alpha_b=agreement_score(models["original"], models["b"]),
        accuracy_original=accuracy(models["original"], test.labels),
        accuracy_a=accuracy(models["a"], test.labels),
        accuracy_b=accuracy(models["b"], test.labels),
        sizes={"original": len(original_train), "a": len(synth_a), "b": len(synth_b), "test": len(test)},
        seed=seed,
    )
    logger.info("agreement: alpha_a=%.3f alpha_b=%.3f", report.alpha_a, report.alpha_b)
    return report
