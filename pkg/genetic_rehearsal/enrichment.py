"""
Gaussian enrichment of evolved exemplars.

Step one fits a Gaussian to every class of the raw genetic population and samples
more points of that class.  Step two fits a single Gaussian to everything step one
produced and samples a wider sheet of points; each of those is labelled by the
solver and kept only when the solver is confident enough about it.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from ._rng import derive_rng
from .data_io import Dataset
from .exceptions import NumericalError, ShapeError, ValidationError
from .genetic import GaConfig, RawGeneration, generate_raw
from .nn import SolverNetwork, predict_proba

logger = logging.getLogger(__name__)

DEFAULT_REGULARIZER = 1e-6
_MAX_REGULARIZER = 1e6


# ---------------------------------------------------------------------------
# Gaussian model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianModel:
    """Mean, MLE covariance and the diagonal regularizer that made it factorizable.

    ``cholesky`` is the lower factor of ``covariance + regularizer * I``; density and
    sampling both use that regularized matrix.
    """

    mean: np.ndarray
    covariance: np.ndarray
    regularizer: float
    cholesky: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    @property
    def effective_covariance(self) -> np.ndarray:
        return self.covariance + self.regularizer * np.eye(self.dim)


def _factorize(covariance: np.ndarray, start: float):
    reg = start
    eye = np.eye(covariance.shape[0])
    while reg <= _MAX_REGULARIZER:
        try:
            return reg, cholesky(covariance + reg * eye, lower=True)
        except LinAlgError:
            reg *= 10.0
    raise NumericalError(f"covariance not factorizable even with regularizer {_MAX_REGULARIZER:g}")


def fit_gaussian(samples: np.ndarray, regularizer: float = DEFAULT_REGULARIZER) -> GaussianModel:
    """Sample mean and maximum-likelihood (divisor ``n``) covariance.

    The diagonal regularizer starts at ``regularizer`` and grows tenfold until the
    Cholesky factorization succeeds.

    :raises ValidationError: with fewer than two samples.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.ndim != 2:
        raise ShapeError(f"samples must be 2-D, got shape {samples.shape}")
    if samples.shape[0] < 2:
        raise ValidationError(f"need at least 2 samples to fit a Gaussian, got {samples.shape[0]}")
    if regularizer <= 0:
        raise ValidationError(f"regularizer must be > 0, got {regularizer}")
    mean = samples.mean(axis=0)
    covariance = np.atleast_2d(np.cov(samples, rowvar=False, bias=True))
    reg, lower = _factorize(covariance, regularizer)
    if reg > 1e-3:
        logger.warning("covariance needed regularizer %.1e to factorize", reg)
    return GaussianModel(mean, covariance, reg, lower)


def log_density(model: GaussianModel, x: np.ndarray) -> np.ndarray:
    """Log of the Gaussian density, via the Cholesky factor."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.dim:
        raise ShapeError(f"expected points of dim {model.dim}, got shape {x.shape}")
    z = solve_triangular(model.cholesky, (x - model.mean).T, lower=True)
    log_det = 2.0 * np.sum(np.log(np.diag(model.cholesky)))
    out = -0.5 * (model.dim * math.log(2.0 * math.pi) + log_det + np.sum(z * z, axis=0))
    return out[0] if single else out


def gaussian_density(model: GaussianModel, x: np.ndarray) -> np.ndarray:
    return np.exp(log_density(model, x))


def sample_gaussian(model: GaussianModel, n: int, rng: np.random.Generator, *, clip: bool = True) -> np.ndarray:
    """``n`` draws of ``mean + L z``; clamped into ``[0, 1]`` unless ``clip`` is off."""
    if n < 0:
        raise ValidationError(f"n must be >= 0, got {n}")
    if n == 0:
        return np.zeros((0, model.dim))
    z = rng.standard_normal((n, model.dim))
    draws = model.mean + z @ model.cholesky.T
    return np.clip(draws, 0.0, 1.0) if clip else draws


# ---------------------------------------------------------------------------
# Enrichment
# ---------------------------------------------------------------------------


@dataclass
class EnrichConfig:
    """Enrichment sizes and filters.

    :param keep_step1: keep the step-one rows next to the step-two sheet (otherwise
        only the kept step-two rows are returned).
    """

    n_per_class: int = 500
    n_global: int = 2000
    min_confidence: float = 0.5
    keep_step1: bool = True
    regularizer: float = DEFAULT_REGULARIZER
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_per_class < 0 or self.n_global < 0:
            raise ValidationError("n_per_class and n_global must be >= 0")
        if not 0.0 <= self.min_confidence <= 1.0:
            raise ValidationError(f"min_confidence must lie in [0, 1], got {self.min_confidence}")
        if self.regularizer <= 0:
            raise ValidationError(f"regularizer must be > 0, got {self.regularizer}")

    @classmethod
    def sized_for(
        cls,
        total: int,
        num_classes: int,
        raw_count: int,
        *,
        global_share: float = 0.5,
        **kwargs,
    ) -> "EnrichConfig":
        """Split a requested synthetic size between the per-class and global steps.

        The global step may discard points, so ``total`` is a request, not a promise.
        """
        if not 0.0 <= global_share <= 1.0:
            raise ValidationError(f"global_share must lie in [0, 1], got {global_share}")
        budget = max(total - raw_count, 0)
        n_global = int(round(budget * global_share))
        n_per_class = (budget - n_global) // num_classes
        return cls(n_per_class=n_per_class, n_global=n_global, **kwargs)


@dataclass
class EnrichmentReport:
    raw_count: int = 0
    step1_added: int = 0
    step2_requested: int = 0
    step2_kept: int = 0
    class_regularizers: Dict[int, float] = field(default_factory=dict)
    global_regularizer: Optional[float] = None
    class_counts: Dict[int, int] = field(default_factory=dict)
    total: int = 0

    @property
    def discard_rate(self) -> float:
        if not self.step2_requested:
            return 0.0
        return 1.0 - self.step2_kept / self.step2_requested


def enrich_step1(
    raw: Dataset,
    n_per_class: int,
    rng: np.random.Generator,
    *,
    regularizer: float = DEFAULT_REGULARIZER,
    report: Optional[EnrichmentReport] = None,
) -> Dataset:
    """Fit a Gaussian per class and append ``n_per_class`` draws of each class.

    :raises ValidationError: naming the first class with fewer than two rows.
    """
    counts = raw.class_counts()
    for label, count in enumerate(counts):
        if count < 2:
            raise ValidationError(f"class {label} has {count} raw samples; at least 2 are needed")
    if report is not None:
        report.raw_count = len(raw)
    if n_per_class == 0:
        return raw
    parts = [raw]
    for label in range(raw.num_classes):
        model = fit_gaussian(raw.of_class(label), regularizer)
        if report is not None:
            report.class_regularizers[label] = model.regularizer
        draws = sample_gaussian(model, n_per_class, rng)
        parts.append(Dataset(draws, np.full(n_per_class, label), raw.num_classes))
    if report is not None:
        report.step1_added = n_per_class * raw.num_classes
    logger.info("step 1 added %d points per class (%d classes)", n_per_class, raw.num_classes)
    return Dataset.concatenate(parts, raw.num_classes)


def enrich_step2(
    step1_data: Dataset,
    n_global: int,
    solver: SolverNetwork,
    min_confidence: float,
    rng: np.random.Generator,
    *,
    keep_step1: bool = True,
    regularizer: float = DEFAULT_REGULARIZER,
    report: Optional[EnrichmentReport] = None,
) -> Dataset:
    """Fit one Gaussian to all rows, sample ``n_global`` points and label them by the solver.

    Points whose top softmax confidence is below ``min_confidence`` are dropped, so
    fewer than ``n_global`` rows may be added.
    """
    if report is not None:
        report.step2_requested = n_global
    if n_global == 0:
        return step1_data
    model = fit_gaussian(step1_data.features, regularizer)
    draws = sample_gaussian(model, n_global, rng)
    proba = predict_proba(solver, draws)
    labels = np.argmax(proba, axis=1)
    keep = proba.max(axis=1) >= min_confidence
    if np.any(labels[keep] >= step1_data.num_classes):
        # Shared heads can vote for a class outside the synthetic label space.
        keep &= labels < step1_data.num_classes
    kept = Dataset(draws[keep], labels[keep], step1_data.num_classes)
    if report is not None:
        report.global_regularizer = model.regularizer
        report.step2_kept = len(kept)
    discard = 1.0 - len(kept) / n_global
    log = logger.warning if discard > 0.5 else logger.info
    log("step 2 kept %d of %d global points (discard rate %.1f%%)", len(kept), n_global, 100.0 * discard)
    if not keep_step1:
        return kept
    return Dataset.concatenate([step1_data, kept], step1_data.num_classes)


@dataclass
class SyntheticBuild:
    dataset: Dataset
    raw: RawGeneration
    report: EnrichmentReport
    timings: Dict[str, float]


def build_synthetic(
    solver: SolverNetwork,
    num_classes: int,
    ga_cfg: GaConfig,
    enrich_cfg: EnrichConfig,
    *,
    threads: int = 1,
    progress: bool = False,
) -> SyntheticBuild:
    """Genetic generation followed by both enrichment steps.

    Only the solver is consulted; no original training data is needed.
    """
    report = EnrichmentReport()
    timings: Dict[str, float] = {}

    started = time.perf_counter()
    raw = generate_raw(solver, num_classes, ga_cfg, threads=threads, progress=progress)
    timings["genetic"] = time.perf_counter() - started

    started = time.perf_counter()
    step1 = enrich_step1(
        raw.dataset,
        enrich_cfg.n_per_class,
        derive_rng(enrich_cfg.seed, "enrich", 1),
        regularizer=enrich_cfg.regularizer,
        report=report,
    )
    timings["enrich_step1"] = time.perf_counter() - started

    started = time.perf_counter()
    final = enrich_step2(
        step1,
        enrich_cfg.n_global,
        solver,
        enrich_cfg.min_confidence,
        derive_rng(enrich_cfg.seed, "enrich", 2),
        keep_step1=enrich_cfg.keep_step1,
        regularizer=enrich_cfg.regularizer,
        report=report,
    )
    timings["enrich_step2"] = time.perf_counter() - started

    report.total = len(final)
    report.class_counts = {int(c): int(n) for c, n in enumerate(final.class_counts())}
    logger.info("synthetic dataset: %d rows, per class %s", report.total, report.class_counts)
    return SyntheticBuild(final, raw, report, timings)
