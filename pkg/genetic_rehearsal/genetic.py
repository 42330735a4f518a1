"""
Genetic generation of class exemplars against a trained solver.

Each generation keeps the fittest quarter of the population (the elite), then
refills it with crossover children of adjacent elite pairs, mutants of every
elite member and crossover children of adjacent mutants.  Fitness is the
solver's softmax confidence for the target class, and a class is done once the
least fit organism clears the threshold.

Quick start::

    from genetic_rehearsal.genetic import GaConfig, generate_raw

    raw = generate_raw(solver, num_classes=10, cfg=GaConfig(population_size=400))
    print(raw.dataset.class_counts(), raw.converged)
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist
from tqdm import tqdm

from ._rng import derive_rng
from .data_io import Dataset
from .exceptions import GenerationError, RehearsalError, ShapeError, ValidationError
from .nn import SolverNetwork, forward, softmax

logger = logging.getLogger(__name__)

SELECTIONS = ("linear", "roulette", "tournament")
CROSSOVERS = ("uniform", "single_point")


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass
class Organism:
    genome: np.ndarray
    fitness: float = 0.0
    fresh: bool = False


@dataclass
class Population:
    organisms: List[Organism]
    target_class: int

    def __len__(self) -> int:
        return len(self.organisms)

    def genomes(self) -> np.ndarray:
        if not self.organisms:
            return np.zeros((0, 0))
        return np.stack([o.genome for o in self.organisms])

    def fitnesses(self) -> np.ndarray:
        return np.array([o.fitness for o in self.organisms], dtype=np.float64)

    @classmethod
    def random(cls, size: int, dim: int, target_class: int, rng: np.random.Generator) -> "Population":
        genomes = rng.random((size, dim))
        return cls([Organism(g) for g in genomes], target_class)


@dataclass
class GaConfig:
    """Genetic generator settings.

    :param population_size: ``m``; must be a positive multiple of 4.
    :param threshold: ``tau``; a population converges when every fitness exceeds it.
    :param selection: ``linear``, ``roulette`` or ``tournament``.
    :param extinction_fraction: share of the population removed before a tournament.
    :param duplicate_epsilon: L-infinity radius under which two genomes count as duplicates.
    """

    population_size: int = 40
    threshold: float = 0.99
    selection: str = "linear"
    extinction_fraction: float = 0.25
    mutation_rate: float = 0.05
    mutation_magnitude: float = 0.2
    crossover: str = "uniform"
    max_generations: int = 500
    culture_count: int = 1
    seed: int = 0
    duplicate_epsilon: float = 0.0
    track_diversity: bool = True

    def __post_init__(self) -> None:
        if self.population_size < 4 or self.population_size % 4:
            raise ValidationError(f"population_size must be a positive multiple of 4, got {self.population_size}")
        if not 0.0 < self.threshold < 1.0:
            raise ValidationError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.selection not in SELECTIONS:
            raise ValidationError(f"unknown selection {self.selection!r}; expected one of {', '.join(SELECTIONS)}")
        if self.crossover not in CROSSOVERS:
            raise ValidationError(f"unknown crossover {self.crossover!r}; expected one of {', '.join(CROSSOVERS)}")
        if not 0.0 <= self.extinction_fraction < 1.0:
            raise ValidationError(f"extinction_fraction must lie in [0, 1), got {self.extinction_fraction}")
        if self.selection == "tournament":
            _survivor_count(self.population_size, self.extinction_fraction, self.elite_size)
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValidationError(f"mutation_rate must lie in [0, 1], got {self.mutation_rate}")
        if self.mutation_magnitude < 0:
            raise ValidationError(f"mutation_magnitude must be >= 0, got {self.mutation_magnitude}")
        if self.max_generations < 1:
            raise ValidationError(f"max_generations must be >= 1, got {self.max_generations}")
        if self.culture_count < 1:
            raise ValidationError(f"culture_count must be >= 1, got {self.culture_count}")
        if self.duplicate_epsilon < 0:
            raise ValidationError(f"duplicate_epsilon must be >= 0, got {self.duplicate_epsilon}")

    @property
    def elite_size(self) -> int:
        return self.population_size // 4


@dataclass
class GenerationStats:
    generation: int
    target_class: int
    culture: int
    min_fitness: float
    mean_fitness: float
    max_fitness: float
    duplicates: int
    mean_distance: float


@dataclass
class EvolutionResult:
    population: Population
    converged: bool
    generations: int
    culture: int = 0
    history: List[GenerationStats] = field(default_factory=list)


@dataclass
class RawGeneration:
    """Every class and culture merged into one labelled dataset."""

    dataset: Dataset
    results: List[EvolutionResult]

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.results)

    def history(self) -> List[GenerationStats]:
        return [row for r in self.results for row in r.history]


# ---------------------------------------------------------------------------
# Fitness
# ---------------------------------------------------------------------------


def evaluate_fitness(solver: SolverNetwork, pop: Population) -> Population:
    """Softmax confidence of ``pop.target_class`` for every organism, order preserved.

    :raises ValidationError: on an empty population.
    :raises ShapeError: when genome length differs from the solver input size.
    """
    if len(pop) == 0:
        raise ValidationError("cannot evaluate an empty population")
    if not 0 <= pop.target_class < solver.num_classes:
        raise ValidationError(f"target class {pop.target_class} outside [0, {solver.num_classes})")
    genomes = pop.genomes()
    if genomes.shape[1] != solver.input_dim:
        raise ShapeError(f"genomes have {genomes.shape[1]} genes, solver expects {solver.input_dim}")
    confidence = softmax(forward(solver, genomes))[:, pop.target_class]
    return Population(
        [Organism(o.genome, float(f), True) for o, f in zip(pop.organisms, confidence)],
        pop.target_class,
    )


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------


def _quota(pop: Population, count: Optional[int]) -> int:
    k = len(pop) // 4 if count is None else count
    if not 1 <= k <= len(pop):
        raise ValidationError(f"cannot select {k} of {len(pop)} organisms")
    return k


def _fittest(organisms: Sequence[Organism], k: int) -> List[Organism]:
    fitness = np.array([o.fitness for o in organisms], dtype=np.float64)
    order = np.argsort(-fitness, kind="stable")[:k]
    return [organisms[i] for i in order]


def select_linear(pop: Population, count: Optional[int] = None) -> List[Organism]:
    """Top quarter by fitness, descending; equal fitness keeps population order."""
    return _fittest(pop.organisms, _quota(pop, count))


def select_roulette(pop: Population, rng: np.random.Generator, count: Optional[int] = None) -> List[Organism]:
    """Draw without replacement with probability proportional to fitness.

    An all-zero population falls back to uniform draws; when fewer organisms than
    the quota have positive fitness, all of them are taken and the rest are drawn
    uniformly from the zero-fitness remainder.
    """
    k = _quota(pop, count)
    fitness = pop.fitnesses()
    positive = np.flatnonzero(fitness > 0)
    total = fitness.sum()
    if total <= 0:
        picks = rng.choice(len(pop), size=k, replace=False)
    elif positive.size >= k:
        picks = rng.choice(len(pop), size=k, replace=False, p=fitness / total)
    else:
        zeros = np.flatnonzero(fitness <= 0)
        picks = np.concatenate([positive, rng.choice(zeros, size=k - positive.size, replace=False)])
    return [pop.organisms[i] for i in picks]


def _survivor_count(m: int, fraction: float, k: int) -> int:
    survivors = m - math.floor(fraction * m)
    if survivors < k:
        raise ValidationError(
            f"extinction fraction {fraction} leaves {survivors} survivors, fewer than the elite quota {k}"
        )
    return survivors


def select_tournament(
    pop: Population,
    p: float,
    rng: np.random.Generator,
    count: Optional[int] = None,
) -> List[Organism]:
    """Remove ``floor(p * m)`` random organisms, then take the fittest of the rest."""
    k = _quota(pop, count)
    if not 0.0 <= p < 1.0:
        raise ValidationError(f"extinction fraction must lie in [0, 1), got {p}")
    m = len(pop)
    survivors = _survivor_count(m, p, k)
    if survivors == m:
        return _fittest(pop.organisms, k)
    extinct = rng.choice(m, size=m - survivors, replace=False)
    alive = np.setdiff1d(np.arange(m), extinct)
    return _fittest([pop.organisms[i] for i in alive], k)


def select(pop: Population, cfg: GaConfig, rng: np.random.Generator) -> List[Organism]:
    if cfg.selection == "roulette":
        return select_roulette(pop, rng, cfg.elite_size)
    if cfg.selection == "tournament":
        return select_tournament(pop, cfg.extinction_fraction, rng, cfg.elite_size)
    return select_linear(pop, cfg.elite_size)


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


def crossover(a: Organism, b: Organism, rng: np.random.Generator, kind: str = "uniform") -> Organism:
    """Child taking each gene from ``a`` or ``b``; fitness is stale."""
    if a.genome.shape != b.genome.shape:
        raise ShapeError(f"parent genomes differ: {a.genome.shape} vs {b.genome.shape}")
    d = a.genome.shape[0]
    if kind == "single_point":
        point = int(rng.integers(1, d)) if d > 1 else d
        child = np.concatenate([a.genome[:point], b.genome[point:]])
    elif kind == "uniform":
        mask = rng.random(d) < 0.5
        child = np.where(mask, a.genome, b.genome)
    else:
        raise ValidationError(f"unknown crossover {kind!r}; expected one of {', '.join(CROSSOVERS)}")
    return Organism(child)


def mutate(o: Organism, rate: float, magnitude: float, rng: np.random.Generator) -> Organism:
    """Add ``U(-magnitude, magnitude)`` to each gene with probability ``rate``, then clamp."""
    d = o.genome.shape[0]
    mask = rng.random(d) < rate
    noise = rng.uniform(-magnitude, magnitude, size=d)
    return Organism(np.clip(o.genome + mask * noise, 0.0, 1.0))


def next_generation(elite: Sequence[Organism], cfg: GaConfig, rng: np.random.Generator, target_class: int = 0) -> Population:
    """Elite, then elite children, mutants and mutant children; pairs wrap around."""
    k = len(elite)
    if k != cfg.elite_size:
        raise ValidationError(f"elite has {k} organisms, expected {cfg.elite_size}")
    children = [crossover(elite[j], elite[(j + 1) % k], rng, cfg.crossover) for j in range(k)]
    mutants = [mutate(e, cfg.mutation_rate, cfg.mutation_magnitude, rng) for e in elite]
    mutant_children = [crossover(mutants[j], mutants[(j + 1) % k], rng, cfg.crossover) for j in range(k)]
    return Population(list(elite) + children + mutants + mutant_children, target_class)


# ---------------------------------------------------------------------------
# Diversity
# ---------------------------------------------------------------------------


def _genomes(pop) -> np.ndarray:
    return pop.genomes() if isinstance(pop, Population) else np.asarray(pop, dtype=np.float64)


def duplicate_count(pop, epsilon: float = 0.0) -> int:
    """Organisms within L-infinity ``epsilon`` of some earlier organism."""
    genomes = _genomes(pop)
    m = genomes.shape[0]
    if m < 2:
        return 0
    dist = pdist(genomes, metric="chebyshev")
    close = dist <= epsilon
    # pdist order is (0,1), (0,2), ..., (1,2), ...; j is the later index of each pair.
    _, j = np.triu_indices(m, k=1)
    return int(np.unique(j[close]).size)


def mean_pairwise_distance(pop) -> float:
    """Mean Euclidean distance over all unordered pairs; 0 for fewer than two."""
    genomes = _genomes(pop)
    if genomes.shape[0] < 2:
        return 0.0
    return float(np.mean(pdist(genomes, metric="euclidean")))


def _stats(pop: Population, generation: int, culture: int, cfg: GaConfig) -> GenerationStats:
    fitness = pop.fitnesses()
    if cfg.track_diversity:
        duplicates = duplicate_count(pop, cfg.duplicate_epsilon)
        distance = mean_pairwise_distance(pop)
    else:
        duplicates, distance = 0, float("nan")
    return GenerationStats(
        generation=generation,
        target_class=pop.target_class,
        culture=culture,
        min_fitness=float(fitness.min()),
        mean_fitness=float(fitness.mean()),
        max_fitness=float(fitness.max()),
        duplicates=duplicates,
        mean_distance=distance,
    )


# ---------------------------------------------------------------------------
# Evolution
# ---------------------------------------------------------------------------


def evolve_class(
    solver: SolverNetwork,
    target_class: int,
    cfg: GaConfig,
    rng: np.random.Generator,
    *,
    culture: int = 0,
) -> EvolutionResult:
    """Evolve one culture until every organism's confidence exceeds ``cfg.threshold``.

    Stops at ``cfg.max_generations`` with ``converged=False`` instead of raising.
    """
    if not 0 <= target_class < solver.num_classes:
        raise ValidationError(f"target class {target_class} outside [0, {solver.num_classes})")
    pop = Population.random(cfg.population_size, solver.input_dim, target_class, rng)
    pop = evaluate_fitness(solver, pop)
    history = [_stats(pop, 0, culture, cfg)]
    generation = 0
    while pop.fitnesses().min() <= cfg.threshold:
        if generation >= cfg.max_generations:
            logger.warning(
                "class %d culture %d: no convergence after %d generations (min fitness %.4f)",
                target_class,
                culture,
                generation,
                history[-1].min_fitness,
            )
            return EvolutionResult(pop, False, generation, culture, history)
        elite = select(pop, cfg, rng)
        pop = evaluate_fitness(solver, next_generation(elite, cfg, rng, target_class))
        generation += 1
        history.append(_stats(pop, generation, culture, cfg))
        logger.debug(
            "class %d culture %d gen %d: min=%.4f mean=%.4f max=%.4f",
            target_class,
            culture,
            generation,
            history[-1].min_fitness,
            history[-1].mean_fitness,
            history[-1].max_fitness,
        )
    logger.info("class %d culture %d converged after %d generations", target_class, culture, generation)
    return EvolutionResult(pop, True, generation, culture, history)


def _evolve_job(solver: SolverNetwork, cfg: GaConfig, job: Tuple[int, int]) -> EvolutionResult:
    target_class, culture = job
    try:
        return evolve_class(solver, target_class, cfg, derive_rng(cfg.seed, "ga", target_class, culture), culture=culture)
    except RehearsalError as exc:
        raise GenerationError(target_class, culture, str(exc)) from exc


def generate_raw(
    solver: SolverNetwork,
    num_classes: int,
    cfg: GaConfig,
    *,
    threads: int = 1,
    progress: bool = False,
) -> RawGeneration:
    """Evolve ``cfg.culture_count`` independent cultures for every class and merge them.

    Each culture draws from its own stream derived from ``(cfg.seed, class, culture)``,
    so the result does not depend on ``threads``.  Rows are ordered by class, then
    culture.
    """
    if not 1 <= num_classes <= solver.num_classes:
        raise ValidationError(f"num_classes must lie in [1, {solver.num_classes}], got {num_classes}")
    jobs = [(t, c) for t in range(num_classes) for c in range(cfg.culture_count)]
    bar = tqdm(total=len(jobs), desc="evolving", unit="culture", disable=not progress)
    try:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                futures = [pool.submit(_evolve_job, solver, cfg, job) for job in jobs]
                results = []
                for future in futures:
                    results.append(future.result())
                    bar.update()
        else:
            results = []
            for job in jobs:
                results.append(_evolve_job(solver, cfg, job))
                bar.update()
    finally:
        bar.close()

    features = np.concatenate([r.population.genomes() for r in results], axis=0)
    labels = np.concatenate([np.full(len(r.population), r.population.target_class) for r in results])
    raw = RawGeneration(Dataset(features, labels, num_classes), results)
    if not raw.converged:
        failed = [(r.population.target_class, r.culture) for r in results if not r.converged]
        logger.warning("%d of %d cultures did not converge: %s", len(failed), len(results), failed)
    return raw
