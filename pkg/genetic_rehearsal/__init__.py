"""
genetic_rehearsal – pseudo-rehearsal with genetically generated data.

A trained solver network is used as the fitness oracle of a genetic algorithm
that evolves class exemplars; Gaussian enrichment spreads them over the
decision regions, and the result stands in for the old task's data while the
solver learns a new task.

Quick start::

    from genetic_rehearsal import (
        EnrichConfig, GaConfig, SolverNetwork, TrainConfig, build_synthetic, make_blobs, train,
    )

    data = make_blobs(200, 3, rng=0)
    solver, _ = train(SolverNetwork.initialize(2, 16, 3, rng=0), data, TrainConfig(epochs=50, learning_rate=0.01))
    synthetic = build_synthetic(solver, 3, GaConfig(threshold=0.95), EnrichConfig()).dataset
"""

__version__ = "0.1.0"

from .data_io import (
    Dataset,
    load_dataset,
    load_idx,
    load_idx_images,
    load_idx_labels,
    make_blobs,
    make_moons,
    save_dataset,
    write_metrics_csv,
)
from .enrichment import (
    EnrichConfig,
    EnrichmentReport,
    GaussianModel,
    SyntheticBuild,
    build_synthetic,
    enrich_step1,
    enrich_step2,
    fit_gaussian,
    gaussian_density,
    sample_gaussian,
)
from .exceptions import (
    ConfigError,
    GenerationError,
    NumericalError,
    ParseError,
    RehearsalError,
    ShapeError,
    ValidationError,
)
from .genetic import (
    EvolutionResult,
    GaConfig,
    GenerationStats,
    Organism,
    Population,
    RawGeneration,
    evolve_class,
    generate_raw,
)
from .metrics import (
    AgreementReport,
    accuracy,
    agreement_experiment,
    agreement_score,
    boundary_dataset,
    boundary_filter,
)
from .nn import (
    AdamState,
    SolverNetwork,
    TrainConfig,
    Trainer,
    forward,
    load_checkpoint,
    loss_and_gradients,
    predict,
    save_checkpoint,
    train,
)
from .rehearsal import (
    RehearsalConfig,
    RetentionRecord,
    TaskSpec,
    run_interleaved,
    run_scheme,
    run_serial,
    run_sweep,
)

__all__ = [
    "Dataset", "load_dataset", "load_idx", "load_idx_images", "load_idx_labels", "make_blobs", "make_moons",
    "save_dataset", "write_metrics_csv",
    "EnrichConfig", "EnrichmentReport", "GaussianModel", "SyntheticBuild", "build_synthetic", "enrich_step1",
    "enrich_step2", "fit_gaussian", "gaussian_density", "sample_gaussian",
    "ConfigError", "GenerationError", "NumericalError", "ParseError", "RehearsalError", "ShapeError",
    "ValidationError",
    "EvolutionResult", "GaConfig", "GenerationStats", "Organism", "Population", "RawGeneration", "evolve_class",
    "generate_raw",
    "AgreementReport", "accuracy", "agreement_experiment", "agreement_score", "boundary_dataset", "boundary_filter",
    "AdamState", "SolverNetwork", "TrainConfig", "Trainer", "forward", "load_checkpoint", "loss_and_gradients",
    "predict", "save_checkpoint", "train",
    "RehearsalConfig", "RetentionRecord", "TaskSpec", "run_interleaved", "run_scheme", "run_serial", "run_sweep",
]
