"""
Command-line entry point.

Every subcommand reads one YAML config (see :mod:`genetic_rehearsal.config`),
writes into a fresh run directory and exits with ``0`` on success or the
``exit_code`` of the error that stopped it::

    genetic-rehearsal train -c blobs.yaml --seed 7
    genetic-rehearsal generate -c blobs.yaml --set model.checkpoint=runs/train-s7/artifacts/solver.nrlb
    genetic-rehearsal rehearse -c pair.yaml --set rehearse.scheme=serial
    genetic-rehearsal --log-level DEBUG bench -c blobs.yaml

Commands that need a solver load ``model.checkpoint`` when it is set and
otherwise train one on ``data`` first.  Commands that need synthetic data load
``synthetic.path`` when it is set and otherwise run the genetic generator and
both enrichment steps against that solver.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from ._rng import derive_rng, derive_seed
from ._run import RunDirectory
from .config import DataSection, ExperimentConfig, load_config
from .data_io import (
    Dataset,
    default_blob_centers,
    load_dataset,
    load_idx,
    make_blobs,
    make_moons,
    save_dataset,
    write_json,
    write_metrics_csv,
)
from .enrichment import EnrichConfig, build_synthetic
from .exceptions import ConfigError, RehearsalError, ShapeError
from .genetic import GenerationStats
from .metrics import agreement_experiment, boundary_dataset
from .nn import SolverNetwork, accuracy_percent, load_checkpoint, save_checkpoint, train
from .rehearsal import RehearsalConfig, TaskSpec, random_vector_dataset, run_scheme

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

TRAIN_FIELDS = ["epoch", "loss", "train_accuracy", "eval_accuracy"]
DIVERSITY_FIELDS = [f.name for f in dataclasses.fields(GenerationStats)]
RETENTION_FIELDS = ["run_id", "scheme", "epoch", "old_acc", "new_acc", "seed"]
CURVE_FIELDS = ["run_id", "repeat", "source", "epoch", "loss", "train_accuracy", "test_accuracy", "seed"]
AGREEMENT_FIELDS = [
    "run_id",
    "alpha_a",
    "alpha_b",
    "accuracy_original",
    "accuracy_a",
    "accuracy_b",
    "synth_b",
    "seed",
]


# ---------------------------------------------------------------------------
# Inputs
# ---------------------------------------------------------------------------


def _existing(key: str, value: Optional[str]) -> Path:
    if not value:
        raise ConfigError(key, "a path is required here")
    path = Path(value)
    if not path.is_file():
        raise ConfigError(key, f"file not found: {path}")
    return path


def load_task_data(section: DataSection, seed: int, slot: int = 0, *, name: str = "data") -> Tuple[Dataset, Dataset]:
    """Build or read the ``(train, test)`` pair described by one data section.

    ``slot`` separates the random streams of the first (0) and second (1) task.
    """
    train_rng = derive_rng(seed, "data-train", slot)
    test_rng = derive_rng(seed, "data-test", slot)
    if section.kind == "blobs":
        rotation = section.rotation
        if rotation is None:
            rotation = math.pi / section.num_classes if slot else 0.0
        centers = section.centers if section.centers is not None else default_blob_centers(section.num_classes, rotation)
        train_ds = make_blobs(section.n_per_class, section.num_classes, centers, section.std, train_rng)
        test_ds = make_blobs(section.test_per_class, section.num_classes, centers, section.std, test_rng)
    elif section.kind == "moons":
        train_ds = make_moons(2 * section.n_per_class, section.noise, train_rng)
        test_ds = make_moons(2 * section.test_per_class, section.noise, test_rng)
    elif section.kind == "idx":
        train_ds = load_idx(
            _existing(f"{name}.train_images", section.train_images),
            _existing(f"{name}.train_labels", section.train_labels),
        )
        test_ds = load_idx(
            _existing(f"{name}.test_images", section.test_images),
            _existing(f"{name}.test_labels", section.test_labels),
        )
    else:
        train_ds = load_dataset(_existing(f"{name}.train_path", section.train_path))
        test_ds = load_dataset(_existing(f"{name}.test_path", section.test_path))

    if section.classes is not None:
        train_ds = train_ds.select_classes(section.classes)
        test_ds = test_ds.select_classes(section.classes)
    if section.max_per_class is not None:
        train_ds = train_ds.take_per_class(section.max_per_class, train_rng)
    if section.max_test_per_class is not None:
        test_ds = test_ds.take_per_class(section.max_test_per_class, test_rng)
    logger.info("%s: %d train rows, %d test rows, %d classes", name, len(train_ds), len(test_ds), train_ds.num_classes)
    return train_ds, test_ds


def _train_cfg(cfg: ExperimentConfig, run: RunDirectory, stage: str, *indices: int, **changes):
    seed = run.record_seed(".".join([stage, *map(str, indices)]), derive_seed(cfg.run.seed, stage, *indices))
    return dataclasses.replace(cfg.train, seed=seed, **changes)


def _fresh_net(cfg: ExperimentConfig, run: RunDirectory, dim: int, num_classes: int, *indices: int) -> SolverNetwork:
    seed = run.record_seed(".".join(["init", *map(str, indices)]), derive_seed(cfg.run.seed, "init", *indices))
    return SolverNetwork.initialize(dim, cfg.model.hidden_for(dim), num_classes, seed)


def obtain_solver(
    cfg: ExperimentConfig,
    run: RunDirectory,
    train_ds: Dataset,
    test_ds: Dataset,
    head: Optional[int] = None,
) -> SolverNetwork:
    """Load ``model.checkpoint`` or train a solver on ``train_ds``.

    ``head`` is the minimum output width (a two-task run needs room for both).
    """
    head = max(head or 0, cfg.model.num_classes or 0, train_ds.num_classes)
    if cfg.model.checkpoint:
        solver = load_checkpoint(_existing("model.checkpoint", cfg.model.checkpoint))
        if solver.input_dim != train_ds.dim:
            raise ShapeError(f"checkpoint expects {solver.input_dim} features, data has {train_ds.dim}")
        if solver.num_classes < head:
            raise ConfigError("model.checkpoint", f"checkpoint head has {solver.num_classes} classes, run needs {head}")
        logger.info("loaded solver %s", cfg.model.checkpoint)
    else:
        solver = _fresh_net(cfg, run, train_ds.dim, head)
        with run.timed("train"):
            solver, records = train(solver, train_ds, _train_cfg(cfg, run, "train"), eval_data=test_ds)
        write_metrics_csv(records, run.metric("train.csv"), TRAIN_FIELDS)
        save_checkpoint(solver, run.artifact("solver.nrlb"))
    run.summary["solver_test_accuracy"] = accuracy_percent(solver, test_ds)
    return solver


def obtain_synthetic(
    cfg: ExperimentConfig,
    run: RunDirectory,
    solver: SolverNetwork,
    num_classes: int,
    enrich_cfg: Optional[EnrichConfig] = None,
) -> Dataset:
    """Load ``synthetic.path`` or generate and enrich a synthetic dataset for ``num_classes``."""
    if cfg.synthetic.path:
        synth = load_dataset(_existing("synthetic.path", cfg.synthetic.path))
        if synth.dim != solver.input_dim:
            raise ShapeError(f"synthetic data has {synth.dim} features, solver expects {solver.input_dim}")
        logger.info("loaded %d synthetic rows from %s", len(synth), cfg.synthetic.path)
        return synth

    ga_cfg = dataclasses.replace(cfg.ga, seed=run.record_seed("ga", derive_seed(cfg.run.seed, "ga")))
    enrich_seed = run.record_seed("enrich", derive_seed(cfg.run.seed, "enrich"))
    enrich_cfg = dataclasses.replace(enrich_cfg or cfg.enrich, seed=enrich_seed)
    build = build_synthetic(
        solver,
        num_classes,
        ga_cfg,
        enrich_cfg,
        threads=cfg.run.worker_threads,
        progress=cfg.run.progress,
    )
    for stage, seconds in build.timings.items():
        run.timings[stage] = run.timings.get(stage, 0.0) + seconds
    write_metrics_csv(build.raw.history(), run.metric("diversity.csv"), DIVERSITY_FIELDS)
    save_dataset(build.raw.dataset, run.artifact("raw.dset"))
    save_dataset(build.dataset, run.artifact("synthetic.dset"))
    run.summary["converged"] = build.raw.converged
    run.summary["generations"] = {f"{r.population.target_class}.{r.culture}": r.generations for r in build.raw.results}
    run.summary["enrichment"] = dataclasses.asdict(build.report)
    run.summary["enrichment"]["discard_rate"] = build.report.discard_rate
    return build.dataset


def _open_run(cfg: ExperimentConfig, command: str) -> RunDirectory:
    return RunDirectory(
        cfg.run.output_dir,
        cfg.run.run_id,
        command=command,
        config=cfg.resolved(),
        seed=cfg.run.seed,
    )


def _curve_rows(run_id: str, repeat: int, source: str, records, seed: int) -> List[Dict[str, object]]:
    return [
        {
            "run_id": run_id,
            "repeat": repeat,
            "source": source,
            "epoch": r.epoch,
            "loss": r.loss,
            "train_accuracy": r.train_accuracy,
            "test_accuracy": r.eval_accuracy,
            "seed": seed,
        }
        for r in records
    ]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(cfg: ExperimentConfig) -> Path:
    """Train a solver on ``data``; writes ``artifacts/solver.nrlb`` and ``metrics/train.csv``."""
    if cfg.model.checkpoint:
        raise ConfigError("model.checkpoint", "train always starts from fresh weights; unset the checkpoint")
    with _open_run(cfg, "train") as run:
        train_ds, test_ds = load_task_data(cfg.data, cfg.run.seed)
        obtain_solver(cfg, run, train_ds, test_ds)
    return run.root


def cmd_generate(cfg: ExperimentConfig) -> Path:
    """Evolve and enrich a synthetic dataset from a solver; writes ``artifacts/synthetic.dset``
    and ``metrics/diversity.csv``.
    """
    if cfg.synthetic.path:
        raise ConfigError("synthetic.path", "generate always builds a new synthetic dataset; unset the path")
    with _open_run(cfg, "generate") as run:
        if cfg.model.checkpoint:
            solver = load_checkpoint(_existing("model.checkpoint", cfg.model.checkpoint))
        else:
            train_ds, test_ds = load_task_data(cfg.data, cfg.run.seed)
            solver = obtain_solver(cfg, run, train_ds, test_ds)
        num_classes = cfg.model.num_classes or solver.num_classes
        obtain_synthetic(cfg, run, solver, num_classes)
    return run.root


def cmd_rehearse(cfg: ExperimentConfig) -> Path:
    """Learn ``data`` then ``new_data`` under one rehearsal scheme; writes ``metrics/retention.csv``."""
    if cfg.new_data is None:
        raise ConfigError("new_data", "rehearse needs a second task in the new_data section")
    with _open_run(cfg, "rehearse") as run:
        old_train, old_test = load_task_data(cfg.data, cfg.run.seed, 0)
        new_train, new_test = load_task_data(cfg.new_data, cfg.run.seed, 1, name="new_data")
        offset = cfg.rehearse.class_offset if cfg.rehearse.class_offset is not None else old_train.num_classes
        new_task = TaskSpec("new", new_train, new_test, offset)
        solver = obtain_solver(cfg, run, old_train, old_test, head=new_task.output_classes)
        run.summary["old_accuracy_before"] = accuracy_percent(solver, old_test)

        old_data: Optional[Dataset] = None
        if cfg.rehearse.scheme != "none":
            if cfg.rehearse.old_source == "real":
                old_data = old_train
            else:
                old_data = obtain_synthetic(cfg, run, solver, old_train.num_classes)

        rehearsal_cfg = RehearsalConfig(
            scheme=cfg.rehearse.scheme,
            epochs=cfg.rehearse.epochs,
            sweep_fraction=cfg.rehearse.sweep_fraction,
            train=_train_cfg(cfg, run, "rehearse"),
        )
        random_seed = run.record_seed("random", derive_seed(cfg.run.seed, "random"))
        with run.timed("rehearse"):
            records = run_scheme(
                solver, old_data, new_task, old_test, rehearsal_cfg, np.random.default_rng(random_seed)
            )
        rows = [
            {
                "run_id": run.run_id,
                "scheme": r.scheme,
                "epoch": r.epoch,
                "old_acc": r.old_task_accuracy,
                "new_acc": r.new_task_accuracy,
                "seed": cfg.run.seed,
            }
            for r in records
        ]
        write_metrics_csv(rows, run.metric("retention.csv"), RETENTION_FIELDS)
        if records:
            run.summary["old_accuracy_after"] = records[-1].old_task_accuracy
            run.summary["new_accuracy_after"] = records[-1].new_task_accuracy
    return run.root


def cmd_train_on_synth(cfg: ExperimentConfig) -> Path:
    """Train fresh nets on synthetic data only and score them on real test data each epoch;
    writes ``metrics/train_on_synth.csv``.
    """
    with _open_run(cfg, "train-on-synth") as run:
        train_ds, test_ds = load_task_data(cfg.data, cfg.run.seed)
        solver = obtain_solver(cfg, run, train_ds, test_ds)
        synth = obtain_synthetic(cfg, run, solver, train_ds.num_classes)
        num_classes = max(synth.num_classes, test_ds.num_classes)
        rows: List[Dict[str, object]] = []
        sources = [("synthetic", synth)] + ([("real", train_ds)] if cfg.train_on_synth.include_real else [])
        for repeat in range(cfg.train_on_synth.repeats):
            initial = _fresh_net(cfg, run, synth.dim, num_classes, repeat)
            train_cfg = _train_cfg(cfg, run, "train", repeat)
            for source, data in sources:
                with run.timed(f"train_{source}"):
                    _, records = train(initial.copy(), data, train_cfg, eval_data=test_ds)
                rows.extend(_curve_rows(run.run_id, repeat, source, records, cfg.run.seed))
                run.summary[f"{source}_{repeat}_final_test_accuracy"] = records[-1].eval_accuracy
        write_metrics_csv(rows, run.metric("train_on_synth.csv"), CURVE_FIELDS)
    return run.root


def cmd_agreement(cfg: ExperimentConfig) -> Path:
    """Score a synthetic-data model (and a second one) against the real-data model;
    writes ``metrics/agreement.csv`` and ``metrics/agreement.json``.
    """
    with _open_run(cfg, "agreement") as run:
        train_ds, test_ds = load_task_data(cfg.data, cfg.run.seed)
        solver = obtain_solver(cfg, run, train_ds, test_ds)
        synth_a = obtain_synthetic(cfg, run, solver, train_ds.num_classes)
        if cfg.agreement.synth_b == "random":
            random_seed = run.record_seed("random", derive_seed(cfg.run.seed, "random"))
            per_class = max(len(synth_a) // synth_a.num_classes, 1)
            synth_b = random_vector_dataset(synth_a.dim, per_class, synth_a.num_classes, np.random.default_rng(random_seed))
        else:
            synth_b = load_dataset(_existing("agreement.synth_b", cfg.agreement.synth_b))
        init_seed = run.record_seed("init", derive_seed(cfg.run.seed, "init"))
        with run.timed("agreement"):
            report = agreement_experiment(
                train_ds,
                synth_a,
                synth_b,
                test_ds,
                init_seed,
                hidden_dim=cfg.model.hidden_for(train_ds.dim),
                train_cfg=_train_cfg(cfg, run, "train", 1),
            )
        row = {
            "run_id": run.run_id,
            "alpha_a": report.alpha_a,
            "alpha_b": report.alpha_b,
            "accuracy_original": report.accuracy_original,
            "accuracy_a": report.accuracy_a,
            "accuracy_b": report.accuracy_b,
            "synth_b": cfg.agreement.synth_b,
            "seed": cfg.run.seed,
        }
        write_metrics_csv([row], run.metric("agreement.csv"), AGREEMENT_FIELDS)
        payload = dataclasses.asdict(report)
        payload["synth_b"] = cfg.agreement.synth_b
        payload["run_seed"] = cfg.run.seed
        payload["seeds"] = dict(run.seeds)
        write_json(payload, run.metric("agreement.json"))
        run.summary["agreement"] = payload
    return run.root


def _cloud_enrich_cfg(cfg: ExperimentConfig, num_classes: int) -> EnrichConfig:
    raw_count = num_classes * cfg.ga.culture_count * cfg.ga.population_size
    return EnrichConfig.sized_for(
        cfg.boundary.cloud_size,
        num_classes,
        raw_count,
        min_confidence=cfg.enrich.min_confidence,
        keep_step1=True,
        regularizer=cfg.enrich.regularizer,
    )


def cmd_boundary(cfg: ExperimentConfig) -> Path:
    """Keep the synthetic points nearest the decision boundary and train fresh nets on them;
    writes ``artifacts/boundary.dset`` and ``metrics/boundary.csv``.
    """
    with _open_run(cfg, "boundary") as run:
        train_ds, test_ds = load_task_data(cfg.data, cfg.run.seed)
        solver = obtain_solver(cfg, run, train_ds, test_ds)
        num_classes = train_ds.num_classes
        cloud = obtain_synthetic(cfg, run, solver, num_classes, _cloud_enrich_cfg(cfg, num_classes))
        with run.timed("boundary_filter"):
            points = boundary_dataset(solver, cloud.features, num_classes, cfg.boundary.keep_fraction)
        save_dataset(points, run.artifact("boundary.dset"))
        run.summary["cloud_size"] = len(cloud)
        run.summary["boundary_size"] = len(points)

        rows: List[Dict[str, object]] = []
        for repeat in range(cfg.boundary.repeats):
            net = _fresh_net(cfg, run, points.dim, max(num_classes, test_ds.num_classes), repeat)
            train_cfg = _train_cfg(
                cfg,
                run,
                "boundary",
                repeat,
                epochs=cfg.boundary.epochs,
                batch_size=cfg.boundary.batch_size,
                learning_rate=cfg.boundary.learning_rate,
            )
            with run.timed("train_boundary"):
                _, records = train(net, points, train_cfg, eval_data=test_ds)
            rows.extend(_curve_rows(run.run_id, repeat, "boundary", records, cfg.run.seed))
            run.summary[f"boundary_{repeat}_final_test_accuracy"] = records[-1].eval_accuracy
        write_metrics_csv(rows, run.metric("boundary.csv"), CURVE_FIELDS)
    return run.root


def cmd_bench(cfg: ExperimentConfig) -> Path:
    """Time the generation pipeline per stage; writes ``metrics/bench.json``."""
    with _open_run(cfg, "bench") as run:
        train_ds, test_ds = load_task_data(cfg.data, cfg.run.seed)
        solver = obtain_solver(cfg, run, train_ds, test_ds)
        stages: Dict[str, List[float]] = {}
        synth: Optional[Dataset] = None
        for repeat in range(cfg.bench.repeats):
            before = dict(run.timings)
            synth = obtain_synthetic(cfg, run, solver, train_ds.num_classes)
            for stage in ("genetic", "enrich_step1", "enrich_step2"):
                stages.setdefault(stage, []).append(run.timings.get(stage, 0.0) - before.get(stage, 0.0))
            logger.info("bench repeat %d: %s", repeat, {k: round(v[-1], 3) for k, v in stages.items()})
        checkpoint = run.artifact("solver.nrlb")
        if not checkpoint.is_file():
            save_checkpoint(solver, checkpoint)
        payload = {
            "repeats": cfg.bench.repeats,
            "seconds": stages,
            "best_total_seconds": min(sum(v[i] for v in stages.values()) for i in range(cfg.bench.repeats)),
            "solver_checkpoint_bytes": checkpoint.stat().st_size,
            "solver_parameter_bytes": solver.nbytes,
            "synthetic_rows": len(synth),
            "synthetic_bytes": synth.nbytes,
            "real_train_bytes": train_ds.nbytes,
        }
        write_json(payload, run.metric("bench.json"))
        run.summary["bench"] = payload
    return run.root


COMMANDS: Dict[str, Tuple[Callable[[ExperimentConfig], Path], str]] = {
    "train": (cmd_train, "train a solver and save its checkpoint"),
    "generate": (cmd_generate, "evolve and enrich a synthetic dataset from a solver"),
    "rehearse": (cmd_rehearse, "learn a second task under one rehearsal scheme"),
    "train-on-synth": (cmd_train_on_synth, "train fresh nets on synthetic data, test on real data"),
    "agreement": (cmd_agreement, "agreement score of synthetic-data models with the real-data model"),
    "boundary": (cmd_boundary, "train fresh nets on decision-boundary points only"),
    "bench": (cmd_bench, "time the generation pipeline stage by stage"),
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="genetic-rehearsal",
        description="Pseudo-rehearsal experiments with genetically generated data.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="root log level (default: INFO)",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (handler, help_text) in COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text, description=help_text)
        cmd.add_argument("-c", "--config", type=Path, help="YAML run configuration")
        cmd.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override one config key (repeatable)",
        )
        cmd.add_argument("--seed", type=int, help="master seed (run.seed)")
        cmd.add_argument("--threads", type=int, help="worker threads for the genetic generator (run.threads)")
        cmd.add_argument("--output-dir", help="parent directory for run outputs (run.output_dir)")
        cmd.add_argument("--run-id", help="name of this run's directory (run.run_id)")
        cmd.add_argument("--progress", action="store_true", help="show progress bars")
        cmd.set_defaults(handler=handler)
    return parser


def _overrides(args: argparse.Namespace) -> List[str]:
    overrides = list(args.overrides)
    for flag, key in (("seed", "seed"), ("threads", "threads"), ("output_dir", "output_dir"), ("run_id", "run_id")):
        value = getattr(args, flag)
        if value is not None:
            overrides.append(f"run.{key}={value}")
    if args.progress:
        overrides.append("run.progress=true")
    return overrides


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    try:
        cfg = load_config(args.config, _overrides(args))
        root = args.handler(cfg)
    except RehearsalError as exc:
        logger.error("%s failed: %s", args.command, exc)
        return exc.exit_code
    except OSError as exc:
        logger.error("%s failed: %s", args.command, exc)
        return 1
    logger.info("%s completed; outputs in %s", args.command, root)
    return 0


if __name__ == "__main__":
    sys.exit(main())
