"""
Per-run output directory and manifest.

Every CLI command writes into ``<output_dir>/<run_id>/``::

    manifest.json     resolved config, seeds, status, timings, artifact hashes
    metrics/*.csv     per-epoch / per-generation metric rows
    artifacts/*       checkpoints and datasets

Example::

    from genetic_rehearsal._run import RunDirectory

    with RunDirectory("runs", "train-s7", command="train", config=cfg.resolved(), seed=7) as run:
        with run.timed("train"):
            ...
        save_checkpoint(net, run.artifact("solver.nrlb"))

The manifest is written when the block exits, with ``status`` set to
``completed`` or ``failed``.
"""

from __future__ import annotations

import hashlib
import logging
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Union

from . import __version__
from .data_io import write_json

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
_CHUNK = 1 << 20


def sha256_file(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(_CHUNK), b""):
            digest.update(chunk)
    return digest.hexdigest()


def default_run_id(command: str, seed: int) -> str:
    return f"{command}-s{seed}"


class RunDirectory:
    """Owns one run's output tree and writes its manifest on exit."""

    def __init__(
        self,
        output_dir: Union[str, Path],
        run_id: Optional[str],
        *,
        command: str,
        config: Dict[str, Any],
        seed: int,
    ) -> None:
        self.run_id = str(run_id) if run_id else default_run_id(command, seed)
        self.root = Path(output_dir) / self.run_id
        self.metrics_dir = self.root / "metrics"
        self.artifacts_dir = self.root / "artifacts"
        self.command = command
        self.config = config
        self.seed = seed
        self.seeds: Dict[str, int] = {}
        self.timings: Dict[str, float] = {}
        self.summary: Dict[str, Any] = {}
        self.status = "pending"
        self.error: Optional[str] = None

    # ------------------------------------------------------------------
    # Context manager
    # ------------------------------------------------------------------

    def __enter__(self) -> "RunDirectory":
        self.metrics_dir.mkdir(parents=True, exist_ok=True)
        self.artifacts_dir.mkdir(parents=True, exist_ok=True)
        self.status = "running"
        logger.info("run %s: writing to %s", self.run_id, self.root)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc is None:
            self.status = "completed"
        else:
            self.status = "failed"
            self.error = f"{type(exc).__name__}: {exc}"
        self.write_manifest()
        return False

    # ------------------------------------------------------------------
    # Paths and bookkeeping
    # ------------------------------------------------------------------

    def metric(self, name: str) -> Path:
        return self.metrics_dir / name

    def artifact(self, name: str) -> Path:
        return self.artifacts_dir / name

    def record_seed(self, stage: str, value: int) -> int:
        self.seeds[stage] = int(value)
        return int(value)

    @contextmanager
    def timed(self, stage: str) -> Iterator[None]:
        """Accumulate wall-clock seconds spent inside the block under ``stage``."""
        started = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - started
            self.timings[stage] = self.timings.get(stage, 0.0) + elapsed
            logger.debug("stage %s took %.3fs", stage, elapsed)

    def artifact_hashes(self) -> Dict[str, str]:
        hashes = {}
        for folder in (self.metrics_dir, self.artifacts_dir):
            if not folder.is_dir():
                continue
            for path in sorted(p for p in folder.rglob("*") if p.is_file()):
                hashes[path.relative_to(self.root).as_posix()] = sha256_file(path)
        return hashes

    def write_manifest(self) -> Path:
        path = self.root / MANIFEST_NAME
        write_json(
            {
                "run_id": self.run_id,
                "command": self.command,
                "version": __version__,
                "status": self.status,
                "error": self.error,
                "seed": self.seed,
                "seeds": self.seeds,
                "config": self.config,
                "timings": self.timings,
                "summary": self.summary,
                "artifacts": self.artifact_hashes(),
            },
            path,
        )
        return path
