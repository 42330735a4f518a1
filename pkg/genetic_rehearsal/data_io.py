"""
Dataset ingestion, toy-data synthesis and persistence.

All features are kept in ``[0, 1]`` so that the genome domain of the genetic
generator matches the data domain everywhere.

Binary dataset layout (all integers little-endian)::

    offset  type     value
    0       4 bytes  b"DSET"
    4       u16      format version (1)
    6       u64      n  (rows)
    14      u32      d  (features per row)
    18      u32      K  (number of classes)
    22      f64[n*d] features, row-major
    ...     u32[n]   labels
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn import datasets as sk_datasets
from sklearn.preprocessing import minmax_scale

from ._rng import RngLike, as_generator, int_seed
from .exceptions import ParseError, ShapeError, ValidationError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

DATASET_MAGIC = b"DSET"
DATASET_VERSION = 1
_DATASET_HEADER = struct.Struct("<4sHQII")


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Feature matrix in ``[0, 1]`` plus integer labels in ``[0, num_classes)``."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels)
        if features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {features.shape}")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise ShapeError(
                f"expected {features.shape[0]} labels, got shape {labels.shape}"
            )
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ValidationError("labels must be integers")
        labels = labels.astype(np.int64)
        if self.num_classes < 1:
            raise ValidationError(f"num_classes must be >= 1, got {self.num_classes}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValidationError(
                f"labels must lie in [0, {self.num_classes}), "
                f"got range [{labels.min()}, {labels.max()}]"
            )
        if features.size:
            if not np.all(np.isfinite(features)):
                raise ValidationError("features contain NaN or Inf")
            if features.min() < 0.0 or features.max() > 1.0:
                raise ValidationError("features must lie in [0, 1]")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    # ------------------------------------------------------------------
    # Construction helpers
    # ------------------------------------------------------------------

    @classmethod
    def empty(cls, dim: int, num_classes: int) -> "Dataset":
        return cls(np.zeros((0, dim)), np.zeros(0, dtype=np.int64), num_classes)

    @classmethod
    def concatenate(cls, parts: Sequence["Dataset"], num_classes: Optional[int] = None) -> "Dataset":
        """Stack datasets row-wise; ``num_classes`` defaults to the widest part."""
        if not parts:
            raise ValidationError("nothing to concatenate")
        dims = {p.dim for p in parts}
        if len(dims) != 1:
            raise ShapeError(f"cannot concatenate datasets with feature dims {sorted(dims)}")
        k = num_classes if num_classes is not None else max(p.num_classes for p in parts)
        return cls(
            np.concatenate([p.features for p in parts], axis=0),
            np.concatenate([p.labels for p in parts]),
            k,
        )

    # ------------------------------------------------------------------
    # Views
    # ------------------------------------------------------------------

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def nbytes(self) -> int:
        return int(self.features.nbytes + self.labels.nbytes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices: Union[np.ndarray, Sequence[int]]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def of_class(self, label: int) -> np.ndarray:
        return self.features[self.labels == label]

    def with_offset(self, offset: int, num_classes: Optional[int] = None) -> "Dataset":
        """Shift every label by ``offset`` (shared output head for a second task)."""
        k = num_classes if num_classes is not None else self.num_classes + offset
        return Dataset(self.features, self.labels + offset, k)

    def select_classes(self, classes: Sequence[int]) -> "Dataset":
        """Keep only ``classes`` and relabel them ``0..len(classes)-1`` in the given order."""
        classes = [int(c) for c in classes]
        if len(set(classes)) != len(classes):
            raise ValidationError(f"duplicate class ids in {classes}")
        mapping = np.full(max(self.num_classes, max(classes) + 1), -1, dtype=np.int64)
        for new, old in enumerate(classes):
            mapping[old] = new
        keep = np.isin(self.labels, classes)
        return Dataset(self.features[keep], mapping[self.labels[keep]], len(classes))

    def take_per_class(self, n: int, rng: RngLike = None) -> "Dataset":
        """Keep at most ``n`` rows of every class; a seeded draw when ``rng`` is given."""
        gen = as_generator(rng) if rng is not None else None
        picks: List[np.ndarray] = []
        for label in range(self.num_classes):
            idx = np.flatnonzero(self.labels == label)
            if gen is not None and idx.size > n:
                idx = np.sort(gen.choice(idx, size=n, replace=False))
            picks.append(idx[:n])
        return self.subset(np.sort(np.concatenate(picks)))


# ---------------------------------------------------------------------------
# IDX (MNIST) format
# ---------------------------------------------------------------------------


def _read_idx(path: PathLike, magic: int, ndims: int) -> tuple:
    raw = Path(path).read_bytes()
    header_len = 4 + 4 * ndims
    if len(raw) < 4:
        raise ParseError("file too short for IDX magic", offset=len(raw), path=str(path))
    (found,) = struct.unpack_from(">I", raw, 0)
    if found != magic:
        raise ParseError(
            f"bad IDX magic 0x{found:08X}, expected 0x{magic:08X}", offset=0, path=str(path)
        )
    if len(raw) < header_len:
        raise ParseError(
            f"truncated IDX header ({len(raw)} of {header_len} bytes)",
            offset=len(raw),
            path=str(path),
        )
    dims = struct.unpack_from(f">{ndims}I", raw, 4)
    expected = int(np.prod(dims, dtype=np.int64))
    payload = len(raw) - header_len
    if payload != expected:
        kind = "truncated" if payload < expected else "oversized"
        raise ParseError(
            f"{kind} IDX payload: header {tuple(dims)} needs {expected} bytes, found {payload}",
            offset=header_len + min(payload, expected),
            path=str(path),
        )
    data = np.frombuffer(raw, dtype=np.uint8, offset=header_len)
    return dims, data


def load_idx_images(path: PathLike) -> np.ndarray:
    """Read an IDX image file into an ``n x (rows*cols)`` float matrix scaled to ``[0, 1]``."""
    (n, rows, cols), data = _read_idx(path, IDX_IMAGES_MAGIC, 3)
    logger.debug("Loaded %d images of %dx%d from %s", n, rows, cols, path)
    return data.reshape(n, rows * cols).astype(np.float64) / 255.0


def load_idx_labels(path: PathLike) -> np.ndarray:
    """Read an IDX label file into an ``int64`` vector."""
    (n,), data = _read_idx(path, IDX_LABELS_MAGIC, 1)
    logger.debug("Loaded %d labels from %s", n, path)
    return data.astype(np.int64)


def load_idx(images_path: PathLike, labels_path: PathLike, num_classes: Optional[int] = None) -> Dataset:
    """Pair an IDX image file with its label file."""
    features = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if features.shape[0] != labels.shape[0]:
        raise ParseError(
            f"{features.shape[0]} images but {labels.shape[0]} labels",
            offset=4,
            path=str(labels_path),
        )
    k = num_classes if num_classes is not None else max(10, int(labels.max(initial=0)) + 1)
    return Dataset(features, labels, k)


# ---------------------------------------------------------------------------
# Toy datasets
# ---------------------------------------------------------------------------


def default_blob_centers(num_classes: int, rotation: float = 0.0) -> np.ndarray:
    """Centers spread on a circle of radius 0.3 around (0.5, 0.5), turned by ``rotation`` radians."""
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes + np.pi / 2.0 + rotation
    return np.column_stack([0.5 + 0.3 * np.cos(angles), 0.5 + 0.3 * np.sin(angles)])


def make_blobs(
    n_per_class: int,
    num_classes: int,
    centers: Optional[Union[np.ndarray, Sequence[Sequence[float]]]] = None,
    std: float = 0.05,
    rng: RngLike = None,
) -> Dataset:
    """Isotropic Gaussian clusters, ``n_per_class`` rows each, clipped to ``[0, 1]``."""
    if n_per_class < 0 or num_classes < 1:
        raise ValidationError("n_per_class must be >= 0 and num_classes >= 1")
    if std < 0:
        raise ValidationError(f"std must be >= 0, got {std}")
    centers = default_blob_centers(num_classes) if centers is None else np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[0] != num_classes:
        raise ShapeError(f"need {num_classes} centers, got shape {centers.shape}")
    gen = as_generator(rng)
    if n_per_class == 0:
        return Dataset.empty(centers.shape[1], num_classes)
    features, labels = sk_datasets.make_blobs(
        n_samples=[n_per_class] * num_classes,
        n_features=centers.shape[1],
        centers=centers,
        cluster_std=std,
        shuffle=False,
        random_state=int_seed(gen),
    )
    return Dataset(np.clip(features, 0.0, 1.0), labels, num_classes)


def moons_geometry(n: int, noise: float = 0.1, rng: RngLike = None) -> Tuple[np.ndarray, np.ndarray]:
    """Unscaled two-moons points: class 0 on the upper unit arc, class 1 on the
    same arc reflected and shifted by ``(1, -0.5)``.  Class 0 gets ``n // 2`` rows.
    """
    if n < 2:
        raise ValidationError(f"make_moons needs n >= 2, got {n}")
    if noise < 0:
        raise ValidationError(f"noise must be >= 0, got {noise}")
    features, labels = sk_datasets.make_moons(
        n_samples=n,
        shuffle=False,
        noise=noise if noise > 0 else None,
        random_state=int_seed(as_generator(rng)),
    )
    return features, labels.astype(np.int64)


def make_moons(n: int, noise: float = 0.1, rng: RngLike = None) -> Dataset:
    """:func:`moons_geometry` with every feature min-max scaled into ``[0, 1]``."""
    features, labels = moons_geometry(n, noise, rng)
    return Dataset(np.clip(minmax_scale(features), 0.0, 1.0), labels, 2)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_dataset(ds: Dataset, path: PathLike) -> None:
    """Write ``ds`` in the versioned ``DSET`` binary format."""
    header = _DATASET_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, len(ds), ds.dim, ds.num_classes)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ds.features, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.labels, dtype="<u4").tobytes())


def load_dataset(path: PathLike) -> Dataset:
    """Read a dataset written by :func:`save_dataset`.

    :raises ParseError: on a bad magic, an unsupported version or a size mismatch.
    """
    raw = Path(path).read_bytes()
    where = str(path)
    if len(raw) < _DATASET_HEADER.size:
        raise ParseError(
            f"truncated header ({len(raw)} of {_DATASET_HEADER.size} bytes)", offset=len(raw), path=where
        )
    magic, version, n, d, k = _DATASET_HEADER.unpack_from(raw, 0)
    if magic != DATASET_MAGIC:
        raise ParseError(f"bad magic {magic!r}, expected {DATASET_MAGIC!r}", offset=0, path=where)
    if version != DATASET_VERSION:
        raise ParseError(
            f"unsupported dataset format version {version} (this build reads version {DATASET_VERSION})",
            offset=4,
            path=where,
        )
    expected = _DATASET_HEADER.size + n * d * 8 + n * 4
    if len(raw) != expected:
        kind = "truncated" if len(raw) < expected else "oversized"
        raise ParseError(
            f"{kind} dataset: header declares {n}x{d} needing {expected} bytes, found {len(raw)}",
            offset=min(len(raw), expected),
            path=where,
        )
    start = _DATASET_HEADER.size
    features = np.frombuffer(raw, dtype="<f8", count=n * d, offset=start).reshape(n, d)
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=start + n * d * 8)
    try:
        return Dataset(features.astype(np.float64), labels.astype(np.int64), k)
    except ValidationError as exc:
        raise ParseError(f"invalid dataset contents: {exc}", offset=start, path=where) from exc


# ---------------------------------------------------------------------------
# CSV / JSON emission
# ---------------------------------------------------------------------------


def _row(record: Any) -> Mapping[str, Any]:
    if dataclasses.is_dataclass(record) and not isinstance(record, type):
        return dataclasses.asdict(record)
    if isinstance(record, Mapping):
        return record
    raise ValidationError(f"cannot write {type(record).__name__} as a CSV row")


def write_metrics_csv(
    records: Iterable[Any],
    path: PathLike,
    fieldnames: Optional[Sequence[str]] = None,
) -> None:
    """Write dataclass / mapping records as a CSV file with a header row.

    Column order is ``fieldnames`` when given, else the field order of the first
    record.  Floats are written with ``repr`` precision so they round-trip exactly.
    """
    rows = [_row(r) for r in records]
    if fieldnames is None:
        if not rows:
            raise ValidationError("fieldnames are required when there are no records")
        fieldnames = list(rows[0].keys())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fieldnames), extrasaction="raise")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_value(v) for k, v in row.items()})


def _csv_value(value: Any) -> Any:
    if isinstance(value, (np.floating, float)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    return value


def _json_default(value: Any) -> Any:
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return dataclasses.asdict(value)
    raise TypeError(f"{type(value).__name__} is not JSON serialisable")


def write_json(payload: Dict[str, Any], path: PathLike) -> None:
    """Write ``payload`` as sorted, indented JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
