"""
One-hidden-layer ReLU network with a softmax head, trained from scratch with Adam.

The network doubles as the classifier being protected from forgetting and as the
fitness oracle of the genetic generator.

Checkpoint layout (``.nrlb``, all little-endian)::

    offset  type                    value
    0       4 bytes                 b"NRLB"
    4       u16                     format version (1)
    6       u32                     input_dim  (d)
    10      u32                     hidden_dim (h)
    14      u32                     num_classes (K)
    18      f64[d*h]                w1, row-major (input x hidden)
    ...     f64[h]                  b1
    ...     f64[h*K]                w2, row-major (hidden x output)
    ...     f64[K]                  b2
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy.special import log_softmax, softmax as _softmax

from ._rng import RngLike, as_generator
from .data_io import Dataset
from .exceptions import ParseError, ShapeError, ValidationError

logger = logging.getLogger(__name__)

PARAM_NAMES = ("w1", "b1", "w2", "b2")
LOSS_KINDS = ("categorical", "binary")

CHECKPOINT_MAGIC = b"NRLB"
CHECKPOINT_VERSION = 1
_CHECKPOINT_HEADER = struct.Struct("<4sHIII")

Params = Dict[str, np.ndarray]


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


@dataclass
class SolverNetwork:
    """Dense ``input_dim -> hidden_dim (ReLU) -> num_classes`` network."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self) -> None:
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        d, h = self.w1.shape if self.w1.ndim == 2 else (-1, -1)
        if (
            self.w1.ndim != 2
            or self.b1.shape != (h,)
            or self.w2.ndim != 2
            or self.w2.shape[0] != h
            or self.b2.shape != (self.w2.shape[1],)
        ):
            raise ShapeError(
                "inconsistent layer shapes: "
                f"w1 {self.w1.shape}, b1 {self.b1.shape}, w2 {self.w2.shape}, b2 {self.b2.shape}"
            )

    @classmethod
    def initialize(
        cls,
        input_dim: int,
        hidden_dim: int,
        num_classes: int,
        rng: RngLike = None,
    ) -> "SolverNetwork":
        """He-style uniform init: ``U(-sqrt(6/fan_in), +sqrt(6/fan_in))``, zero biases."""
        if min(input_dim, hidden_dim, num_classes) < 1:
            raise ValidationError(
                f"dimensions must be >= 1, got ({input_dim}, {hidden_dim}, {num_classes})"
            )
        gen = as_generator(rng)
        lim1 = np.sqrt(6.0 / input_dim)
        lim2 = np.sqrt(6.0 / hidden_dim)
        return cls(
            w1=gen.uniform(-lim1, lim1, size=(input_dim, hidden_dim)),
            b1=np.zeros(hidden_dim),
            w2=gen.uniform(-lim2, lim2, size=(hidden_dim, num_classes)),
            b2=np.zeros(num_classes),
        )

    @property
    def input_dim(self) -> int:
        return int(self.w1.shape[0])

    @property
    def hidden_dim(self) -> int:
        return int(self.w1.shape[1])

    @property
    def num_classes(self) -> int:
        return int(self.w2.shape[1])

    def parameters(self) -> Params:
        """Live references to the parameter arrays, keyed by :data:`PARAM_NAMES`."""
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def copy(self) -> "SolverNetwork":
        return SolverNetwork(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    @property
    def nbytes(self) -> int:
        return sum(p.nbytes for p in self.parameters().values())


def _check_batch(net: SolverNetwork, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != net.input_dim:
        raise ShapeError(f"expected a (n, {net.input_dim}) batch, got shape {batch.shape}")
    return batch


def _forward(net: SolverNetwork, batch: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    pre = batch @ net.w1 + net.b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ net.w2 + net.b2
    return pre, hidden, logits


def forward(net: SolverNetwork, batch: np.ndarray) -> np.ndarray:
    """Logits, one row per sample.

    :raises ShapeError: when ``batch`` is not ``(n, input_dim)``.
    """
    return _forward(net, _check_batch(net, batch))[2]


def hidden(net: SolverNetwork, batch: np.ndarray) -> np.ndarray:
    """Post-ReLU hidden activations."""
    return _forward(net, _check_batch(net, batch))[1]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis (max-subtracted)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[-1] < 1:
        raise ValidationError("softmax needs at least one logit")
    return _softmax(logits, axis=-1)


def predict_proba(net: SolverNetwork, features: np.ndarray) -> np.ndarray:
    return softmax(forward(net, features))


def predict(net: SolverNetwork, features: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class index."""
    return np.argmax(forward(net, features), axis=1)


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------


def _check_labels(labels: np.ndarray, n: int, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    labels = labels.astype(np.int64)
    if n and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValidationError(
            f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]"
        )
    return labels


def loss_and_gradients(
    net: SolverNetwork,
    batch: np.ndarray,
    labels: np.ndarray,
    loss_kind: str = "categorical",
) -> Tuple[float, Params]:
    """Mean loss over the batch and its gradient for every parameter.

    ``categorical`` is softmax cross-entropy.  ``binary`` is one-vs-rest binary
    cross-entropy on the softmax outputs, averaged over samples and classes.
    """
    if loss_kind not in LOSS_KINDS:
        raise ValidationError(f"unknown loss {loss_kind!r}; expected one of {', '.join(LOSS_KINDS)}")
    batch = _check_batch(net, batch)
    n = batch.shape[0]
    if n == 0:
        raise ValidationError("cannot compute a loss on an empty batch")
    labels = _check_labels(labels, n, net.num_classes)

    pre, hid, logits = _forward(net, batch)
    log_p = log_softmax(logits, axis=1)
    p = np.exp(log_p)
    onehot = np.zeros_like(p)
    onehot[np.arange(n), labels] = 1.0

    if loss_kind == "categorical":
        loss = -float(np.mean(log_p[np.arange(n), labels]))
        dlogits = (p - onehot) / n
    else:
        k = net.num_classes
        log_1mp = np.log1p(-np.minimum(p, 1.0 - 1e-15))
        loss = -float(np.sum(onehot * log_p + (1.0 - onehot) * log_1mp) / (n * k))
        pc = np.clip(p, 1e-15, 1.0 - 1e-15)
        dp = -(onehot / pc - (1.0 - onehot) / (1.0 - pc)) / (n * k)
        dlogits = p * (dp - np.sum(dp * p, axis=1, keepdims=True))

    dh = dlogits @ net.w2.T
    dh[pre <= 0.0] = 0.0
    grads = {
        "w1": batch.T @ dh,
        "b1": dh.sum(axis=0),
        "w2": hid.T @ dlogits,
        "b2": dlogits.sum(axis=0),
    }
    return max(loss, 0.0), grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Moment accumulators and hyperparameters of Adam."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Params, **hyper: float) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **hyper,
        )


def adam_step(params: Params, grads: Params, state: AdamState) -> Tuple[Params, AdamState]:
    """One bias-corrected Adam update, applied in place to ``params`` and ``state``.

    :raises ShapeError: when gradient and parameter shapes differ.
    """
    if set(grads) != set(params):
        raise ShapeError(f"gradient keys {sorted(grads)} do not match parameters {sorted(params)}")
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {grads[name].shape} != parameter shape {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        elif state.m[name].shape != p.shape:
            raise ShapeError(f"{name}: optimizer state shape {state.m[name].shape} != {p.shape}")

    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    loss: str = "categorical"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.loss not in LOSS_KINDS:
            raise ValidationError(f"unknown loss {self.loss!r}; expected one of {', '.join(LOSS_KINDS)}")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_accuracy: float
    eval_accuracy: Optional[float] = None


def accuracy_percent(net: SolverNetwork, ds: Dataset) -> float:
    if len(ds) == 0:
        return 0.0
    return float(100.0 * np.mean(predict(net, ds.features) == ds.labels))


class Trainer:
    """Keeps one network, its Adam state and its shuffle stream across calls.

    Rehearsal schemes alternate data sources epoch by epoch (or batch by batch);
    sharing a ``Trainer`` keeps the optimizer moments continuous between them.
    """

    def __init__(self, net: SolverNetwork, cfg: TrainConfig) -> None:
        self.net = net
        self.cfg = cfg
        self.state = AdamState.for_params(net.parameters(), learning_rate=cfg.learning_rate)
        self.rng = np.random.default_rng(cfg.seed)
        self.epochs_run = 0

    def _check(self, ds: Dataset) -> None:
        if ds.dim != self.net.input_dim:
            raise ShapeError(f"dataset has {ds.dim} features, network expects {self.net.input_dim}")
        if ds.num_classes > self.net.num_classes:
            raise ValidationError(
                f"dataset has {ds.num_classes} classes, network head has {self.net.num_classes}"
            )

    def train_batch(self, features: np.ndarray, labels: np.ndarray) -> float:
        loss, grads = loss_and_gradients(self.net, features, labels, self.cfg.loss)
        adam_step(self.net.parameters(), grads, self.state)
        return loss

    def run_epoch(self, ds: Dataset) -> float:
        """One shuffled pass over ``ds``; returns the sample-weighted mean batch loss."""
        self._check(ds)
        n = len(ds)
        if n == 0:
            raise ValidationError("cannot train on an empty dataset")
        order = self.rng.permutation(n)
        total = 0.0
        for start in range(0, n, self.cfg.batch_size):
            idx = order[start : start + self.cfg.batch_size]
            total += self.train_batch(ds.features[idx], ds.labels[idx]) * idx.size
        self.epochs_run += 1
        return total / n

    def fit(
        self,
        ds: Dataset,
        epochs: Optional[int] = None,
        *,
        eval_data: Optional[Dataset] = None,
        on_epoch: Optional[Callable[[EpochRecord], None]] = None,
    ) -> List[EpochRecord]:
        epochs = self.cfg.epochs if epochs is None else epochs
        if epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {epochs}")
        records: List[EpochRecord] = []
        for epoch in range(1, epochs + 1):
            loss = self.run_epoch(ds)
            record = EpochRecord(
                epoch=epoch,
                loss=loss,
                train_accuracy=accuracy_percent(self.net, ds),
                eval_accuracy=accuracy_percent(self.net, eval_data) if eval_data is not None else None,
            )
            logger.info(
                "epoch %d: loss=%.4f train_acc=%.2f%s",
                epoch,
                loss,
                record.train_accuracy,
                "" if record.eval_accuracy is None else f" eval_acc={record.eval_accuracy:.2f}",
            )
            records.append(record)
            if on_epoch is not None:
                on_epoch(record)
        return records


def train(
    net: SolverNetwork,
    dataset: Dataset,
    cfg: TrainConfig,
    *,
    eval_data: Optional[Dataset] = None,
) -> Tuple[SolverNetwork, List[EpochRecord]]:
    """Train ``net`` in place for ``cfg.epochs`` epochs.

    Deterministic for a fixed ``cfg.seed`` and initial weights.

    :raises ValidationError: on an empty dataset.
    """
    if len(dataset) == 0:
        raise ValidationError("cannot train on an empty dataset")
    records = Trainer(net, cfg).fit(dataset, eval_data=eval_data)
    return net, records


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


class CheckpointHeader(NamedTuple):
    version: int
    input_dim: int
    hidden_dim: int
    num_classes: int


def save_checkpoint(net: SolverNetwork, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(
            _CHECKPOINT_HEADER.pack(
                CHECKPOINT_MAGIC, CHECKPOINT_VERSION, net.input_dim, net.hidden_dim, net.num_classes
            )
        )
        for name in PARAM_NAMES:
            fh.write(np.ascontiguousarray(getattr(net, name), dtype="<f8").tobytes())


def _parse_header(raw: bytes, where: str) -> CheckpointHeader:
    if len(raw) < _CHECKPOINT_HEADER.size:
        raise ParseError(
            f"truncated header ({len(raw)} of {_CHECKPOINT_HEADER.size} bytes)", offset=len(raw), path=where
        )
    magic, version, d, h, k = _CHECKPOINT_HEADER.unpack_from(raw, 0)
    if magic != CHECKPOINT_MAGIC:
        raise ParseError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}", offset=0, path=where)
    if version != CHECKPOINT_VERSION:
        raise ParseError(
            f"unsupported checkpoint version {version} (this build reads version {CHECKPOINT_VERSION})",
            offset=4,
            path=where,
        )
    if min(d, h, k) < 1:
        raise ParseError(f"zero dimension in header ({d}, {h}, {k})", offset=6, path=where)
    return CheckpointHeader(version, d, h, k)


def inspect_checkpoint(path: Union[str, Path]) -> CheckpointHeader:
    """Read only the header fields of a checkpoint."""
    with Path(path).open("rb") as fh:
        return _parse_header(fh.read(_CHECKPOINT_HEADER.size), str(path))


def load_checkpoint(path: Union[str, Path]) -> SolverNetwork:
    """Load a network written by :func:`save_checkpoint`.

    :raises ParseError: with the byte offset where the file stops making sense.
    """
    raw = Path(path).read_bytes()
    where = str(path)
    header = _parse_header(raw, where)
    d, h, k = header.input_dim, header.hidden_dim, header.num_classes
    shapes = {"w1": (d, h), "b1": (h,), "w2": (h, k), "b2": (k,)}
    offset = _CHECKPOINT_HEADER.size
    arrays: Params = {}
    for name in PARAM_NAMES:
        count = int(np.prod(shapes[name]))
        end = offset + count * 8
        if end > len(raw):
            raise ParseError(
                f"truncated {name} block: need {count * 8} bytes, {len(raw) - offset} left",
                offset=len(raw),
                path=where,
            )
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shapes[name]).copy()
        offset = end
    if offset != len(raw):
        raise ParseError(f"{len(raw) - offset} trailing bytes after b2", offset=offset, path=where)
    return SolverNetwork(**arrays)
