"""Multi-task ranking model in numpy.

Input vector per example, in order::

    [user emb | item emb | visual | mean-pooled caption tokens | pooled profile tokens]

followed by a ReLU trunk and one logistic head per task. Disabled feature
groups feed zeros of the same width, so parameter shapes never depend on the
arm. Embedding tables are updated sparsely: only rows touched by a batch are
read and written, which is exactly dense Adagrad because untouched rows have
zero gradient.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from . import TASKS
from .errors import (CheckpointError, CorruptChecksum, Diverged, IdOutOfRange,
                     NonFiniteActivation, VersionMismatch)
from .features import FEATURE_GROUPS, DatasetSplit, FeatureTable, check_groups

logger = logging.getLogger(__name__)

N_TASKS = len(TASKS)
N_EVENT_TYPES = 5
PROB_CLAMP = 1e-7
TABLES = ("user_table", "item_table", "item_token_table", "profile_token_table")
MAGIC = b"SMRK1"


@dataclass(frozen=True)
class ModelSpec:
    user_rows: int
    item_rows: int
    item_token_rows: int
    profile_token_rows: int
    visual_dim: int = 16
    dim: int = 16
    hidden: Tuple[int, ...] = (64, 32)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if min(self.user_rows, self.item_rows, self.item_token_rows, self.profile_token_rows) < 1:
            raise ValueError("every table needs at least one row")
        if self.dim < 1 or not self.hidden or min(self.hidden) < 1:
            raise ValueError("dim and hidden sizes must be positive")

    @property
    def input_dim(self) -> int:
        return self.visual_dim + 4 * self.dim

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        return (self.input_dim,) + self.hidden

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        shapes = {
            "user_table": (self.user_rows, self.dim),
            "item_table": (self.item_rows, self.dim),
            "item_token_table": (self.item_token_rows, self.dim),
            "profile_token_table": (self.profile_token_rows, self.dim),
        }
        sizes = self.layer_sizes
        for i in range(len(self.hidden)):
            shapes[f"trunk_w{i}"] = (sizes[i], sizes[i + 1])
            shapes[f"trunk_b{i}"] = (sizes[i + 1],)
        shapes["head_w"] = (sizes[-1], N_TASKS)
        shapes["head_b"] = (N_TASKS,)
        return shapes


@dataclass
class ModelParams:
    spec: ModelSpec
    arrays: Dict[str, np.ndarray]
    enabled_groups: Tuple[str, ...] = ("visual",)
    seed: int = 0

    def __post_init__(self):
        self.enabled_groups = tuple(g for g in FEATURE_GROUPS if g in set(self.enabled_groups))
        shapes = self.spec.shapes()
        if list(self.arrays) != list(shapes):
            self.arrays = {k: self.arrays[k] for k in shapes}
        for k, shape in shapes.items():
            if self.arrays[k].shape != shape:
                raise ValueError(f"{k}: shape {self.arrays[k].shape} != {shape}")

    def __getitem__(self, key) -> np.ndarray:
        return self.arrays[key]

    def copy(self) -> "ModelParams":
        return ModelParams(self.spec, {k: v.copy() for k, v in self.arrays.items()},
                           self.enabled_groups, self.seed)

    def n_parameters(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.arrays.values())

    @classmethod
    def zeros(cls, spec: ModelSpec, enabled_groups=("visual",)) -> "ModelParams":
        return cls(spec, {k: np.zeros(s) for k, s in spec.shapes().items()}, tuple(enabled_groups))

    @classmethod
    def init(cls, spec: ModelSpec, seed: int = 0, enabled_groups=("visual",)) -> "ModelParams":
        """Uniform in +-1/sqrt(fan): embedding dim for tables, fan-in for dense layers; zero biases."""
        rng = np.random.default_rng([seed, 4])
        arrays = {}
        for k, shape in spec.shapes().items():
            if k in TABLES:
                bound = 1.0 / np.sqrt(spec.dim)
                arrays[k] = rng.uniform(-bound, bound, shape)
            elif len(shape) == 2:
                bound = 1.0 / np.sqrt(shape[0])
                arrays[k] = rng.uniform(-bound, bound, shape)
            else:
                arrays[k] = np.zeros(shape)
        return cls(spec, arrays, tuple(enabled_groups), seed)


def spec_for(table: FeatureTable, dim: int = 16, hidden=(64, 32)) -> ModelSpec:
    meta = table.meta
    return ModelSpec(user_rows=meta["user_table"], item_rows=meta["item_table"],
                     item_token_rows=meta["item_token_space"],
                     profile_token_rows=meta["profile_token_space"],
                     visual_dim=table.visual_dim, dim=dim, hidden=tuple(hidden))


def pool(tokens: Sequence[int], table: np.ndarray) -> np.ndarray:
    """Mean of the indexed rows; zeros for an empty list."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size == 0:
        return np.zeros(table.shape[1])
    if tokens.min() < 0 or tokens.max() >= table.shape[0]:
        raise IdOutOfRange(f"token ids must lie in [0, {table.shape[0]})")
    return table[tokens].mean(axis=0)


def _pool_padded(tokens: np.ndarray, lens: np.ndarray, table: np.ndarray):
    """Batched mean pooling over right-padded token rows.

    Returns the pooled array (shape ``lens.shape + (dim,)``) and the flat
    bookkeeping needed for the backward pass: valid token ids, the flat list
    segment of each valid token and the per-segment divisor.
    """
    width = tokens.shape[-1]
    flat_lens = lens.reshape(-1).astype(np.int64)
    mask = np.arange(width) < flat_lens[:, None]
    ids = tokens.reshape(-1, width)[mask]
    seg = np.repeat(np.arange(len(flat_lens)), flat_lens)
    pooled = np.zeros((len(flat_lens), table.shape[1]))
    nonempty = np.flatnonzero(flat_lens)
    if len(nonempty):
        starts = np.concatenate(([0], np.cumsum(flat_lens[nonempty])[:-1]))
        pooled[nonempty] = np.add.reduceat(table[ids], starts, axis=0)
    denom = np.maximum(flat_lens, 1).astype(np.float64)[:, None]
    pooled /= denom
    return pooled.reshape(lens.shape + (table.shape[1],)), (ids, seg, denom)


def check_indices(table: FeatureTable, spec: ModelSpec) -> None:
    def bad(values, rows):
        return values.size and (values.min() < 0 or values.max() >= rows)

    if bad(table.user_idx, spec.user_rows):
        raise IdOutOfRange(f"user index outside [0, {spec.user_rows})")
    if bad(table.item_idx, spec.item_rows):
        raise IdOutOfRange(f"item index outside [0, {spec.item_rows})")
    item_mask = np.arange(table.item_tokens.shape[1]) < table.item_len[:, None]
    if bad(table.item_tokens[item_mask], spec.item_token_rows):
        raise IdOutOfRange(f"caption token outside [0, {spec.item_token_rows})")
    prof_mask = np.arange(table.profile_tokens.shape[2]) < table.profile_len[..., None]
    if bad(table.profile_tokens[prof_mask], spec.profile_token_rows):
        raise IdOutOfRange(f"profile token outside [0, {spec.profile_token_rows})")
    if table.visual_dim != spec.visual_dim:
        raise ValueError(f"visual width {table.visual_dim} != model's {spec.visual_dim}")


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _forward(params: ModelParams, batch: FeatureTable, groups=None):
    groups = params.enabled_groups if groups is None else groups
    spec = params.spec
    n = len(batch)
    zeros = np.zeros((n, spec.dim))
    parts = [params["user_table"][batch.user_idx], params["item_table"][batch.item_idx]]
    parts.append(batch.visual if "visual" in groups else np.zeros((n, spec.visual_dim)))
    cache = {"batch": batch, "groups": groups}
    if "item_tokens" in groups:
        pooled, cache["item_pool"] = _pool_padded(batch.item_tokens, batch.item_len,
                                                  params["item_token_table"])
        parts.append(pooled)
    else:
        parts.append(zeros)
    if "profile_tokens" in groups:
        pooled, cache["profile_pool"] = _pool_padded(batch.profile_tokens, batch.profile_len,
                                                     params["profile_token_table"])
        parts.append(pooled.mean(axis=1))
    else:
        parts.append(zeros)
    h = np.concatenate(parts, axis=1)
    acts = [h]
    # overflow is reported below as NonFiniteActivation, not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(len(spec.hidden)):
            h = np.maximum(h @ params[f"trunk_w{i}"] + params[f"trunk_b{i}"], 0.0)
            acts.append(h)
        logits = h @ params["head_w"] + params["head_b"]
    if not np.isfinite(logits).all():
        raise NonFiniteActivation("non-finite logits in forward pass")
    cache["acts"] = acts
    cache["logits"] = logits
    return logits, cache


def forward(batch: FeatureTable, params: ModelParams) -> np.ndarray:
    """Per-task probabilities, shape (N, 5)."""
    check_indices(batch, params.spec)
    logits, _ = _forward(params, batch)
    return _sigmoid(logits)


def loss(probabilities, labels) -> float:
    """Sum over tasks of binary cross-entropy, averaged over examples when given a batch."""
    p = np.clip(np.asarray(probabilities, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    per_example = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).sum(axis=-1)
    return float(np.mean(per_example))


def _logit_loss(logits, labels) -> float:
    # softplus(z) - y*z == BCE(sigmoid(z), y)
    return float(np.mean((np.logaddexp(0.0, logits) - labels * logits).sum(axis=1)))


def _scatter_rows(rows: np.ndarray, values: np.ndarray, seg: Optional[np.ndarray] = None):
    """Sum ``values[seg[i]]`` into ``rows[i]``; returns (unique rows, summed gradients)."""
    if seg is None:
        seg = np.arange(len(rows))
    uniq, inv = np.unique(rows, return_inverse=True)
    m = sparse.csr_matrix((np.ones(len(rows)), (inv.ravel(), seg)),
                          shape=(len(uniq), values.shape[0]))
    return uniq, np.asarray(m @ values)


def gradients(params: ModelParams, batch: FeatureTable):
    """Loss and gradients of the batch-mean multi-task loss.

    Dense parameters map to arrays; tables map to ``(rows, row_grads)`` and only
    tables of enabled groups (plus the id tables) appear.
    """
    logits, cache = _forward(params, batch)
    y = batch.labels.astype(np.float64)
    n = len(batch)
    value = _logit_loss(logits, y)
    spec = params.spec
    acts = cache["acts"]
    grads = {}
    d = (_sigmoid(logits) - y) / n
    grads["head_w"] = acts[-1].T @ d
    grads["head_b"] = d.sum(axis=0)
    dh = d @ params["head_w"].T
    for i in reversed(range(len(spec.hidden))):
        da = dh * (acts[i + 1] > 0)
        grads[f"trunk_w{i}"] = acts[i].T @ da
        grads[f"trunk_b{i}"] = da.sum(axis=0)
        dh = da @ params[f"trunk_w{i}"].T
    dim, vis = spec.dim, spec.visual_dim
    grads["user_table"] = _scatter_rows(batch.user_idx, dh[:, :dim])
    grads["item_table"] = _scatter_rows(batch.item_idx, dh[:, dim:2 * dim])
    off = 2 * dim + vis
    if "item_pool" in cache:
        ids, seg, denom = cache["item_pool"]
        g = dh[:, off:off + dim] / denom
        grads["item_token_table"] = _scatter_rows(ids, g, seg)
    if "profile_pool" in cache:
        ids, seg, denom = cache["profile_pool"]
        # the pooled profile is the mean over event types of per-type means
        g = np.repeat(dh[:, off + dim:off + 2 * dim], N_EVENT_TYPES, axis=0)
        g /= N_EVENT_TYPES * denom
        grads["profile_token_table"] = _scatter_rows(ids, g, seg)
    return value, grads


def dense_gradients(params: ModelParams, batch: FeatureTable):
    """``gradients`` with table gradients expanded to full arrays (zeros for untouched tables)."""
    value, grads = gradients(params, batch)
    out = {}
    for k, shape in params.spec.shapes().items():
        g = grads.get(k)
        if k in TABLES:
            full = np.zeros(shape)
            if g is not None:
                full[g[0]] = g[1]
            out[k] = full
        else:
            out[k] = g
    return value, out


def objective(params: ModelParams, batch: FeatureTable) -> float:
    """Batch-mean of ``loss`` on the model's probabilities."""
    logits, _ = _forward(params, batch)
    return loss(_sigmoid(logits), batch.labels)


class Adagrad:
    """Per-coordinate Adagrad; table rows are updated only where a gradient exists."""

    def __init__(self, params: ModelParams, lr: float = 0.05, eps: float = 1e-8,
                 initial_accumulator: float = 0.0):
        if lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        self.lr = lr
        self.eps = eps
        self.state = {k: np.full_like(v, initial_accumulator) for k, v in params.arrays.items()}

    def step(self, params: ModelParams, grads) -> None:
        lr, eps = self.lr, self.eps
        for k, g in grads.items():
            p, acc = params.arrays[k], self.state[k]
            if k in TABLES:
                rows, rg = g
                acc[rows] += rg * rg
                p[rows] -= lr * rg / (np.sqrt(acc[rows]) + eps)
            else:
                acc += g * g
                p -= lr * g / (np.sqrt(acc) + eps)


@dataclass
class TrainConfig:
    optimizer: str = "adagrad"
    lr: float = 0.05
    epochs: int = 2
    batch_size: int = 256
    seed: int = 0
    enabled_feature_groups: Tuple[str, ...] = ("visual",)
    embedding_dim: int = 16
    hidden: Tuple[int, ...] = (64, 32)
    eps: float = 1e-8

    def __post_init__(self):
        self.enabled_feature_groups = tuple(self.enabled_feature_groups)
        self.hidden = tuple(self.hidden)
        check_groups(self.enabled_feature_groups)
        if self.optimizer != "adagrad":
            raise ValueError(f"only adagrad is supported, got {self.optimizer!r}")
        # lr == 0 is allowed as a frozen-parameter control run
        if self.lr < 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class TrainLog:
    epochs: List[dict] = field(default_factory=list)
    n_train: int = 0
    seconds: float = 0.0

    @property
    def seconds_per_example(self) -> float:
        seen = self.n_train * max(len(self.epochs), 1)
        return self.seconds / seen if seen else 0.0

    def to_dict(self, timing: bool = False) -> dict:
        out = {"epochs": self.epochs, "n_train": self.n_train}
        if timing:
            out["seconds"] = self.seconds
            out["seconds_per_example"] = self.seconds_per_example
        return out


def train(split: DatasetSplit, config: TrainConfig, spec: Optional[ModelSpec] = None,
          evaluate: bool = True) -> Tuple[ModelParams, TrainLog]:
    """Minibatch Adagrad over seeded shuffles; deterministic for a fixed seed."""
    from .evaluation import metric_report

    train_set = split.train
    if len(train_set) == 0:
        raise ValueError("training split is empty")
    if spec is None:
        spec = spec_for(train_set, config.embedding_dim, config.hidden)
    check_indices(train_set, spec)
    if evaluate and len(split.eval):
        check_indices(split.eval, spec)
    params = ModelParams.init(spec, config.seed, config.enabled_feature_groups)
    opt = Adagrad(params, config.lr, config.eps)
    rng = np.random.default_rng([config.seed, 3])
    log = TrainLog(n_train=len(train_set))
    n = len(train_set)
    for epoch in range(config.epochs):
        start = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            batch = train_set.take(order[lo:lo + config.batch_size])
            try:
                value, grads = gradients(params, batch)
            except NonFiniteActivation as e:
                raise Diverged(f"epoch {epoch}, offset {lo}: {e}") from e
            if not np.isfinite(value):
                raise Diverged(f"non-finite loss at epoch {epoch}, offset {lo}")
            total += value * len(batch)
            opt.step(params, grads)
        log.seconds += time.perf_counter() - start
        entry = {"epoch": epoch, "train_loss": total / n}
        if evaluate and len(split.eval):
            report = metric_report(split.eval.labels, predict(split.eval, params))
            entry["eval"] = report.per_task
        logger.info("epoch %d train_loss=%.6f", epoch, entry["train_loss"])
        log.epochs.append(entry)
    if not params.all_finite():
        raise Diverged("non-finite parameters after training")
    return params, log


def predict(dataset: FeatureTable, params: ModelParams, batch_size: int = 4096,
            workers: int = 1, groups=None) -> np.ndarray:
    """Order-preserving batched forward pass; ``workers > 1`` shards across threads."""
    n = len(dataset)
    if n == 0:
        return np.zeros((0, N_TASKS))
    check_indices(dataset, params.spec)
    bounds = [(lo, min(lo + batch_size, n)) for lo in range(0, n, batch_size)]

    def run(bound):
        lo, hi = bound
        logits, _ = _forward(params, dataset.take(np.arange(lo, hi)), groups)
        return _sigmoid(logits)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run, bounds))
    else:
        chunks = [run(b) for b in bounds]
    return np.concatenate(chunks, axis=0)


# checkpoints ---------------------------------------------------------------

def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def save_checkpoint(params: ModelParams, path) -> None:
    """``SMRK1`` | u32 manifest length | JSON manifest | float64 LE arrays | 8-byte blake2b."""
    spec = params.spec
    manifest = {
        "spec": {**asdict(spec), "hidden": list(spec.hidden)},
        "layer_sizes": list(spec.layer_sizes),
        "arrays": [[k, list(v.shape)] for k, v in params.arrays.items()],
        "seed": params.seed,
        "enabled_groups": list(params.enabled_groups),
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(head)), head]
    parts += [np.ascontiguousarray(v, dtype="<f8").tobytes() for v in params.arrays.values()]
    body = b"".join(parts)
    try:
        with open(path, "wb") as f:
            f.write(body)
            f.write(_checksum(body))
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path) -> ModelParams:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if data[: len(MAGIC)] != MAGIC:
        raise VersionMismatch(f"{path}: bad magic {data[:len(MAGIC)]!r}, expected {MAGIC!r}")
    if len(data) < len(MAGIC) + 4 + 8:
        raise CorruptChecksum(f"{path}: file truncated")
    body, digest = data[:-8], data[-8:]
    if _checksum(body) != digest:
        raise CorruptChecksum(f"{path}: checksum mismatch")
    (head_len,) = struct.unpack_from("<I", body, len(MAGIC))
    offset = len(MAGIC) + 4
    manifest = json.loads(body[offset:offset + head_len].decode("utf-8"))
    offset += head_len
    spec = ModelSpec(**manifest["spec"])
    arrays = {}
    for name, shape in manifest["arrays"]:
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(body, dtype="<f8", count=count, offset=offset) \
            .astype(np.float64).reshape(shape)
        offset += 8 * count
    if offset != len(body):
        raise CorruptChecksum(f"{path}: {len(body) - offset} trailing bytes")
    return ModelParams(spec, arrays, tuple(manifest["enabled_groups"]), manifest["seed"])
