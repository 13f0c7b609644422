"""Example assembly: hashed sparse ids, visual vector, caption and profile tokens, labels.

Two representations live here. ``FeatureBundle`` is one example and is what
the dataset files hold line by line. ``FeatureTable`` is the columnar form
the ranker trains on: token lists are right-padded int32 matrices with a
length column.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import TASKS
from .errors import MissingLabel, UnknownFeatureGroup
from .hashing import hash_id, hash_ids
from .profile import (DEFAULT_HALF_LIFE_S, DEFAULT_TOPK, EVENT_TYPES, EngagementEvent,
                      UserInterestProfile, snapshot_topk, update_profile)
from .tokenization import DEFAULT_MAX_LEN

FEATURE_GROUPS = ("visual", "item_tokens", "profile_tokens")
TOKEN_GROUPS = ("item_tokens", "profile_tokens")
DEFAULT_TABLE_SIZE = 1 << 17


@dataclass(frozen=True)
class AssemblyConfig:
    user_table: int = DEFAULT_TABLE_SIZE
    item_table: int = DEFAULT_TABLE_SIZE
    enabled_groups: Tuple[str, ...] = ("visual",)
    max_len: int = DEFAULT_MAX_LEN
    topk: int = DEFAULT_TOPK

    def __post_init__(self):
        object.__setattr__(self, "enabled_groups", tuple(self.enabled_groups))
        check_groups(self.enabled_groups)


def check_groups(groups: Iterable[str]) -> None:
    for g in groups:
        if g not in FEATURE_GROUPS:
            raise UnknownFeatureGroup(f"unknown feature group {g!r}; expected one of {FEATURE_GROUPS}")


@dataclass
class FeatureBundle:
    user_idx: int
    item_idx: int
    visual: List[float]
    item_tokens: List[int]
    profile_tokens: Dict[str, List[int]]
    labels: Tuple[int, ...]
    example_id: int = -1

    def to_json(self) -> str:
        # float repr is the shortest round-trip representation
        return json.dumps({
            "example_id": self.example_id,
            "user_idx": self.user_idx,
            "item_idx": self.item_idx,
            "visual": [float(v) for v in self.visual],
            "item_tokens": list(self.item_tokens),
            "profile_tokens": {t: list(self.profile_tokens.get(t, [])) for t in EVENT_TYPES},
            "labels": list(self.labels),
        })

    @classmethod
    def from_json(cls, line: str) -> "FeatureBundle":
        rec = json.loads(line)
        return cls(user_idx=rec["user_idx"], item_idx=rec["item_idx"], visual=rec["visual"],
                   item_tokens=rec["item_tokens"],
                   profile_tokens={t: rec["profile_tokens"].get(t, []) for t in EVENT_TYPES},
                   labels=tuple(rec["labels"]), example_id=rec.get("example_id", -1))


def _label_tuple(labels: Union[Mapping[str, Optional[int]], Sequence[Optional[int]]]) -> Tuple[int, ...]:
    if isinstance(labels, Mapping):
        values = [labels.get(t) for t in TASKS]
    else:
        values = list(labels)
        if len(values) != len(TASKS):
            raise MissingLabel(f"expected {len(TASKS)} labels, got {len(values)}")
    for task, v in zip(TASKS, values):
        if v is None:
            raise MissingLabel(f"impression has no {task!r} label")
        if v not in (0, 1):
            raise ValueError(f"label for {task!r} must be 0 or 1, got {v!r}")
    return tuple(int(v) for v in values)


def assemble(user_id: int, item, caption_tokens: Sequence[int],
             profile: Optional[Mapping[str, Sequence[int]]],
             labels, config: AssemblyConfig, example_id: int = -1) -> FeatureBundle:
    """Build one example. ``item`` is a ``MediaItem``; ``profile`` maps event type to a token snapshot.

    Disabled token groups become empty lists so every arm shares one schema.
    """
    label_tuple = _label_tuple(labels)
    enabled = set(config.enabled_groups)
    item_tokens = list(caption_tokens)[: config.max_len] if "item_tokens" in enabled else []
    profile_tokens = {t: [] for t in EVENT_TYPES}
    if "profile_tokens" in enabled and profile:
        for t in EVENT_TYPES:
            profile_tokens[t] = list(profile.get(t, []))[: config.topk]
    return FeatureBundle(
        user_idx=hash_id(int(user_id), config.user_table),
        item_idx=hash_id(int(item.item_id), config.item_table),
        visual=[float(v) for v in item.visual_embedding],
        item_tokens=item_tokens,
        profile_tokens=profile_tokens,
        labels=label_tuple,
        example_id=example_id,
    )


def pad_token_lists(lists: Sequence[Sequence[int]], width: int) -> Tuple[np.ndarray, np.ndarray]:
    out = np.zeros((len(lists), width), dtype=np.int32)
    lens = np.zeros(len(lists), dtype=np.int32)
    for i, toks in enumerate(lists):
        n = min(len(toks), width)
        out[i, :n] = toks[:n]
        lens[i] = n
    return out, lens


@dataclass
class FeatureTable:
    """Columnar examples. Token matrices are right-padded; lengths mark the valid prefix."""

    example_id: np.ndarray
    user_idx: np.ndarray
    item_idx: np.ndarray
    visual: np.ndarray
    item_tokens: np.ndarray
    item_len: np.ndarray
    profile_tokens: np.ndarray
    profile_len: np.ndarray
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.user_idx)

    @property
    def visual_dim(self) -> int:
        return self.visual.shape[1]

    def take(self, idx) -> "FeatureTable":
        idx = np.asarray(idx)
        return FeatureTable(self.example_id[idx], self.user_idx[idx], self.item_idx[idx],
                            self.visual[idx], self.item_tokens[idx], self.item_len[idx],
                            self.profile_tokens[idx], self.profile_len[idx], self.labels[idx],
                            dict(self.meta))

    def replace(self, **columns) -> "FeatureTable":
        cols = {k: getattr(self, k) for k in self.__dataclass_fields__}
        cols.update(columns)
        return FeatureTable(**cols)

    def with_groups_emptied(self, groups: Iterable[str]) -> "FeatureTable":
        """Copy with the given token groups set to empty lists (visual to zeros)."""
        groups = list(groups)
        check_groups(groups)
        cols = {}
        if "visual" in groups:
            cols["visual"] = np.zeros_like(self.visual)
        if "item_tokens" in groups:
            cols["item_len"] = np.zeros_like(self.item_len)
            cols["item_tokens"] = np.zeros_like(self.item_tokens)
        if "profile_tokens" in groups:
            cols["profile_len"] = np.zeros_like(self.profile_len)
            cols["profile_tokens"] = np.zeros_like(self.profile_tokens)
        return self.replace(**cols)

    def with_group_permuted(self, group: str, perm: np.ndarray) -> "FeatureTable":
        """Copy where one feature group's values are moved between examples by ``perm``."""
        check_groups([group])
        perm = np.asarray(perm)
        if group == "visual":
            return self.replace(visual=self.visual[perm])
        if group == "item_tokens":
            return self.replace(item_tokens=self.item_tokens[perm], item_len=self.item_len[perm])
        return self.replace(profile_tokens=self.profile_tokens[perm],
                            profile_len=self.profile_len[perm])

    def bundle(self, i: int) -> FeatureBundle:
        prof = {t: self.profile_tokens[i, k, : self.profile_len[i, k]].tolist()
                for k, t in enumerate(EVENT_TYPES)}
        return FeatureBundle(int(self.user_idx[i]), int(self.item_idx[i]), self.visual[i].tolist(),
                             self.item_tokens[i, : self.item_len[i]].tolist(), prof,
                             tuple(int(v) for v in self.labels[i]), int(self.example_id[i]))

    def bundles(self) -> List[FeatureBundle]:
        return [self.bundle(i) for i in range(len(self))]

    @classmethod
    def from_bundles(cls, bundles: Sequence[FeatureBundle], visual_dim: Optional[int] = None,
                     max_len: int = DEFAULT_MAX_LEN, topk: int = DEFAULT_TOPK) -> "FeatureTable":
        n = len(bundles)
        if visual_dim is None:
            visual_dim = len(bundles[0].visual) if n else 0
        max_len = max([max_len] + [len(b.item_tokens) for b in bundles])
        topk = max([topk] + [len(v) for b in bundles for v in b.profile_tokens.values()])
        item_tokens, item_len = pad_token_lists([b.item_tokens for b in bundles], max_len)
        prof = np.zeros((n, len(EVENT_TYPES), topk), dtype=np.int32)
        prof_len = np.zeros((n, len(EVENT_TYPES)), dtype=np.int32)
        for i, b in enumerate(bundles):
            for k, t in enumerate(EVENT_TYPES):
                toks = b.profile_tokens.get(t, [])
                prof[i, k, : len(toks)] = toks
                prof_len[i, k] = len(toks)
        return cls(
            example_id=np.asarray([b.example_id for b in bundles], dtype=np.int64),
            user_idx=np.asarray([b.user_idx for b in bundles], dtype=np.int64),
            item_idx=np.asarray([b.item_idx for b in bundles], dtype=np.int64),
            visual=np.asarray([b.visual for b in bundles], dtype=np.float64).reshape(n, visual_dim),
            item_tokens=item_tokens, item_len=item_len,
            profile_tokens=prof, profile_len=prof_len,
            labels=np.asarray([b.labels for b in bundles], dtype=np.int8).reshape(n, len(TASKS)),
        )

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for i in range(len(self)):
                f.write(self.bundle(i).to_json())
                f.write("\n")

    @classmethod
    def read_jsonl(cls, path, **kwargs) -> "FeatureTable":
        with open(path, encoding="utf-8") as f:
            bundles = [FeatureBundle.from_json(line) for line in f if line.strip()]
        return cls.from_bundles(bundles, **kwargs)


@dataclass
class DatasetSplit:
    train: FeatureTable
    eval: FeatureTable
    ratio: Tuple[int, int] = (7, 1)


def split_indices(n: int, ratio: Tuple[int, int] = (7, 1), seed: int = 0):
    """Seeded shuffle, then cut so that |eval| = round(n * r_eval / (r_train + r_eval))."""
    if n < 1:
        raise ValueError("cannot split an empty dataset")
    r_train, r_eval = ratio
    if r_train < 1 or r_eval < 1:
        raise ValueError(f"ratio entries must be positive, got {ratio}")
    perm = np.random.default_rng([seed, 2]).permutation(n)
    n_eval = int(round(n * r_eval / (r_train + r_eval)))
    eval_idx = np.sort(perm[:n_eval])
    train_idx = np.sort(perm[n_eval:])
    return train_idx, eval_idx


def split(dataset: FeatureTable, ratio: Tuple[int, int] = (7, 1), seed: int = 0) -> DatasetSplit:
    train_idx, eval_idx = split_indices(len(dataset), ratio, seed)
    return DatasetSplit(dataset.take(train_idx), dataset.take(eval_idx), tuple(ratio))


def profile_snapshots(user_ids: np.ndarray, item_ids: np.ndarray, ts: np.ndarray,
                      labels: np.ndarray, item_token_lists: Sequence[Sequence[int]],
                      topk: int = DEFAULT_TOPK, half_life_s: float = DEFAULT_HALF_LIFE_S):
    """Per-impression profile token snapshots taken before that impression's own events.

    Impressions must be in non-decreasing time order. Returns ``(tokens, lens)``
    with shapes (N, 5, topk) and (N, 5).
    """
    n = len(user_ids)
    tokens = np.zeros((n, len(EVENT_TYPES), topk), dtype=np.int32)
    lens = np.zeros((n, len(EVENT_TYPES)), dtype=np.int32)
    profiles: Dict[int, UserInterestProfile] = {}
    # current snapshot per user as (padded row, lengths); only touched types are recomputed
    current: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
    users = user_ids.tolist()
    items = item_ids.tolist()
    times = ts.tolist()
    pos_rows, pos_cols = np.nonzero(labels)
    by_row: Dict[int, List[int]] = {}
    for r, c in zip(pos_rows.tolist(), pos_cols.tolist()):
        by_row.setdefault(r, []).append(c)
    for i in range(n):
        u = users[i]
        snap = current.get(u)
        if snap is not None:
            tokens[i] = snap[0]
            lens[i] = snap[1]
        ks = by_row.get(i)
        if not ks:
            continue
        prof = profiles.get(u)
        if prof is None:
            prof = profiles[u] = UserInterestProfile(u)
            snap = (np.zeros((len(EVENT_TYPES), topk), dtype=np.int32),
                    np.zeros(len(EVENT_TYPES), dtype=np.int32))
        else:
            snap = (snap[0].copy(), snap[1].copy())
        item_toks = item_token_lists[items[i]]
        for k in ks:
            ev = EngagementEvent(u, items[i], EVENT_TYPES[k], times[i])
            update_profile(prof, ev, item_toks, half_life_s)
            top = snapshot_topk(prof, EVENT_TYPES[k], topk)
            snap[0][k, :] = 0
            snap[0][k, : len(top)] = top
            snap[1][k] = len(top)
        current[u] = snap
    return tokens, lens


def build_table(user_ids: np.ndarray, item_ids: np.ndarray, visual: np.ndarray,
                labels: np.ndarray, item_token_lists: Sequence[Sequence[int]],
                profile: Optional[Tuple[np.ndarray, np.ndarray]],
                config: AssemblyConfig, example_ids: Optional[np.ndarray] = None) -> FeatureTable:
    """Vectorized ``assemble`` over a whole impression log.

    ``visual`` is indexed by item id; ``item_token_lists[item_id]`` is that item's caption tokens.
    """
    n = len(user_ids)
    enabled = set(config.enabled_groups)
    if example_ids is None:
        example_ids = np.arange(n, dtype=np.int64)
    if "item_tokens" in enabled:
        per_item, per_item_len = pad_token_lists(item_token_lists, config.max_len)
        item_tokens, item_len = per_item[item_ids], per_item_len[item_ids]
    else:
        item_tokens = np.zeros((n, config.max_len), dtype=np.int32)
        item_len = np.zeros(n, dtype=np.int32)
    if "profile_tokens" in enabled and profile is not None:
        prof_tokens, prof_len = profile
    else:
        prof_tokens = np.zeros((n, len(EVENT_TYPES), config.topk), dtype=np.int32)
        prof_len = np.zeros((n, len(EVENT_TYPES)), dtype=np.int32)
    return FeatureTable(
        example_id=np.asarray(example_ids, dtype=np.int64),
        user_idx=hash_ids(user_ids, config.user_table),
        item_idx=hash_ids(item_ids, config.item_table),
        visual=np.asarray(visual, dtype=np.float64)[item_ids],
        item_tokens=item_tokens, item_len=item_len,
        profile_tokens=prof_tokens, profile_len=prof_len,
        labels=np.asarray(labels, dtype=np.int8),
    )
