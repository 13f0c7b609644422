"""Offline metrics: AUC, normalized entropy, relative gains, shard t-tests, shuffle importance."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from . import TASKS
from .errors import BasePerfect, DegenerateLabels, MismatchedEvalSets
from .features import FEATURE_GROUPS, FeatureTable, check_groups
from .stats import SignificanceResult, paired_ttest

PROB_CLAMP = 1e-7
DEFAULT_SHARDS = 8


def _binary_labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    return y.astype(bool)


def auc(labels, scores) -> float:
    """Probability that a random positive outscores a random negative (ties count one half)."""
    y = _binary_labels(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise ValueError(f"labels and scores differ in length: {y.shape} vs {s.shape}")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC needs at least one positive and one negative label")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def ne(labels, probabilities) -> float:
    """Mean log loss divided by the entropy of the empirical positive rate."""
    y = _binary_labels(labels).astype(np.float64)
    p = np.clip(np.asarray(probabilities, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    if y.shape != p.shape:
        raise ValueError(f"labels and probabilities differ in length: {y.shape} vs {p.shape}")
    base = y.mean() if len(y) else 0.0
    if base == 0.0 or base == 1.0:
        raise DegenerateLabels("NE needs at least one positive and one negative label")
    cross_entropy = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    background = -(base * np.log(base) + (1.0 - base) * np.log(1.0 - base))
    return float(cross_entropy / background)


def auc_gain_pct(auc_base: float, auc_treat: float) -> float:
    """Relative reduction of 1 - AUC, in percent; positive means the treatment ranks better."""
    if auc_base >= 1.0:
        raise BasePerfect("baseline AUC is 1; relative 1-AUC change is undefined")
    return 100.0 * ((1.0 - auc_base) - (1.0 - auc_treat)) / (1.0 - auc_base)


def ne_gain_pct(ne_base: float, ne_treat: float) -> float:
    """Relative NE change in percent; negative values are reductions (improvements)."""
    if ne_base <= 0:
        raise ValueError(f"baseline NE must be positive, got {ne_base}")
    return 100.0 * (ne_treat - ne_base) / ne_base


def eval_fingerprint(labels: np.ndarray, example_ids: Optional[np.ndarray] = None) -> str:
    h = hashlib.blake2b(digest_size=16)
    h.update(np.ascontiguousarray(labels, dtype=np.int8).tobytes())
    if example_ids is not None:
        h.update(np.ascontiguousarray(example_ids, dtype=np.int64).tobytes())
    return h.hexdigest()


@dataclass
class MetricReport:
    per_task: Dict[str, Dict[str, float]]
    n_examples: int
    fingerprint: str = ""
    name: str = ""

    @property
    def mean_auc(self) -> float:
        return float(np.mean([m["auc"] for m in self.per_task.values()]))

    @property
    def mean_ne(self) -> float:
        return float(np.mean([m["ne"] for m in self.per_task.values()]))

    def to_dict(self) -> dict:
        return {"name": self.name, "n_examples": self.n_examples, "fingerprint": self.fingerprint,
                "per_task": self.per_task, "mean_auc": self.mean_auc, "mean_ne": self.mean_ne}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(d["per_task"], d["n_examples"], d.get("fingerprint", ""), d.get("name", ""))


def metric_report(labels: np.ndarray, probabilities: np.ndarray, name: str = "",
                  example_ids: Optional[np.ndarray] = None) -> MetricReport:
    labels = np.asarray(labels)
    per_task = {}
    for k, task in enumerate(TASKS):
        per_task[task] = {"auc": auc(labels[:, k], probabilities[:, k]),
                          "ne": ne(labels[:, k], probabilities[:, k])}
    return MetricReport(per_task, len(labels), eval_fingerprint(labels, example_ids), name)


def _require_same_eval(base: MetricReport, treat: MetricReport) -> None:
    if base.fingerprint != treat.fingerprint or base.n_examples != treat.n_examples:
        raise MismatchedEvalSets(
            f"reports {base.name!r} and {treat.name!r} were computed on different eval sets")


def compare(base: MetricReport, treat: MetricReport) -> dict:
    """Per-task and task-averaged gains of ``treat`` over ``base``.

    ``ne_gains_pct`` is the reduction magnitude (positive = better), the
    summary-table convention; ``mean_ne_change_pct`` keeps the raw sign.
    """
    _require_same_eval(base, treat)
    auc_gains = {t: auc_gain_pct(base.per_task[t]["auc"], treat.per_task[t]["auc"]) for t in TASKS}
    ne_changes = {t: ne_gain_pct(base.per_task[t]["ne"], treat.per_task[t]["ne"]) for t in TASKS}
    mean_auc_gain = float(np.mean(list(auc_gains.values())))
    mean_ne_change = float(np.mean(list(ne_changes.values())))
    return {"baseline": base.name, "treatment": treat.name,
            "auc_gain_pct": auc_gains, "ne_change_pct": ne_changes,
            "mean_auc_gain_pct": mean_auc_gain, "mean_ne_change_pct": mean_ne_change,
            "ne_gains_pct": -mean_ne_change}


def deep_dive_report(base: MetricReport, treat: MetricReport) -> List[dict]:
    """One row per task with the relative NE change (lower is better)."""
    _require_same_eval(base, treat)
    return [{"task": t, "delta_ne_pct": ne_gain_pct(base.per_task[t]["ne"], treat.per_task[t]["ne"])}
            for t in TASKS]


def shard_indices(n: int, n_shards: int = DEFAULT_SHARDS, seed: int = 0) -> List[np.ndarray]:
    """Disjoint, near-equal random shards covering ``range(n)``."""
    if n_shards < 2:
        raise ValueError("need at least 2 shards")
    perm = np.random.default_rng([seed, 6]).permutation(n)
    return [np.sort(s) for s in np.array_split(perm, n_shards)]


def shard_metric(labels: np.ndarray, probabilities: np.ndarray, metric: str) -> float:
    """Task-averaged AUC or NE on one shard."""
    fn = {"auc": auc, "ne": ne}[metric]
    return float(np.mean([fn(labels[:, k], probabilities[:, k]) for k in range(len(TASKS))]))


def paired_shard_test(labels: np.ndarray, base_probs: np.ndarray, treat_probs: np.ndarray,
                      n_shards: int = DEFAULT_SHARDS, seed: int = 0,
                      metric: str = "auc") -> dict:
    """Paired t-test of a task-averaged metric across disjoint eval shards."""
    pairs = []
    for idx in shard_indices(len(labels), n_shards, seed):
        pairs.append((shard_metric(labels[idx], base_probs[idx], metric),
                      shard_metric(labels[idx], treat_probs[idx], metric)))
    result: SignificanceResult = paired_ttest(pairs)
    return {"metric": metric, "pairs": pairs, **result.to_dict()}


def shuffle_importance(params, eval_set: FeatureTable, feature_group: str, seed: int = 0,
                       permutation: Optional[np.ndarray] = None) -> dict:
    """NE increase per task when one feature group is permuted across eval examples."""
    from .ranker import predict

    check_groups([feature_group])
    if permutation is None:
        permutation = np.random.default_rng([seed, 5]).permutation(len(eval_set))
    intact = predict(eval_set, params)
    shuffled = predict(eval_set.with_group_permuted(feature_group, permutation), params)
    labels = eval_set.labels
    delta = {t: ne(labels[:, k], shuffled[:, k]) - ne(labels[:, k], intact[:, k])
             for k, t in enumerate(TASKS)}
    return {"group": feature_group, "delta_ne": delta, "mean_delta_ne": float(np.mean(list(delta.values())))}


def importance_ranking(params, eval_set: FeatureTable, seed: int = 0,
                       groups: Sequence[str] = FEATURE_GROUPS) -> List[dict]:
    """Shuffle importance of every group, most important first."""
    results = [shuffle_importance(params, eval_set, g, seed) for g in groups]
    order = sorted(range(len(results)), key=lambda i: (-results[i]["mean_delta_ne"], i))
    ranked = []
    for rank, i in enumerate(order, 1):
        ranked.append({"rank": rank, **results[i]})
    return ranked
