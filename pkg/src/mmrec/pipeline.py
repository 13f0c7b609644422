"""Experiment orchestration: one world, several arms, shared splits and seeds.

Run directory layout::

    config.json          resolved experiment config
    world/               manifest.json, items.jsonl, impressions.jsonl, events.jsonl, vocab_a.tsv
    datasets/            <arm>.train.jsonl / <arm>.eval.jsonl (only with write_datasets)
    checkpoints/         <arm>.smrk
    metrics/             <arm>.json, comparisons.json, importance.json, ablation.json, summary.json
    timing.json          wall-clock training cost per arm (excluded from metric determinism)
    report.txt           rendered summary and deep-dive tables
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import TASKS
from .content import InvocationPolicy, SyntheticCaptioner
from .datagen import Impressions, World, WorldConfig, gen_interactions, gen_world
from .errors import ConfigError, Diverged, MissingArtifacts
from .evaluation import (DEFAULT_SHARDS, MetricReport, compare, deep_dive_report,
                         importance_ranking, metric_report, paired_shard_test)
from .features import (FEATURE_GROUPS, TOKEN_GROUPS, AssemblyConfig, DatasetSplit, FeatureTable,
                       build_table, profile_snapshots, split_indices)
from .profile import DEFAULT_HALF_LIFE_S, DEFAULT_TOPK, write_event_log
from .ranker import ModelParams, TrainConfig, predict, save_checkpoint, spec_for, train
from .tokenization import DEFAULT_MAX_LEN, HashTokenizer, WordTokenizer, normalize, train_vocab

logger = logging.getLogger(__name__)


@dataclass
class TokenizerConfig:
    vocab_size: int = 1024
    num_buckets: int = 64
    hash_seed: int = 0
    max_len: int = DEFAULT_MAX_LEN


@dataclass
class ArmConfig:
    name: str
    groups: Tuple[str, ...] = ("visual",)
    tokenizer: str = "A"
    feature_name: str = ""

    def __post_init__(self):
        self.groups = tuple(self.groups)
        for g in self.groups:
            if g not in FEATURE_GROUPS:
                raise ConfigError(f"arm {self.name!r}: unknown feature group {g!r}")
        if self.tokenizer not in ("A", "B"):
            raise ConfigError(f"arm {self.name!r}: tokenizer must be 'A' or 'B'")

    @property
    def uses_tokens(self) -> bool:
        return any(g in TOKEN_GROUPS for g in self.groups)


def default_arms() -> List[ArmConfig]:
    return [
        ArmConfig("baseline", ("visual",), "A", "Visual features only"),
        ArmConfig("caption_tokens_a", ("visual", "item_tokens"), "A", "MM-LLM caption token ids"),
        ArmConfig("caption_tokens_b", ("visual", "item_tokens"), "B", "MM-LLM caption token ids"),
        ArmConfig("profile_tokens_a", ("visual", "profile_tokens"), "A",
                  "MM-LLM user interest profile token ids"),
        ArmConfig("combined_a", ("visual", "item_tokens", "profile_tokens"), "A",
                  "Caption + profile token ids"),
    ]


@dataclass
class EvalConfig:
    n_ttest_subsets: int = DEFAULT_SHARDS
    topk_profile: int = DEFAULT_TOPK
    ttest_metric: str = "auc"
    importance_seed: int = 0


@dataclass
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    arms: List[ArmConfig] = field(default_factory=default_arms)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    policy: InvocationPolicy = field(default_factory=InvocationPolicy)
    split_ratio: Tuple[int, int] = (7, 1)
    split_seed: int = 0
    user_table: int = 1 << 17
    item_table: int = 1 << 17
    half_life_s: float = DEFAULT_HALF_LIFE_S
    baseline_arm: str = "baseline"
    write_datasets: bool = False
    write_world: bool = True

    def __post_init__(self):
        self.split_ratio = tuple(self.split_ratio)
        names = [a.name for a in self.arms]
        if len(set(names)) != len(names):
            raise ConfigError("arm names must be unique")
        if self.baseline_arm not in names:
            raise ConfigError(f"baseline arm {self.baseline_arm!r} is not among the arms")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Same experiment with world, split and training seeds all set to ``seed``."""
        return dataclasses.replace(
            self, world=dataclasses.replace(self.world, seed=seed),
            train=dataclasses.replace(self.train, seed=seed), split_seed=seed)

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        _reject_unknown(cls, d, "experiment config")
        kwargs = {}
        nested = {"world": WorldConfig, "tokenizer": TokenizerConfig, "train": TrainConfig,
                  "eval": EvalConfig, "policy": InvocationPolicy}
        for key, value in d.items():
            if key in nested:
                _reject_unknown(nested[key], value, key)
                kwargs[key] = nested[key](**value)
            elif key == "arms":
                arms = []
                for a in value:
                    _reject_unknown(ArmConfig, a, "arm")
                    arms.append(ArmConfig(**a))
                kwargs[key] = arms
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _reject_unknown(cls, d, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


# data preparation -----------------------------------------------------------

@dataclass
class PreparedData:
    """Everything arms share: the world, the impression log, token lists and the split."""

    config: ExperimentConfig
    world: World
    impressions: Impressions
    captions: List[Optional[str]]
    words: List[List[str]]
    tokenizers: Dict[str, object]
    item_tokens: Dict[str, List[List[int]]]
    profiles: Dict[str, Tuple[np.ndarray, np.ndarray]]
    train_idx: np.ndarray
    eval_idx: np.ndarray

    def assembly_config(self, arm: ArmConfig) -> AssemblyConfig:
        cfg = self.config
        return AssemblyConfig(cfg.user_table, cfg.item_table, arm.groups,
                              cfg.tokenizer.max_len, cfg.eval.topk_profile)

    def table(self, arm: ArmConfig) -> FeatureTable:
        imp = self.impressions
        tok = arm.tokenizer
        profile = self.profiles.get(tok) if "profile_tokens" in arm.groups else None
        table = build_table(imp.user_id, imp.item_id, self.world.visual, imp.labels,
                            self.item_tokens[tok], profile, self.assembly_config(arm))
        space = self.tokenizers[tok].id_space
        table.meta = {"user_table": self.config.user_table, "item_table": self.config.item_table,
                      "item_token_space": space, "profile_token_space": space,
                      "arm": arm.name, "tokenizer": tok}
        return table

    def split(self, arm: ArmConfig) -> DatasetSplit:
        table = self.table(arm)
        return DatasetSplit(table.take(self.train_idx), table.take(self.eval_idx),
                            self.config.split_ratio)


def prepare(config: ExperimentConfig) -> PreparedData:
    world = gen_world(config.world)
    impressions = gen_interactions(world, config.world)
    captioner = SyntheticCaptioner(world, config.policy)
    captions = [c.text if c is not None else None
                for c in captioner.caption_many(world.media_items())]
    words = [normalize(c) if c is not None else [] for c in captions]
    tcfg = config.tokenizer
    vocab = train_vocab([w for w, c in zip(words, captions) if c is not None], tcfg.vocab_size)
    tokenizers = {"A": WordTokenizer(vocab, tcfg.max_len),
                  "B": HashTokenizer(tcfg.num_buckets, tcfg.hash_seed, tcfg.max_len)}
    item_tokens = {k: [tok(w) for w in words] for k, tok in tokenizers.items()}
    needed = sorted({a.tokenizer for a in config.arms if "profile_tokens" in a.groups})
    profiles = {}
    for k in needed:
        profiles[k] = profile_snapshots(impressions.user_id, impressions.item_id, impressions.ts,
                                        impressions.labels, item_tokens[k],
                                        config.eval.topk_profile, config.half_life_s)
    train_idx, eval_idx = split_indices(len(impressions), config.split_ratio, config.split_seed)
    return PreparedData(config, world, impressions, captions, words, tokenizers, item_tokens,
                        profiles, train_idx, eval_idx)


def write_world(data: PreparedData, world_dir: Path) -> None:
    world_dir.mkdir(parents=True, exist_ok=True)
    manifest = data.world.manifest()
    manifest["n_captioned"] = sum(c is not None for c in data.captions)
    dump_json(world_dir / "manifest.json", manifest)
    with open(world_dir / "items.jsonl", "w", encoding="utf-8") as f:
        w = data.world
        for i in range(w.n_items):
            f.write(json.dumps({"item_id": i, "has_media": bool(w.has_media[i]),
                                "value_score": float(w.value_score[i]),
                                "caption": data.captions[i]}))
            f.write("\n")
    data.impressions.write_jsonl(world_dir / "impressions.jsonl")
    write_event_log(world_dir / "events.jsonl", data.impressions.events())
    data.tokenizers["A"].vocab.save(world_dir / "vocab_a.tsv")


# experiment -----------------------------------------------------------------

@dataclass
class ArmResult:
    arm: ArmConfig
    params: ModelParams
    report: MetricReport
    eval_probs: np.ndarray
    train_log: dict
    seconds_per_example: float


def train_arm(data: PreparedData, arm: ArmConfig) -> Tuple[ArmResult, DatasetSplit]:
    split = data.split(arm)
    tcfg = dataclasses.replace(data.config.train, enabled_feature_groups=arm.groups)
    spec = spec_for(split.train, tcfg.embedding_dim, tcfg.hidden)
    params, log = train(split, tcfg, spec)
    probs = predict(split.eval, params)
    report = metric_report(split.eval.labels, probs, arm.name, split.eval.example_id)
    return ArmResult(arm, params, report, probs, log.to_dict(), log.seconds_per_example), split


def run_experiment(config: ExperimentConfig, out_dir) -> dict:
    """Train and evaluate every arm, then write all artifacts under ``out_dir``."""
    out = Path(out_dir)
    for sub in ("world", "datasets", "checkpoints", "metrics"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    dump_json(out / "config.json", config.to_dict())
    marker = out / "PARTIAL"
    marker.write_text("run in progress\n")

    data = prepare(config)
    if config.write_world:
        write_world(data, out / "world")

    results: Dict[str, ArmResult] = {}
    splits: Dict[str, DatasetSplit] = {}
    timing = {}
    for arm in config.arms:
        logger.info("training arm %s", arm.name)
        try:
            result, split = train_arm(data, arm)
        except Diverged as e:
            marker.write_text(f"arm {arm.name} diverged: {e}\n")
            raise
        results[arm.name], splits[arm.name] = result, split
        save_checkpoint(result.params, out / "checkpoints" / f"{arm.name}.smrk")
        if config.write_datasets:
            split.train.write_jsonl(out / "datasets" / f"{arm.name}.train.jsonl")
            split.eval.write_jsonl(out / "datasets" / f"{arm.name}.eval.jsonl")
        dump_json(out / "metrics" / f"{arm.name}.json",
                  {"arm": dataclasses.asdict(arm), "report": result.report.to_dict(),
                   "train_log": result.train_log})
        timing[arm.name] = {"seconds_per_example": result.seconds_per_example}

    summary = summarize(config, data, results, splits)
    for name, obj in summary.items():
        dump_json(out / "metrics" / f"{name}.json", obj)
    base_spe = timing[config.baseline_arm]["seconds_per_example"]
    for name in timing:
        timing[name]["ratio_to_baseline"] = (timing[name]["seconds_per_example"] / base_spe
                                             if base_spe else None)
    dump_json(out / "timing.json", timing)
    (out / "report.txt").write_text(render_reports(out), encoding="utf-8")
    marker.unlink()
    return summary


def summarize(config: ExperimentConfig, data: PreparedData, results: Dict[str, ArmResult],
              splits: Dict[str, DatasetSplit]) -> dict:
    base = results[config.baseline_arm]
    labels = splits[config.baseline_arm].eval.labels
    ecfg = config.eval
    comparisons = {}
    rows = []
    for arm in config.arms:
        res = results[arm.name]
        gains = compare(base.report, res.report)
        ttests = {m: paired_shard_test(labels, base.eval_probs, res.eval_probs,
                                       ecfg.n_ttest_subsets, config.split_seed, m)
                  for m in ("auc", "ne")}
        comparisons[arm.name] = {"gains": gains, "ttest": ttests,
                                 "deep_dive": deep_dive_report(base.report, res.report)}
        rows.append({
            "arm": arm.name,
            "feature_name": arm.feature_name,
            "tokenizer": "-" if not arm.uses_tokens else f"Tokenizer {arm.tokenizer}",
            "mean_auc": res.report.mean_auc,
            "mean_ne": res.report.mean_ne,
            "auc_gains_pct": gains["mean_auc_gain_pct"],
            "ne_gains_pct": gains["ne_gains_pct"],
            "p_value": ttests[ecfg.ttest_metric]["p_value"],
        })

    candidates = [a for a in config.arms if a.name != config.baseline_arm]
    best = max(candidates or config.arms,
               key=lambda a: comparisons[a.name]["gains"]["mean_auc_gain_pct"])
    best_res = results[best.name]
    eval_set = splits[best.name].eval
    importance = {"arm": best.name,
                  "ranking": importance_ranking(best_res.params, eval_set, ecfg.importance_seed)}

    ablation = {}
    for arm in config.arms:
        if not any(g in arm.groups for g in TOKEN_GROUPS):
            continue
        res = results[arm.name]
        ev = splits[arm.name].eval
        emptied = predict(ev.with_groups_emptied(TOKEN_GROUPS), res.params)
        ablated = metric_report(ev.labels, emptied, f"{arm.name}-ablated", ev.example_id)
        ablation[arm.name] = {"intact_mean_ne": res.report.mean_ne,
                              "ablated_mean_ne": ablated.mean_ne,
                              "intact_mean_auc": res.report.mean_auc,
                              "ablated_mean_auc": ablated.mean_auc,
                              "ne_degradation_pct": ne_pct(res.report.mean_ne, ablated.mean_ne)}
    return {"summary": {"baseline": config.baseline_arm, "best_arm": best.name, "rows": rows},
            "comparisons": comparisons, "importance": importance, "ablation": ablation}


def ne_pct(intact: float, ablated: float) -> float:
    return 100.0 * (ablated - intact) / intact


# reports --------------------------------------------------------------------

SUMMARY_HEADER = ("Arm", "Feature Name", "Tokenizer Type", "AUC Gains %", "NE Gains %", "p-value")
DEEP_DIVE_HEADER = ("Representative Task", "dNE (lower is better, %)")
TASK_LABELS = {"comment": "Comment Related", "like": "Like Related", "share": "Share Related",
               "dwell": "Time spent Related", "consume": "Consumption Related"}


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    fmt = lambda r: "  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip()
    lines = [fmt(header), "  ".join("-" * w for w in widths)]
    lines += [fmt(r) for r in rows]
    return "\n".join(lines)


def render_reports(run_dir) -> str:
    """Plain-text summary and per-task deep-dive tables from a run directory's metric files."""
    metrics = Path(run_dir) / "metrics"
    needed = [metrics / "summary.json", metrics / "comparisons.json"]
    missing = [str(p) for p in needed if not p.exists()]
    if missing:
        raise MissingArtifacts(f"missing run artifacts: {missing}")
    summary = json.loads(needed[0].read_text(encoding="utf-8"))
    comparisons = json.loads(needed[1].read_text(encoding="utf-8"))
    base = summary["baseline"]
    rows = []
    for r in summary["rows"]:
        if r["arm"] == base:
            continue
        rows.append((r["arm"], r["feature_name"], r["tokenizer"], f"{r['auc_gains_pct']:.2f}",
                     f"{r['ne_gains_pct']:.2f}", f"{r['p_value']:.2g}"))
    parts = [f"Offline gains over baseline arm '{base}' (AUC gains: relative change of 1-AUC)",
             _table(SUMMARY_HEADER, rows), ""]
    for r in summary["rows"]:
        if r["arm"] == base:
            continue
        dive = comparisons[r["arm"]]["deep_dive"]
        parts.append(f"Task-level deep dive: {r['arm']} vs {base}")
        parts.append(_table(DEEP_DIVE_HEADER,
                            [(TASK_LABELS[d["task"]], f"{d['delta_ne_pct']:.2f}") for d in dive]))
        parts.append("")
    imp_path = metrics / "importance.json"
    if imp_path.exists():
        imp = json.loads(imp_path.read_text(encoding="utf-8"))
        parts.append(f"Shuffle feature importance ({imp['arm']}, mean dNE)")
        parts.append(_table(("Rank", "Feature Group", "Mean dNE"),
                            [(str(r["rank"]), r["group"], f"{r['mean_delta_ne']:.4f}")
                             for r in imp["ranking"]]))
        parts.append("")
    return "\n".join(parts)
