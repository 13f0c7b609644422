import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmrec import TASKS
from mmrec.content import MediaItem
from mmrec.errors import MissingLabel, UnknownFeatureGroup
from mmrec.features import (FEATURE_GROUPS, AssemblyConfig, FeatureBundle, FeatureTable,
                            assemble, build_table, profile_snapshots, split, split_indices)
from mmrec.hashing import hash_id
from mmrec.profile import DEFAULT_HALF_LIFE_S, EVENT_TYPES

ITEM = MediaItem(11, np.array([0.5, -1.0, 2.0]), ground_truth_ref=11)
LABELS = {"comment": 0, "like": 1, "share": 0, "dwell": 1, "consume": 0}
PROFILE = {"like": [4, 5], "dwell": [6]}


def test_baseline_bundle_has_empty_token_fields():
    b = assemble(3, ITEM, [7, 8, 9], PROFILE, LABELS, AssemblyConfig())
    assert b.item_tokens == [] and all(v == [] for v in b.profile_tokens.values())
    assert b.visual == [0.5, -1.0, 2.0]
    assert b.user_idx == hash_id(3, 1 << 17) and b.item_idx == hash_id(11, 1 << 17)
    assert b.labels == (0, 1, 0, 1, 0)


def test_treatment_bundle_carries_tokens():
    cfg = AssemblyConfig(enabled_groups=("visual", "item_tokens", "profile_tokens"), max_len=2)
    b = assemble(3, ITEM, [7, 8, 9], PROFILE, LABELS, cfg)
    assert b.item_tokens == [7, 8]
    assert b.profile_tokens["like"] == [4, 5] and b.profile_tokens["share"] == []


def test_schema_is_arm_invariant():
    base = assemble(3, ITEM, [7], PROFILE, LABELS, AssemblyConfig())
    treat = assemble(3, ITEM, [7], PROFILE, LABELS,
                     AssemblyConfig(enabled_groups=FEATURE_GROUPS))
    a, b = json.loads(base.to_json()), json.loads(treat.to_json())
    assert a.keys() == b.keys() and a["profile_tokens"].keys() == b["profile_tokens"].keys()
    assert FeatureBundle.from_json(treat.to_json()) == treat


@pytest.mark.parametrize("labels", [
    {**LABELS, "share": None},
    {k: v for k, v in LABELS.items() if k != "dwell"},
    [0, 1, 0, 1],
])
def test_missing_label(labels):
    with pytest.raises(MissingLabel):
        assemble(3, ITEM, [7], None, labels, AssemblyConfig())


def test_non_binary_label():
    with pytest.raises(ValueError):
        assemble(3, ITEM, [7], None, [0, 1, 2, 0, 0], AssemblyConfig())


def test_unknown_group():
    with pytest.raises(UnknownFeatureGroup):
        AssemblyConfig(enabled_groups=("visual", "audio"))


@pytest.mark.parametrize("n,n_train,n_eval", [(8000, 7000, 1000), (8, 7, 1), (1, 1, 0)])
def test_split_sizes(n, n_train, n_eval):
    tr, ev = split_indices(n, (7, 1), seed=0)
    assert (len(tr), len(ev)) == (n_train, n_eval)


def test_split_deterministic():
    a, b = split_indices(1000, seed=4), split_indices(1000, seed=4)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[1], split_indices(1000, seed=5)[1])


@given(st.integers(1, 3000), st.integers(0, 2**31))
def test_split_partition(n, seed):
    tr, ev = split_indices(n, (7, 1), seed)
    assert len(np.intersect1d(tr, ev)) == 0
    assert np.array_equal(np.union1d(tr, ev), np.arange(n))
    assert abs(len(tr) - 7 * len(ev)) <= 8


def test_table_roundtrips(small_data, arms, tmp_path):
    table = small_data.table(arms["combined_a"]).take(np.arange(300))
    again = FeatureTable.from_bundles(table.bundles(), max_len=table.item_tokens.shape[1],
                                      topk=table.profile_tokens.shape[2])
    table.write_jsonl(tmp_path / "t.jsonl")
    read = FeatureTable.read_jsonl(tmp_path / "t.jsonl", max_len=table.item_tokens.shape[1],
                                   topk=table.profile_tokens.shape[2])
    for other in (again, read):
        for col in ("example_id", "user_idx", "item_idx", "visual", "item_tokens", "item_len",
                    "profile_tokens", "profile_len", "labels"):
            assert np.array_equal(getattr(table, col), getattr(other, col)), col


def test_build_table_matches_assemble(small_data, arms):
    arm = arms["combined_a"]
    table = small_data.table(arm)
    cfg = small_data.assembly_config(arm)
    imp, world = small_data.impressions, small_data.world
    tok = small_data.item_tokens["A"]
    for i in range(0, len(imp), 997):
        prof = {t: table.profile_tokens[i, k, :table.profile_len[i, k]].tolist()
                for k, t in enumerate(EVENT_TYPES)}
        b = assemble(int(imp.user_id[i]), world.media_item(int(imp.item_id[i])),
                     tok[imp.item_id[i]], prof, imp.labels[i].tolist(), cfg, example_id=i)
        assert b == table.bundle(i)


def test_table_group_edits(small_data, arms):
    table = small_data.table(arms["combined_a"]).take(np.arange(50))
    emptied = table.with_groups_emptied(["item_tokens", "profile_tokens"])
    assert emptied.item_len.sum() == 0 and emptied.profile_len.sum() == 0
    assert np.array_equal(emptied.visual, table.visual)
    perm = np.arange(50)[::-1]
    shuffled = table.with_group_permuted("item_tokens", perm)
    assert np.array_equal(shuffled.item_tokens, table.item_tokens[perm])
    assert np.array_equal(shuffled.profile_tokens, table.profile_tokens)
    with pytest.raises(UnknownFeatureGroup):
        table.with_group_permuted("audio", perm)


def snapshot_oracle(users, items, ts, labels, item_tokens, topk, half_life):
    """Rank tokens by sum of 2^(t_event / half_life) over strictly earlier events.

    Multiplying every decayed weight by 2^(t_now / half_life) does not change the
    ranking, so this equals ranking by current decayed weight.
    """
    history = {}
    out = []
    for i in range(len(users)):
        u = int(users[i])
        snaps = []
        for k in range(len(EVENT_TYPES)):
            scores = {}
            for t_e, toks in history.get((u, k), []):
                for tok in set(toks):
                    scores[tok] = scores.get(tok, 0.0) + 2.0 ** (t_e / half_life)
            ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:topk]
            snaps.append([tok for tok, _ in ranked])
        out.append(snaps)
        for k in np.flatnonzero(labels[i]):
            history.setdefault((u, int(k)), []).append((int(ts[i]), item_tokens[int(items[i])]))
    return out


def test_profile_snapshots_match_oracle():
    rng = np.random.default_rng(0)
    n = 400
    users = rng.integers(0, 6, n)
    items = rng.integers(0, 30, n)
    ts = np.sort(rng.integers(0, 40 * 24 * 3600, n))
    labels = (rng.random((n, len(TASKS))) < 0.3).astype(np.int8)
    # tokens of one item always co-occur, so ties are common and exercise the id tie-break
    item_tokens = [list(rng.choice(50, size=rng.integers(1, 6), replace=False)) for _ in range(30)]
    tokens, lens = profile_snapshots(users, items, ts, labels, item_tokens, topk=4,
                                     half_life_s=DEFAULT_HALF_LIFE_S)
    expected = snapshot_oracle(users, items, ts, labels, item_tokens, 4, DEFAULT_HALF_LIFE_S)
    for i in range(n):
        got = [tokens[i, k, :lens[i, k]].tolist() for k in range(len(EVENT_TYPES))]
        assert got == expected[i], i
