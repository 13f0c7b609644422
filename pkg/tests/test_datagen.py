import dataclasses

import numpy as np
import pytest

from mmrec import TASKS
from mmrec.datagen import (ATTRIBUTE_WORDS, TOPIC_TEMPLATES, Impressions, WorldConfig,
                           caption_for, gen_caption_text, gen_interactions, gen_world)
from mmrec.errors import UnknownItem
from mmrec.tokenization import normalize

SMALL = dict(n_users=300, n_items=3000, n_impressions=30000)


def probe_accuracy(x_train, y_train, x_test, y_test, n_classes, ridge=1e-3):
    """One-vs-rest least-squares linear probe."""
    def design(x):
        return np.hstack([x, np.ones((len(x), 1))])
    a = design(x_train)
    targets = np.eye(n_classes)[y_train]
    w = np.linalg.solve(a.T @ a + ridge * np.eye(a.shape[1]), a.T @ targets)
    return float(np.mean(np.argmax(design(x_test) @ w, axis=1) == y_test))


def test_golden_caption():
    assert caption_for(0, 0) == "a man playing with his dog in a park"
    assert TOPIC_TEMPLATES[0][0] == "dog_play" and ATTRIBUTE_WORDS[0] == "park"


def test_topic_words_disjoint_across_topics_and_phrasings():
    def topic_words(t, phrasing):
        return set(normalize(caption_for(t, 0, phrasing))) - {"a", "in", ATTRIBUTE_WORDS[0]}
    seen = {}
    for t in range(40):
        for ph in range(3):
            for w in topic_words(t, ph):
                assert seen.setdefault(w, (t, ph)) == (t, ph), w
    assert not set(seen) & set(ATTRIBUTE_WORDS)


def test_config_validation():
    with pytest.raises(ValueError):
        WorldConfig(n_topics=30, visual_coarseness=4)
    with pytest.raises(ValueError):
        WorldConfig(n_users=0)
    with pytest.raises(ValueError):
        WorldConfig(caption_signal_strength=-1)
    with pytest.raises(ValueError):
        WorldConfig(n_phrasings=0)


def test_determinism():
    cfg = WorldConfig(**SMALL, seed=5)
    w1, w2 = gen_world(cfg), gen_world(cfg)
    for f in ("item_topic", "item_attribute", "visual", "user_pref", "user_activity"):
        assert np.array_equal(getattr(w1, f), getattr(w2, f))
    i1, i2 = gen_interactions(w1), gen_interactions(w2)
    assert np.array_equal(i1.labels, i2.labels) and np.array_equal(i1.user_id, i2.user_id)
    assert [w1.caption_text(i) for i in range(50)] == [w2.caption_text(i) for i in range(50)]
    other = gen_world(dataclasses.replace(cfg, seed=6))
    assert not np.array_equal(w1.item_topic, other.item_topic)


def test_impressions_roundtrip_bytes(tmp_path):
    imp = gen_interactions(gen_world(WorldConfig(**SMALL)))
    imp.write_jsonl(tmp_path / "a.jsonl")
    back = Impressions.read_jsonl(tmp_path / "a.jsonl")
    back.write_jsonl(tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert np.array_equal(back.labels, imp.labels)


def test_unknown_item():
    w = gen_world(WorldConfig(**SMALL))
    with pytest.raises(UnknownItem):
        gen_caption_text(w.n_items, w)
    with pytest.raises(UnknownItem):
        gen_caption_text(-1, w)


def test_default_positive_rates_in_band():
    imp = gen_interactions(gen_world(WorldConfig()))
    rates = imp.labels.mean(axis=0)
    assert rates.shape == (len(TASKS),)
    assert np.all((rates >= 0.02) & (rates <= 0.25)), rates


def test_very_negative_bias_silences_task():
    cfg = WorldConfig(**SMALL, task_biases=(-40.0, -3, -3, -3, -3))
    assert gen_interactions(gen_world(cfg)).labels[:, 0].sum() == 0


def test_zero_signal_ignores_preferences():
    base = dict(SMALL, caption_signal_strength=0.0)
    a = gen_interactions(gen_world(WorldConfig(**base, liked_affinity=0.0)))
    b = gen_interactions(gen_world(WorldConfig(**base, liked_affinity=5.0)))
    assert np.array_equal(a.labels, b.labels)


def test_events_match_positive_labels():
    imp = gen_interactions(gen_world(WorldConfig(**SMALL)))
    events = list(imp.events())
    assert len(events) == int(imp.labels.sum())
    expected = {(int(imp.user_id[r]), int(imp.item_id[r]), TASKS[c], int(imp.ts[r]))
                for r, c in zip(*np.nonzero(imp.labels))}
    got = {(e.user_id, e.item_id, e.event_type, e.timestamp) for e in events}
    assert got == expected and len(got) == len(events)
    assert all(a.timestamp <= b.timestamp for a, b in zip(events, events[1:]))


def _split(n, frac=0.75):
    cut = int(n * frac)
    return slice(0, cut), slice(cut, n)


def test_caption_exclusivity_probe():
    cfg = WorldConfig(n_users=10, n_items=10000, n_impressions=10)
    w = gen_world(cfg)
    tr, te = _split(w.n_items)
    y = w.item_topic
    visual_acc = probe_accuracy(w.visual[tr], y[tr], w.visual[te], y[te], cfg.n_topics)
    # knowing the coarse group perfectly still leaves 1/g chance on the fine topic
    assert visual_acc <= 1.0 / cfg.visual_coarseness + 0.02
    words = sorted({x for i in range(w.n_items) for x in normalize(w.caption_text(i))})
    index = {x: j for j, x in enumerate(words)}
    bag = np.zeros((w.n_items, len(words)))
    for i in range(w.n_items):
        for x in normalize(w.caption_text(i)):
            bag[i, index[x]] = 1.0
    token_acc = probe_accuracy(bag[tr], y[tr], bag[te], y[te], cfg.n_topics)
    assert token_acc >= 0.99


def test_coarseness_extremes():
    n = 4000
    fine = WorldConfig(n_users=10, n_items=n, n_impressions=10, visual_coarseness=1,
                       visual_dim=32, noise_sigma=0.1)
    w = gen_world(fine)
    tr, te = _split(n)
    # one topic per group: the visual embedding identifies the fine topic
    assert probe_accuracy(w.visual[tr], w.item_topic[tr], w.visual[te], w.item_topic[te], 32) > 0.95
    coarse = dataclasses.replace(fine, visual_coarseness=32)
    w = gen_world(coarse)
    # a single group: nothing beyond chance
    acc = probe_accuracy(w.visual[tr], w.item_topic[tr], w.visual[te], w.item_topic[te], 32)
    assert acc < 0.08


def test_liked_topics_form_the_favourite_group():
    cfg = WorldConfig(**SMALL)
    w = gen_world(cfg)
    liked = (w.user_pref - w.topic_popularity[None, :]) > 0
    assert np.all(liked.sum(axis=1) == cfg.liked_topics)
    groups = np.arange(cfg.n_topics) // cfg.visual_coarseness
    for row in liked[:50]:
        assert len(set(groups[row])) == 1
