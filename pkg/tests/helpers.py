"""Tiny hand-built models and batches shared by the unit and acceptance tests."""

import numpy as np

from mmrec import TASKS
from mmrec.features import FEATURE_GROUPS, FeatureTable
from mmrec.profile import EVENT_TYPES
from mmrec.ranker import ModelParams, ModelSpec, gradients

TINY_SPEC = ModelSpec(user_rows=2, item_rows=2, item_token_rows=3, profile_token_rows=3,
                      visual_dim=2, dim=2, hidden=(2,))


def make_table(n=6, spec=TINY_SPEC, seed=0, max_len=3, topk=2) -> FeatureTable:
    rng = np.random.default_rng(seed)
    item_len = rng.integers(0, max_len + 1, n)
    item_tokens = rng.integers(0, spec.item_token_rows, (n, max_len))
    profile_len = rng.integers(0, topk + 1, (n, len(EVENT_TYPES)))
    profile_tokens = rng.integers(0, spec.profile_token_rows, (n, len(EVENT_TYPES), topk))
    return FeatureTable(
        example_id=np.arange(n, dtype=np.int64),
        user_idx=rng.integers(0, spec.user_rows, n),
        item_idx=rng.integers(0, spec.item_rows, n),
        visual=rng.normal(size=(n, spec.visual_dim)),
        item_tokens=item_tokens.astype(np.int32), item_len=item_len.astype(np.int32),
        profile_tokens=profile_tokens.astype(np.int32), profile_len=profile_len.astype(np.int32),
        labels=(rng.random((n, len(TASKS))) < 0.5).astype(np.int8),
    )


def finite_difference_check(params: ModelParams, batch: FeatureTable, step: float = 1e-5):
    """Worst relative error between analytic and central-difference partials.

    Returns ``(worst_error, n_checked)``; coordinates whose gradients are both
    below 1e-10 in magnitude are compared absolutely.
    """
    from mmrec.ranker import dense_gradients

    _, analytic = dense_gradients(params, batch)
    worst, checked = 0.0, 0
    for name, arr in params.arrays.items():
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            up = gradients(params, batch)[0]
            arr[idx] = orig - step
            down = gradients(params, batch)[0]
            arr[idx] = orig
            numeric = (up - down) / (2 * step)
            a = analytic[name][idx]
            scale = max(abs(a), abs(numeric))
            err = abs(a - numeric) / scale if scale > 1e-10 else abs(a - numeric)
            worst = max(worst, err)
            checked += 1
    return worst, checked


def tiny_params(seed=0, groups=FEATURE_GROUPS) -> ModelParams:
    return ModelParams.init(TINY_SPEC, seed=seed, enabled_groups=groups)
