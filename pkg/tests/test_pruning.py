import logging
import math

import numpy as np
import pytest

from gazetat.errors import PruningError
from gazetat.pruning import (
    PruneMetric,
    cosine_scores,
    prune_report,
    repr_scores,
    score_histograms,
    score_model,
    select_prune_set,
)


def brute_force_selection(layers, p, p_max):
    """Repeatedly take the best still-eligible filter (highest score, lowest layer, lowest index)."""
    total = sum(len(s) for s in layers)
    quota = math.floor(p * total + 1e-9)
    caps = [math.floor(p_max * len(s) + 1e-9) for s in layers]
    scores = np.concatenate(layers)
    layer_of = np.concatenate([np.full(len(s), i) for i, s in enumerate(layers)])
    index_of = np.concatenate([np.arange(len(s)) for s in layers])
    taken = np.zeros(len(scores), dtype=bool)
    used = np.zeros(len(layers), dtype=int)
    chosen = set()
    while len(chosen) < quota:
        eligible = ~taken & (used[layer_of] < np.array(caps)[layer_of])
        if not eligible.any():
            break
        candidates = np.flatnonzero(eligible)
        order = np.lexsort((index_of[candidates], layer_of[candidates], -scores[candidates]))
        best = candidates[order[0]]
        taken[best] = True
        used[layer_of[best]] += 1
        chosen.add((int(layer_of[best]), int(index_of[best])))
    return chosen


def test_selection_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n_layers = int(rng.integers(1, 7))
        sizes = rng.integers(2, max(3, 200 // n_layers), size=n_layers)
        # coarse rounding forces ties
        layers = [np.round(rng.uniform(-1, 1, size=int(n)), 1) for n in sizes]
        p, p_max = float(rng.uniform(0, 0.6)), float(rng.uniform(0, 1))
        selection = select_prune_set(layers, p, p_max)
        assert set(selection.pairs()) == brute_force_selection(layers, p, p_max)


def test_per_layer_cap_is_never_exceeded():
    rng = np.random.default_rng(1)
    layers = [rng.uniform(size=10), rng.uniform(size=20) + 5.0]
    selection = select_prune_set(layers, 0.5, 0.3)
    assert len(selection.for_layer(1)) == 6
    assert len(selection.for_layer(0)) == 3
    assert selection.quota == 15
    assert selection.shortfall == 6


def test_shortfall_is_logged(caplog):
    with caplog.at_level(logging.WARNING, logger="gazetat.pruning"):
        selection = select_prune_set([np.arange(4.0), np.arange(4.0)], 1.0, 0.25)
    assert selection.count == 2
    assert "allow only 2 of 8" in caplog.text


def test_zero_ratio_selects_nothing():
    selection = select_prune_set([np.ones(5), np.ones(5)], 0.0, 0.5)
    assert selection.count == 0 and selection.pairs() == []


def test_ratios_must_be_fractions():
    with pytest.raises(PruningError):
        select_prune_set([np.ones(4)], 20, 0.5)


def test_duplicate_filters_score_highest():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(6, 64, 3, 3))
    w[4] = w[1] * 2.0
    scores = cosine_scores(w)
    assert set(np.argsort(scores)[-2:]) == {1, 4}


def test_scores_divide_by_filter_count():
    w = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(cosine_scores(w), [1 / 3, 1 / 3, 0.0])


def test_dead_filter_scores_one():
    w = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    assert cosine_scores(w)[1] == 1.0
    assert repr_scores(w)[1] == 1.0


def test_single_filter_layer_is_rejected():
    with pytest.raises(PruningError):
        cosine_scores(np.ones((1, 3, 3, 3)))


def test_signed_and_absolute_scores_disagree_on_opposite_filters():
    basis = np.eye(6)
    w = np.stack([basis[0], -basis[0], basis[1], basis[2], basis[3], basis[4]])
    signed, absolute = cosine_scores(w), repr_scores(w)
    assert signed[0] == pytest.approx(-1 / 6) and absolute[0] == pytest.approx(1 / 6)
    assert np.all(signed[2:] == 0) and np.all(absolute[2:] == 0)

    by_signed = select_prune_set([signed], 2 / 6, 1.0).for_layer(0)
    by_absolute = select_prune_set([absolute], 2 / 6, 1.0).for_layer(0)
    assert by_absolute == [0, 1]
    assert not set(by_signed) & {0, 1}


def test_score_model_and_report(tiny_model):
    scores = score_model(tiny_model, PruneMetric.REPR)
    assert list(scores) == list(tiny_model.conv_units())
    assert all(np.all((s >= 0) & (s <= 1)) for s in scores.values())
    selection = select_prune_set(scores, 0.2, 0.5)
    report = prune_report(scores, selection)
    assert len(report) == sum(len(s) for s in scores.values())
    assert report["selected"].sum() == selection.count
    hist = score_histograms(report, bins=4)
    assert hist.groupby("layer")["count"].sum().tolist() == [len(s) for s in scores.values()]
