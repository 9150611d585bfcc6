import logging

import numpy as np
import pytest

from gazetat.errors import ReinitError
from gazetat.nn import fan_in_bound
from gazetat.pruning import PruneSelection
from gazetat.reinit import (
    ReinitMode,
    align_and_assign,
    bn_adjusted_norms,
    orthogonal_basis,
    plan_reinit,
    reinit,
    reinit_report,
    variant_reinit,
)

SELECTED = {0: [1, 2], 1: [0, 3, 5], 4: [2]}


def _cosines(rows):
    flat = rows.reshape(len(rows), -1)
    unit = flat / np.linalg.norm(flat, axis=1, keepdims=True)
    gram = unit @ unit.T
    return gram[~np.eye(len(rows), dtype=bool)]


@pytest.fixture
def trained_looking(tiny_model):
    """The tiny model with non-trivial BN scales and running variances."""
    rng = np.random.default_rng(5)
    for unit in tiny_model.conv_units().values():
        n = unit.bn.weight.shape[0]
        unit.bn.weight.data[:] = rng.uniform(-2.0, 2.0, size=n)
        unit.bn.bias.data[:] = rng.normal(size=n)
        unit.bn.running_var[:] = rng.uniform(0.1, 3.0, size=n)
        unit.bn.running_mean[:] = rng.normal(size=n)
    return tiny_model


@pytest.fixture
def selection():
    return PruneSelection(selected={k: list(v) for k, v in SELECTED.items()}, quota=6, p=0.2, p_max=0.5)


def test_basis_rows_are_orthonormal():
    rng = np.random.default_rng(0)
    basis = orthogonal_basis(rng.normal(size=(8, 4, 3, 3)), 5, rng, [0, 1, 2, 3, 4])
    np.testing.assert_allclose(basis @ basis.T, np.eye(5), atol=1e-12)


def test_basis_survives_rank_deficient_weights():
    basis = orthogonal_basis(np.zeros((6, 3, 3, 3)), 4, np.random.default_rng(0))
    np.testing.assert_allclose(basis @ basis.T, np.eye(4), atol=1e-12)


def test_basis_falls_back_to_gaussian_rows(caplog):
    with caplog.at_level(logging.WARNING, logger="gazetat.reinit"):
        basis = orthogonal_basis(np.ones((10, 2)), 3, np.random.default_rng(0))
    assert basis.shape == (3, 2)
    np.testing.assert_allclose(np.linalg.norm(basis, axis=1), 1.0)
    assert "exceed" in caplog.text
    assert orthogonal_basis(np.ones((4, 2)), 0, np.random.default_rng(0)).shape == (0, 2)


def test_adjusted_norms_fold_in_batchnorm():
    w = np.stack([np.full((2, 2), 1.0), np.full((2, 2), 2.0)])
    norms = bn_adjusted_norms(w, np.array([-2.0, 0.5]), np.array([4.0, 1.0]), [0, 1], eps=0.0)
    np.testing.assert_allclose(norms, [2.0 * 2.0 / 2.0, 4.0 * 0.5])


def test_non_positive_variance_is_rejected():
    with pytest.raises(ReinitError, match=r"\[1\]"):
        bn_adjusted_norms(np.ones((2, 3)), np.ones(2), np.array([1.0, 0.0]), [0, 1])


def test_aligned_reinit_is_orthogonal_and_in_range(trained_looking, selection):
    model = trained_looking
    units = model.conv_units()
    before = {name: unit.conv.weight.data.copy() for name, unit in units.items()}
    rng = np.random.default_rng(3)
    plan = plan_reinit(model, selection, rng)
    assert [layer.layer_id for layer in plan.layers] == [0, 1, 4]
    assert plan.n_pruned == 6
    scalars = align_and_assign(model, plan, rng)

    for layer in plan.layers:
        unit = units[layer.name]
        new = unit.conv.weight.data[layer.pruned]
        if len(layer.pruned) > 1:
            assert np.abs(_cosines(new)).max() <= 1e-6
        lo, hi = layer.scalar_range
        norms = np.linalg.norm(new.reshape(len(new), -1), axis=1)
        assert np.all(norms >= lo - 1e-9) and np.all(norms <= hi + 1e-9)
        np.testing.assert_allclose(norms, scalars[layer.name])
        assert np.all(unit.bn.weight.data[layer.pruned] == 1.0)
        assert np.all(unit.bn.bias.data[layer.pruned] == 0.0)
        assert np.all(unit.bn.running_mean[layer.pruned] == 0.0)
        assert np.all(unit.bn.running_var[layer.pruned] == 1.0)
        kept = np.setdiff1d(np.arange(layer.n_filters), layer.pruned)
        np.testing.assert_array_equal(unit.conv.weight.data[kept], before[layer.name][kept])

    for layer_id, (name, unit) in enumerate(units.items()):
        if layer_id not in SELECTED:
            np.testing.assert_array_equal(unit.conv.weight.data, before[name])


def test_dead_pruned_filters_take_the_kept_filters_range(trained_looking, selection, caplog):
    units = list(trained_looking.conv_units().values())
    units[1].conv.weight.data[SELECTED[1]] = 0.0
    units[0].conv.weight.data[:] = 0.0
    rng = np.random.default_rng(6)
    with caplog.at_level(logging.WARNING, logger="gazetat.reinit"):
        plan = plan_reinit(trained_looking, selection, rng)
    assert "all 3 pruned filters are dead" in caplog.text
    assert "every filter is dead" in caplog.text

    dead_layer = plan.layers[1]
    kept = [i for i in range(dead_layer.n_filters) if i not in SELECTED[1]]
    bn = units[1].bn
    expected = bn_adjusted_norms(units[1].conv.weight.data, bn.weight.data, bn.running_var, kept, bn.eps)
    assert dead_layer.scalar_range == (pytest.approx(expected.min()), pytest.approx(expected.max()))
    assert plan.layers[0].scalar_range == (0.0, 0.0)
    assert plan.layers[2].fallback_norms is None

    align_and_assign(trained_looking, plan, rng)
    new = units[1].conv.weight.data[SELECTED[1]]
    norms = np.linalg.norm(new.reshape(len(new), -1), axis=1)
    assert np.all(norms >= expected.min() - 1e-9) and np.all(norms <= expected.max() + 1e-9)
    assert np.abs(_cosines(new)).max() <= 1e-6


def test_per_filter_scalars_stay_orthogonal(trained_looking, selection):
    rng = np.random.default_rng(4)
    plan = plan_reinit(trained_looking, selection, rng)
    align_and_assign(trained_looking, plan, rng, per_filter=True)
    layer = plan.layers[1]
    new = trained_looking.conv_units()[layer.name].conv.weight.data[layer.pruned]
    norms = np.linalg.norm(new.reshape(len(new), -1), axis=1)
    lo, hi = layer.scalar_range
    assert np.all((norms >= lo - 1e-9) & (norms <= hi + 1e-9))
    assert np.abs(_cosines(new)).max() <= 1e-6


def test_orth_raw_uses_unit_rows(trained_looking, selection):
    rng = np.random.default_rng(0)
    plan = plan_reinit(trained_looking, selection, rng)
    variant_reinit(trained_looking, plan, "orth_raw", rng)
    layer = plan.layers[0]
    new = trained_looking.conv_units()[layer.name].conv.weight.data[layer.pruned]
    np.testing.assert_allclose(np.linalg.norm(new.reshape(len(new), -1), axis=1), 1.0)


def test_uniform_mode_respects_fan_in_bound(trained_looking, selection):
    rng = np.random.default_rng(0)
    plan = plan_reinit(trained_looking, selection, rng)
    assert reinit(trained_looking, plan, ReinitMode.UNIFORM, rng) == {}
    for layer in plan.layers:
        weight = trained_looking.conv_units()[layer.name].conv.weight
        assert np.abs(weight.data[layer.pruned]).max() <= fan_in_bound(weight.shape)


def test_scratch_mode_resets_everything(trained_looking):
    before = trained_looking.head.weight.data.copy()
    variant_reinit(trained_looking, None, "scratch", np.random.default_rng(9))
    assert not np.array_equal(before, trained_looking.head.weight.data)
    for unit in trained_looking.conv_units().values():
        assert np.all(unit.bn.running_var == 1.0)


def test_aligned_mode_is_not_a_variant(trained_looking, selection):
    plan = plan_reinit(trained_looking, selection, np.random.default_rng(0))
    with pytest.raises(ReinitError):
        variant_reinit(trained_looking, plan, "aoi", np.random.default_rng(0))


def test_report_rows(trained_looking, selection):
    rng = np.random.default_rng(1)
    plan = plan_reinit(trained_looking, selection, rng)
    scalars = reinit(trained_looking, plan, "aoi", rng)
    report = reinit_report(trained_looking, plan, scalars)
    assert report["n_pruned"].tolist() == [2, 3, 1]
    assert np.all(report["new_min"] >= report["adj_min"] - 1e-9)
    assert np.all(report["new_max"] <= report["adj_max"] + 1e-9)
