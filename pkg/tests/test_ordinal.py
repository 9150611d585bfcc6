import logging

import numpy as np
import pytest

from gazetat.errors import OrdinalError
from gazetat.ordinal import (
    GazeCodec,
    OrdinalConfig,
    bernoulli_entropy,
    bin_count,
    center_bin_mask,
    decode,
    encode,
    ordinal_loss,
)
from gazetat.tensor import Tensor, grad


@pytest.fixture
def cfg():
    return OrdinalConfig.from_range(10, 0.0, 11.0)


def test_bin_size_is_range_over_bins_plus_one(cfg):
    assert cfg.bin_size == pytest.approx(1.0)
    assert cfg.range_max == pytest.approx(11.0)


def test_encode_examples(cfg):
    assert encode(0.0, cfg).tolist() == [0.0] * 10
    assert encode(3.5, cfg).tolist() == [1.0] * 3 + [0.0] * 7
    assert encode(10.99, cfg).tolist() == [1.0] * 10


@pytest.mark.parametrize("bins,lo,hi", [(10, 0.0, 11.0), (72, 0.0, 10.0), (98, 0.0, 14.0), (7, -3.0, 5.0)])
def test_round_trip_stays_within_a_bin(bins, lo, hi):
    cfg = OrdinalConfig.from_range(bins, lo, hi)
    gt = np.arange(lo, hi, cfg.bin_size / 10)
    gt = gt[gt < cfg.range_max]
    err = np.abs(decode(encode(gt, cfg), cfg) - gt)
    assert err.max() <= cfg.bin_size


def test_labels_are_monotone_prefixes(cfg):
    rng = np.random.default_rng(0)
    labels = encode(rng.uniform(cfg.range_min, cfg.range_max, 10_000), cfg)
    assert np.all(np.diff(labels, axis=1) <= 0)
    np.testing.assert_array_equal(labels.sum(axis=1), bin_count(labels))


def test_out_of_range_values_are_clamped_with_a_warning(cfg, caplog):
    with caplog.at_level(logging.WARNING, logger="gazetat.ordinal"):
        labels = encode([-2.0, 50.0], cfg)
    assert labels[0].sum() == 0 and labels[1].sum() == cfg.bins
    assert "clamping 2" in caplog.text


def test_non_finite_ground_truth_is_rejected(cfg):
    with pytest.raises(OrdinalError):
        encode([1.0, np.nan], cfg)


def test_decode_thresholds_at_one_half(cfg):
    probs = np.array([0.9, 0.5, 0.49, 0.9] + [0.0] * 6)
    assert bin_count(probs) == 3
    assert decode(probs, cfg) == pytest.approx(3.5)


def test_loss_grows_with_bin_distance():
    cfg = OrdinalConfig.from_range(10, 0.0, 11.0)
    for true_count in range(cfg.bins + 1):
        target = encode(true_count + 0.5, cfg)
        losses = []
        for shift in range(cfg.bins + 1):
            pred = encode(shift + 0.5, cfg)
            losses.append((abs(shift - true_count), ordinal_loss(Tensor(pred), target).item()))
        losses.sort()
        for (d0, l0), (d1, l1) in zip(losses, losses[1:]):
            if d1 > d0:
                assert l1 > l0
            else:
                assert l1 == pytest.approx(l0)


def test_loss_averages_over_the_batch():
    probs = Tensor(np.array([[0.8, 0.3], [0.6, 0.1]]))
    target = np.array([[1.0, 0.0], [1.0, 1.0]])
    expected = -np.mean([np.log(0.8) + np.log(0.7), np.log(0.6) + np.log(0.1)])
    assert ordinal_loss(probs, target).item() == pytest.approx(expected)


def test_log_clip_bounds_the_loss_of_a_certain_mistake():
    wrong = Tensor(np.array([[0.0, 1.0]]))
    target = np.array([[1.0, 0.0]])
    assert ordinal_loss(wrong, target).item() == pytest.approx(-2 * np.log(1e-7))
    assert ordinal_loss(wrong, target, eps=1e-3).item() == pytest.approx(-2 * np.log(1e-3))
    floor = -2 * (1e-3 * np.log(1e-3) + 0.999 * np.log(0.999))
    assert bernoulli_entropy(np.array([0.0, 1.0]), eps=1e-3) == pytest.approx(floor)


def test_loss_against_soft_targets_is_bounded_by_their_entropy():
    rng = np.random.default_rng(0)
    soft = rng.uniform(0.05, 0.95, size=(1, 12))
    floor = bernoulli_entropy(soft).mean()
    assert ordinal_loss(Tensor(soft), soft).item() == pytest.approx(floor)
    assert ordinal_loss(Tensor(rng.uniform(0.05, 0.95, size=(1, 12))), soft).item() > floor


def test_loss_shape_mismatch():
    with pytest.raises(OrdinalError):
        ordinal_loss(Tensor(np.full((2, 3), 0.5)), np.zeros((2, 4)))


def test_masked_bins_get_no_gradient():
    rng = np.random.default_rng(0)
    probs = Tensor(rng.uniform(0.1, 0.9, size=(3, 8)), requires_grad=True)
    mask = np.zeros((3, 8), dtype=bool)
    mask[:, 2:6] = True
    (g,) = grad(ordinal_loss(probs, np.ones((3, 8)), mask), [probs])
    assert not g[~mask].any()
    assert np.all(g[mask] != 0)


def test_center_mask_window_and_edges():
    cfg = OrdinalConfig.from_range(10, 0.0, 11.0)
    probs = np.stack([encode(v, cfg) for v in (0.5, 5.5, 10.5)])
    mask = center_bin_mask(probs, cfg, 2)
    assert mask.sum(axis=1).tolist() == [4, 4, 4]
    assert np.flatnonzero(mask[0]).tolist() == [0, 1, 2, 3]
    assert np.flatnonzero(mask[1]).tolist() == [3, 4, 5, 6]
    assert np.flatnonzero(mask[2]).tolist() == [6, 7, 8, 9]


def test_center_mask_needs_positive_half_width(cfg):
    with pytest.raises(OrdinalError):
        center_bin_mask(np.zeros(10), cfg, 0)


def test_codec_splits_and_decodes_both_axes():
    codec = GazeCodec.for_screen(10.0, 14.0, 72, 98)
    gt = np.array([[0.3, 13.9], [9.8, 0.1], [5.0, 7.0]])
    labels = codec.encode(gt)
    assert labels.shape == (3, 170)
    err = np.abs(codec.decode(labels) - gt)
    assert np.all(err[:, 0] <= codec.x.bin_size) and np.all(err[:, 1] <= codec.y.bin_size)
    assert codec.center_mask(labels, None).all()
    assert codec.center_mask(labels, 4).sum(axis=1).tolist() == [16, 16, 16]
