import numpy as np
import pytest

from gazetat.nn import BatchNorm, ConvBNReLU, Linear, Parameter, Sequential, fan_in_bound
from gazetat.optim import SGD, epoch_lr
from gazetat.tensor import Tensor


def test_parameters_are_registered_in_order():
    rng = np.random.default_rng(0)
    net = Sequential(ConvBNReLU(3, 4, 3, 1, rng), Linear(4, 2, rng))
    names = [name for name, _ in net.named_parameters()]
    assert names == ["0.conv.weight", "0.bn.weight", "0.bn.bias", "1.weight", "1.bias"]
    assert [name for name, _ in net.named_buffers()] == ["0.bn.running_mean", "0.bn.running_var"]


def test_fan_in_uniform_respects_its_bound():
    rng = np.random.default_rng(0)
    layer = ConvBNReLU(3, 16, 3, 1, rng)
    bound = fan_in_bound(layer.conv.weight.shape)
    assert np.abs(layer.conv.weight.data).max() <= bound
    assert bound == pytest.approx(np.sqrt(2.0) * np.sqrt(3.0 / 27))


def test_batchnorm_running_stats_follow_momentum():
    bn = BatchNorm(2, momentum=0.9)
    x = np.array([[1.0, 10.0], [3.0, 14.0]])
    bn(Tensor(x))
    np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * x.var(axis=0, ddof=1))


def test_batchnorm_eval_uses_running_stats():
    bn = BatchNorm(2)
    bn.running_mean[:] = [1.0, -1.0]
    bn.running_var[:] = [4.0, 9.0]
    bn.eval()
    out = bn(Tensor(np.array([[3.0, 2.0]]))).data
    np.testing.assert_allclose(out, [[2.0 / np.sqrt(4.0 + 1e-5), 3.0 / np.sqrt(9.0 + 1e-5)]])
    assert bn.running_mean.tolist() == [1.0, -1.0]


def test_reset_channels_only_touches_those_channels():
    bn = BatchNorm(3)
    bn.weight.data[:] = 2.0
    bn.running_var[:] = 5.0
    bn.reset_channels([1])
    assert bn.weight.data.tolist() == [2.0, 1.0, 2.0]
    assert bn.running_var.tolist() == [5.0, 1.0, 5.0]


def test_snapshot_is_frozen_and_independent():
    rng = np.random.default_rng(0)
    layer = Linear(3, 2, rng)
    clone = layer.snapshot()
    assert clone.is_frozen() and not layer.is_frozen()
    assert not clone.training
    clone.weight.data += 1.0
    assert not np.allclose(clone.weight.data, layer.weight.data)


def test_state_dict_round_trip():
    rng = np.random.default_rng(0)
    a, b = ConvBNReLU(3, 4, 3, 1, rng), ConvBNReLU(3, 4, 3, 1, rng)
    a.bn.running_mean[:] = 0.5
    b.load_state_dict(a.state_dict())
    for (name, x), (_, y) in zip(a.state_dict().items(), b.state_dict().items()):
        np.testing.assert_array_equal(x, y, err_msg=name)
    with pytest.raises(KeyError):
        b.load_state_dict({"conv.weight": a.conv.weight.data})


def test_sgd_momentum_update():
    p = Parameter(np.array([1.0, 2.0]))
    opt = SGD([p], lr=0.1, momentum=0.5)
    p.grad = np.array([1.0, -1.0])
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, 2.1])
    p.grad = np.array([1.0, -1.0])
    opt.step()
    np.testing.assert_allclose(p.data, [0.9 - 0.15, 2.1 + 0.15])
    opt.zero_grad()
    assert p.grad is None


def test_sgd_weight_decay_and_missing_grads():
    p, q = Parameter(np.array([2.0])), Parameter(np.array([3.0]))
    opt = SGD([p, q], lr=0.5, momentum=0.0, weight_decay=0.1)
    p.grad = np.zeros(1)
    opt.step()
    np.testing.assert_allclose(p.data, [2.0 - 0.5 * 0.2])
    assert q.data.tolist() == [3.0]


def test_lr_drops_only_on_the_last_epoch_of_a_generation():
    rates = [epoch_lr(0.01, e, 4, 0.1) for e in range(4)]
    assert rates[:3] == [0.01, 0.01, 0.01]
    assert rates[3] == pytest.approx(0.001)
