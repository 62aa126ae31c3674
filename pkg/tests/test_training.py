import numpy as np
import pytest

from fastsn.data import generate_synthetic, split_dataset
from fastsn.nn import LossConfig, Regularizer, backward, build_cnn, forward
from fastsn.training import (TrainConfig, TrainMethod, accuracy, compare_methods, monitor_config,
                             train)


@pytest.fixture(scope="module")
def easy():
    return generate_synthetic(2, 30, 8, seed=1, contrast=0.9, noise=0.02)


@pytest.fixture(scope="module")
def toy():
    return generate_synthetic(3, 20, 8, seed=2)


def tiny_net(seed=0, classes=3):
    return build_cnn(8, (2, 3), classes, seed=seed)


def test_zero_epochs_returns_initial(toy):
    net = tiny_net()
    trained, records = train(net, toy, TrainConfig(epochs=0))
    assert records == []
    for a, b in zip(net.parameters(), trained.parameters()):
        assert np.array_equal(a, b)


def test_separable_set_is_learned(easy):
    trained, records = train(tiny_net(classes=2), easy,
                             TrainConfig(epochs=50, batch_size=8, learning_rate=0.1))
    assert records[-1].train_accuracy >= 0.99


def test_deterministic(toy):
    cfg = TrainConfig(epochs=3, batch_size=16, method=TrainMethod.FSN, seed=5)
    a = train(tiny_net(), toy, cfg)
    b = train(tiny_net(), toy, cfg)
    assert [r.comparable() for r in a[1]] == [r.comparable() for r in b[1]]
    for x, y in zip(a[0].parameters(), b[0].parameters()):
        assert np.array_equal(x, y)


@pytest.mark.parametrize("method", [TrainMethod.SN, TrainMethod.FSN])
def test_lambda_zero_matches_normal(toy, method):
    base = train(tiny_net(), toy, TrainConfig(epochs=3, batch_size=16, lam=0.0))[0]
    other = train(tiny_net(), toy, TrainConfig(epochs=3, batch_size=16, lam=0.0,
                                               method=method))[0]
    for x, y in zip(base.parameters(), other.parameters()):
        assert np.array_equal(x, y)


def test_sgd_step_is_plain(toy):
    net = tiny_net()
    train_set, _ = split_dataset(toy, 0.8, 0)
    cfg = TrainConfig(epochs=1, batch_size=len(train_set), learning_rate=0.2, lam=0.05,
                      method=TrainMethod.FSN)
    trained, _ = train(net, toy, cfg)
    order = np.random.default_rng(cfg.seed).permutation(len(train_set))
    _, cache = forward(net, train_set.images[order])
    grads = backward(cache, train_set.labels[order], cfg.loss_config())
    for p0, g, p1 in zip(net.parameters(), grads.params, trained.parameters()):
        assert np.array_equal(p1, p0 - 0.2 * g)


def test_records(toy):
    _, records = train(tiny_net(), toy, TrainConfig(epochs=2, method=TrainMethod.FSN))
    assert [r.epoch for r in records] == [0, 1]
    for r in records:
        assert r.wall_time_s > 0
        assert 0 <= r.train_accuracy <= 1 and 0 <= r.test_accuracy <= 1
        assert len(r.per_layer_sigma) == 3 and all(s > 0 for s in r.per_layer_sigma)
        assert r.per_layer_residual_fro[0] > 0 and r.per_layer_residual_fro[-1] == 0
        assert r.sum_sigma == pytest.approx(sum(r.per_layer_sigma))


def test_power_cap_is_recorded_not_raised(toy):
    cfg = TrainConfig(epochs=1, method=TrainMethod.SN, power_iters=1, tol=1e-12)
    _, records = train(tiny_net(), toy, cfg)
    assert sum(records[0].unconverged) > 0


def test_normal_is_monitored_with_fourier_norm():
    lc = monitor_config(TrainConfig(method=TrainMethod.NORMAL))
    assert lc.method is Regularizer.FFT and lc.lam == 0.0
    assert monitor_config(TrainConfig(method=TrainMethod.SN)).method is Regularizer.POWER


def test_explicit_test_set(toy):
    train_set, test_set = split_dataset(toy, 0.5, 3)
    trained, records = train(tiny_net(), train_set, TrainConfig(epochs=1), test=test_set)
    assert records[0].test_accuracy == accuracy(trained, test_set)


def test_resplit_changes_split(toy):
    fixed = train(tiny_net(), toy, TrainConfig(epochs=3))[1]
    moving = train(tiny_net(), toy, TrainConfig(epochs=3, resplit_every=1))[1]
    assert fixed[0].comparable() == moving[0].comparable()
    assert fixed[2].comparable() != moving[2].comparable()


def test_compare_methods(toy):
    cmp, nets = compare_methods(tiny_net(), toy, TrainConfig(epochs=2, batch_size=16))
    assert [r.method for r in cmp.rows] == list(TrainMethod)
    assert set(nets) == set(TrainMethod)
    sn = cmp.row(TrainMethod.SN).mean_time_s
    fsn = cmp.row(TrainMethod.FSN).mean_time_s
    assert cmp.fsn_speedup_pct == pytest.approx(100 * (sn - fsn) / sn)


@pytest.mark.parametrize("kwargs", [
    {"epochs": -1}, {"batch_size": 0}, {"learning_rate": 0.0}, {"lam": -1.0},
    {"power_iters": 0}, {"tol": 0.0}, {"train_fraction": 1.0}, {"method": "bogus"},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_loss_config_mapping():
    lc = TrainConfig(method="fsn", lam=0.3).loss_config()
    assert lc == LossConfig(lam=0.3, method=Regularizer.FSN, power_iters=20, tol=1e-6)


def test_empty_data_rejected(toy):
    with pytest.raises(ValueError):
        train(tiny_net(), toy.subset(np.array([], dtype=int)), TrainConfig(epochs=1))
