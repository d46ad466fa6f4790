from __future__ import annotations

import numpy as np
import pytest

from deepcox.coxloss import partial_likelihood_score
from deepcox.data import SimulationSpec, draw_covariates, generate_case, true_risk
from deepcox.errors import InvalidArgumentError, TrainingDivergedError
from deepcox.net import NetworkConfig, backward, init_network, predict_g
from deepcox.trainer import TrainConfig, train, train_stack, train_traced, training_budget_check, write_loss_trace


@pytest.fixture(scope="module")
def small_data():
    ds = generate_case(SimulationSpec(1, 50, seed=21))
    return ds


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        TrainConfig(epochs=0)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(optimizer="sgd-momentum")
    assert TrainConfig.from_dict(TrainConfig(epochs=3).to_dict()) == TrainConfig(epochs=3)


def test_zero_learning_rate_keeps_init(small_data):
    net = NetworkConfig((10, 8, 1), seed=4)
    for opt in ("plain-gd", "adaptive-moments"):
        p = train(small_data, net, TrainConfig(learning_rate=0.0, epochs=3, optimizer=opt))
        q = init_network(net)
        for a, b in zip(p.weights + p.biases, q.weights + q.biases):
            np.testing.assert_array_equal(a, b)


def test_single_gd_step_is_gradient_plus_decay(small_data):
    net = NetworkConfig((10, 8, 4, 1), seed=5)
    lr, wd = 0.05, 0.3
    tc = TrainConfig(learning_rate=lr, epochs=1, weight_decay=wd, dropout_rate=0.0, optimizer="plain-gd")
    after = train(small_data, net, tc)
    before = init_network(net)
    X = small_data.covariates
    s = partial_likelihood_score(predict_g(before, X), small_data.time, small_data.event)
    grad = backward(before, X, s)
    for W0, W1, gW in zip(before.weights, after.weights, grad.weights):
        np.testing.assert_allclose(W1, W0 - lr * (gW + wd * W0), rtol=0, atol=1e-14)
    # shifts are not decayed
    for v0, v1, gv in zip(before.biases, after.biases, grad.biases):
        np.testing.assert_allclose(v1, v0 - lr * gv, rtol=0, atol=1e-14)


def test_loss_decreases_on_tiny_instance(small_data):
    res = train_traced(small_data, NetworkConfig((10, 8, 1), seed=1),
                       TrainConfig(learning_rate=0.01, epochs=500, dropout_rate=0.0))
    assert res.loss_trace.shape == (500,)
    assert res.loss_trace[-1] < res.loss_trace[0]


def test_determinism_and_stacking(small_data):
    ds = [small_data.subset(np.arange(i, i + 30)) for i in range(3)]
    net = NetworkConfig((10, 6, 5, 1))
    tc = TrainConfig(epochs=20, dropout_rate=0.2)
    stacked = train_stack(ds, net, tc, [11, 12, 13], [21, 22, 23])
    again = train_stack(ds, net, tc, [11, 12, 13], [21, 22, 23])
    for k in range(3):
        alone = train_stack([ds[k]], net, tc, [11 + k], [21 + k])[0]
        for a, b, c in zip(stacked[k].params.weights, again[k].params.weights, alone.params.weights):
            np.testing.assert_array_equal(a, b)
            np.testing.assert_array_equal(a, c)
        np.testing.assert_array_equal(stacked[k].loss_trace, alone.loss_trace)


def test_float32_training_is_close_to_float64(small_data):
    net = NetworkConfig((10, 8, 1), seed=2)
    a = train(small_data, net, TrainConfig(epochs=5, dropout_rate=0.0, dtype="float64"))
    b = train(small_data, net, TrainConfig(epochs=5, dropout_rate=0.0, dtype="float32"))
    X = small_data.covariates
    np.testing.assert_allclose(predict_g(a, X), predict_g(b, X), atol=1e-3)


def test_divergence_reports_epoch(small_data):
    net = NetworkConfig((10, 8, 1), seed=3)
    with pytest.raises(TrainingDivergedError) as info:
        train(small_data, net, TrainConfig(learning_rate=1e200, epochs=50, dropout_rate=0.0, optimizer="plain-gd"))
    assert 1 <= info.value.epoch <= 50


def test_case1_recovery_correlation():
    ds = generate_case(SimulationSpec(1, 2000, seed=8))
    params = train(ds, NetworkConfig(seed=8), TrainConfig(seed=8, dtype="float32"))
    grid = draw_covariates(500, 99)
    r = np.corrcoef(predict_g(params, grid), true_risk(1, grid))[0, 1]
    assert r >= 0.9


def test_budget_check_examples(tmp_path):
    assert training_budget_check(np.linspace(2.0, 1.0, 100) ** 3)
    trace = np.concatenate([np.linspace(2.0, 1.0, 90), np.full(10, 1.1)])
    assert not training_budget_check(trace)
    assert training_budget_check(np.ones(50))
    # still falling fast at the end
    assert not training_budget_check(np.linspace(2.0, 1.0, 100))
    with pytest.raises(InvalidArgumentError):
        training_budget_check([])
    path = write_loss_trace([3.0, 2.5], tmp_path / "trace.csv")
    assert path.read_text() == "epoch,loss\n1,3.0\n2,2.5\n"
