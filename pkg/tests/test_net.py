from __future__ import annotations

import numpy as np
import pytest

from deepcox.coxloss import neg_log_partial_likelihood, partial_likelihood_score
from deepcox.errors import InvalidArgumentError
from deepcox.net import (
    NetworkConfig,
    NetworkParams,
    backward,
    forward_raw,
    init_network,
    load_params,
    predict_g,
    save_params,
)


def manual_forward(params, x, masks=None, rate=0.0):
    """Plain per-point forward pass written from the layer definition."""
    h = np.asarray(x, dtype=float)
    pre = []
    for l, (W, v) in enumerate(zip(params.weights[:-1], params.biases)):
        z = W @ h - v
        pre.append(z)
        h = np.maximum(z, 0.0)
        if masks is not None:
            h = h * masks[l] / (1.0 - rate)
    return float((params.weights[-1] @ h)[0]), pre


def random_params(rng, widths, scale=1.0):
    cfg = NetworkConfig(widths, seed=int(rng.integers(2**31)))
    p = init_network(cfg)
    biases = [rng.normal(scale=0.3, size=v.shape) for v in p.biases]
    weights = [W * scale for W in p.weights]
    return NetworkParams(weights, biases, cfg)


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        NetworkConfig((3, 1))
    with pytest.raises(InvalidArgumentError):
        NetworkConfig((3, 4, 2))
    with pytest.raises(InvalidArgumentError):
        NetworkConfig((3, 0, 1))
    with pytest.raises(InvalidArgumentError):
        NetworkConfig((3, 4, 1), dropout_rate=1.0)


def test_init_is_deterministic_he_scaled():
    cfg = NetworkConfig((100, 100, 1), seed=9)
    a, b = init_network(cfg), init_network(cfg)
    for Wa, Wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(Wa, Wb)
    assert all(np.all(v == 0) for v in a.biases)
    var = a.weights[0].var()
    assert abs(var - 2.0 / 100) < 0.1 * 2.0 / 100


def test_tiny_relu_network():
    cfg = NetworkConfig((1, 1, 1))
    p = NetworkParams([np.array([[1.0]]), np.array([[1.0]])], [np.array([0.0])], cfg)
    assert forward_raw(p, [-2.0]) == 0.0
    assert forward_raw(p, [3.0]) == 3.0
    zero = NetworkParams([np.zeros((1, 1)), np.zeros((1, 1))], [np.zeros(1)], cfg)
    assert forward_raw(zero, [5.0]) == 0.0
    assert predict_g(zero, [5.0]) == 0.0


def test_forward_matches_manual_and_identifiability():
    rng = np.random.default_rng(1)
    for _ in range(20):
        p = random_params(rng, (5, 7, 4, 1))
        X = rng.normal(size=(6, 5))
        f = forward_raw(p, X)
        for k in range(6):
            assert f[k] == pytest.approx(manual_forward(p, X[k])[0], abs=1e-12)
        g = predict_g(p, X)
        np.testing.assert_allclose(g, f - forward_raw(p, np.zeros(5)), atol=1e-13)
        assert predict_g(p, np.zeros(5)) == 0.0
        gz = predict_g(p, np.vstack([X, np.zeros(5)]))
        assert gz[-1] == 0.0


def test_dropout_mask_semantics():
    rng = np.random.default_rng(2)
    cfg = NetworkConfig((4, 6, 5, 1), dropout_rate=0.25, seed=3)
    p = NetworkParams(init_network(cfg).weights, [rng.normal(size=6), rng.normal(size=5)], cfg)
    x = rng.normal(size=4)
    masks = [rng.random(6) > 0.25, rng.random(5) > 0.25]
    assert forward_raw(p, x, masks) == pytest.approx(manual_forward(p, x, masks, 0.25)[0], abs=1e-12)
    # with rate 0 an all-ones mask is bitwise the unmasked pass
    p0 = NetworkParams(p.weights, p.biases, NetworkConfig((4, 6, 5, 1)))
    ones = [np.ones(6, bool), np.ones(5, bool)]
    X = rng.normal(size=(10, 4))
    np.testing.assert_array_equal(forward_raw(p0, X, ones), forward_raw(p0, X))
    with pytest.raises(InvalidArgumentError):
        forward_raw(p, x, [np.ones(6, bool)])
    with pytest.raises(InvalidArgumentError):
        forward_raw(p, np.zeros(3))


def _flat(params):
    return [*params.weights, *params.biases]


def _composite_loss(params, X, t, d):
    return neg_log_partial_likelihood(predict_g(params, X), t, d)


def away_from_kinks(rng, p, X):
    for _ in range(100):
        pre = [z for x in X for z in manual_forward(p, x)[1]]
        if min(np.min(np.abs(z)) for z in pre) >= 1e-4:
            return X
        X = X + rng.normal(scale=1e-3, size=X.shape)
    raise AssertionError("could not move inputs away from ReLU kinks")


def check_gradient(p, X, t, d, h=1e-6):
    s = partial_likelihood_score(predict_g(p, X), t, d)
    grads = backward(p, X, s)
    analytic = [*grads.weights, *grads.biases]
    worst = 0.0
    for arr, ga in zip(_flat(p), analytic):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = _composite_loss(p, X, t, d)
            arr[idx] = old - h
            down = _composite_loss(p, X, t, d)
            arr[idx] = old
            fd = (up - down) / (2 * h)
            err = abs(fd - ga[idx]) / max(abs(fd), abs(ga[idx]), 1e-4)
            worst = max(worst, err)
    return worst


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = int(rng.integers(2, 31))
        widths = (int(rng.integers(1, 9)), int(rng.integers(1, 9)), int(rng.integers(1, 9)), 1)
        p = random_params(rng, widths)
        X = away_from_kinks(rng, p, rng.normal(size=(n, widths[0])))
        t = rng.exponential(size=n)
        d = rng.random(n) < 0.7
        d[0] = True
        assert check_gradient(p, X, t, d) < 1e-5


def test_backward_linearity_and_zero():
    rng = np.random.default_rng(5)
    p = random_params(rng, (3, 5, 1))
    X = rng.normal(size=(4, 3))
    s = rng.normal(size=4)
    zero = backward(p, X, np.zeros(4))
    assert all(np.all(w == 0) for w in zero.weights + zero.biases)
    total = backward(p, X, s)
    parts = backward(p, X[:2], s[:2]) + backward(p, X[2:], s[2:])
    for a, b in zip(total.weights + total.biases, parts.weights + parts.biases):
        np.testing.assert_allclose(a, b, atol=1e-13)
    with pytest.raises(InvalidArgumentError):
        backward(p, X, s[:3])


def test_backward_with_dropout_masks_matches_fd():
    rng = np.random.default_rng(6)
    cfg = NetworkConfig((3, 6, 4, 1), dropout_rate=0.3, seed=1)
    p = NetworkParams(init_network(cfg).weights, [rng.normal(scale=0.2, size=6), rng.normal(scale=0.2, size=4)], cfg)
    X = rng.normal(size=(5, 3))
    masks = [rng.random((5, 6)) > 0.3, rng.random((5, 4)) > 0.3]
    origin = [rng.random(6) > 0.3, rng.random(4) > 0.3]
    s = rng.normal(size=5)

    def objective():
        g = forward_raw(p, X, masks) - forward_raw(p, np.zeros(3), origin)
        return float(s @ g)

    grads = backward(p, X, s, masks, origin)
    h = 1e-6
    for arr, ga in zip(_flat(p), [*grads.weights, *grads.biases]):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = objective()
            arr[idx] = old - h
            down = objective()
            arr[idx] = old
            assert abs((up - down) / (2 * h) - ga[idx]) <= 1e-5 * max(1.0, abs(ga[idx]))


def test_params_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    p = random_params(rng, (4, 8, 3, 1))
    save_params(p, tmp_path / "p.json")
    q = load_params(tmp_path / "p.json")
    for a, b in zip(_flat(p), _flat(q)):
        np.testing.assert_array_equal(a, b)
    assert q.config == p.config
