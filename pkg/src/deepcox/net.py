"""ReLU multilayer perceptron with the identifiability shift ``g(x) = f(x) - f(0)``.

Layer ``l`` maps ``h -> relu(W_l h - v_l)`` (the bias enters as a shift of
the activation), and the output layer is linear without a bias.  The core
routines operate on a *stack* of ``K`` networks with identical widths, with
weights stored transposed as ``(K, fan_in, fan_out)``; a single network is a
stack of one.  The trainer uses the same routines, so the gradient checks in
the test-suite cover the code path used for training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _seeding
from .errors import InvalidArgumentError

DEFAULT_WIDTHS = (10, 128, 64, 1)


@dataclass(frozen=True)
class NetworkConfig:
    widths: tuple = DEFAULT_WIDTHS
    dropout_rate: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 3:
            raise InvalidArgumentError("widths must contain input, at least one hidden layer, and output")
        if any(w <= 0 for w in widths):
            raise InvalidArgumentError(f"all widths must be positive, got {widths}")
        if widths[-1] != 1:
            raise InvalidArgumentError(f"output width must be 1, got {widths[-1]}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidArgumentError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.weight_decay < 0:
            raise InvalidArgumentError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        _seeding.check_seed(self.seed)

    @property
    def p0(self):
        return self.widths[0]

    @property
    def hidden_widths(self):
        return self.widths[1:-1]

    def to_dict(self):
        return {
            "widths": list(self.widths),
            "dropout_rate": self.dropout_rate,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["widths"]), d.get("dropout_rate", 0.0), d.get("weight_decay", 0.0), d.get("seed", 0))


@dataclass(eq=False)
class NetworkParams:
    """Weights ``W_l`` of shape ``(p_{l+1}, p_l)`` and hidden shifts ``v_l``."""

    weights: list
    biases: list
    config: NetworkConfig

    def __post_init__(self):
        w = self.config.widths
        if len(self.weights) != len(w) - 1 or len(self.biases) != len(w) - 2:
            raise InvalidArgumentError("number of weight/bias arrays does not match the config")
        for l, W in enumerate(self.weights):
            if W.shape != (w[l + 1], w[l]):
                raise InvalidArgumentError(f"W_{l} has shape {W.shape}, expected {(w[l + 1], w[l])}")
        for l, v in enumerate(self.biases):
            if v.shape != (w[l + 1],):
                raise InvalidArgumentError(f"v_{l + 1} has shape {v.shape}, expected {(w[l + 1],)}")

    def copy(self):
        return NetworkParams([W.copy() for W in self.weights], [v.copy() for v in self.biases], self.config)

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in (*self.weights, *self.biases))


@dataclass(eq=False)
class Gradients:
    weights: list
    biases: list = field(default_factory=list)

    def __add__(self, other):
        return Gradients(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )


def init_network(config: NetworkConfig) -> NetworkParams:
    """He initialization: ``W ~ N(0, 2 / fan_in)``, zero shifts."""
    rng = np.random.default_rng(config.seed)
    w = config.widths
    weights = [rng.normal(0.0, np.sqrt(2.0 / w[l]), size=(w[l + 1], w[l])) for l in range(len(w) - 1)]
    biases = [np.zeros(w[l + 1]) for l in range(len(w) - 2)]
    return NetworkParams(weights, biases, config)


# -- stacked core -------------------------------------------------------------


def stack_params(params_list, dtype=np.float64):
    """Pack networks of identical widths into transposed weight stacks."""
    wt = [np.stack([p.weights[l].T for p in params_list]).astype(dtype) for l in range(len(params_list[0].weights))]
    v = [np.stack([p.biases[l] for p in params_list]).astype(dtype) for l in range(len(params_list[0].biases))]
    return wt, v


def unstack_params(wt, v, configs):
    out = []
    for k, cfg in enumerate(configs):
        out.append(
            NetworkParams(
                [np.array(w[k].T, dtype=np.float64) for w in wt],
                [np.array(b[k], dtype=np.float64) for b in v],
                cfg,
            )
        )
    return out


def stack_forward(wt, v, x, keep=None, scale=1.0):
    """Raw outputs ``f`` of a stack of networks.

    Parameters
    ----------
    wt, v : lists of arrays
        Transposed weights ``(K, fan_in, fan_out)`` and shifts ``(K, width)``.
    x : ndarray, shape (K, N, p0) or (N, p0)
        Inputs; a 2-D array is shared by every network.
    keep : list of bool arrays, optional
        Per hidden layer keep masks of shape ``(K, N, width)``.
    scale : float
        Inverted-dropout factor ``1 / (1 - rate)`` applied to kept units.

    Returns
    -------
    out : ndarray, shape (K, N)
    cache : list
        ``(input, gate)`` per layer for ``stack_backward``; the gate is the
        boolean "active and kept" indicator.
    """
    a = x
    cache = []
    for l in range(len(v)):
        z = a @ wt[l]
        z -= v[l][:, None, :]
        gate = z > 0
        if keep is not None:
            gate &= keep[l]
        cache.append((a, gate))
        np.multiply(z, gate, out=z)
        if keep is not None and scale != 1.0:
            z *= z.dtype.type(scale)
        a = z
    cache.append((a, None))
    out = (a @ wt[-1])[..., 0]
    return out, cache


def stack_backward(wt, cache, dout, scale=1.0):
    """Back-propagate ``dout = dLoss/df`` of shape ``(K, N)`` through the stack.

    ``scale`` must match the forward pass when masks were used.  The ReLU
    derivative at exactly 0 is taken as 0.
    """
    n_layers = len(wt)
    gw = [None] * n_layers
    gv = [None] * (n_layers - 1)
    delta = dout[..., None]
    for l in range(n_layers - 1, -1, -1):
        a, _ = cache[l]
        gw[l] = np.swapaxes(a, -1, -2) @ delta
        if l > 0:
            delta = delta @ np.swapaxes(wt[l], -1, -2)
            np.multiply(delta, cache[l - 1][1], out=delta)
            if scale != 1.0:
                delta *= delta.dtype.type(scale)
            # z = a W - v
            gv[l - 1] = -delta.sum(axis=-2)
    return gw, gv


# -- single-network API -------------------------------------------------------


def _as_batch(params, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x.reshape(1, -1) if single else x
    if xb.ndim != 2 or xb.shape[1] != params.config.p0:
        raise InvalidArgumentError(f"x must have length {params.config.p0}, got shape {x.shape}")
    return xb, single


def _mask_stack(params, dropout_mask, n_rows):
    if dropout_mask is None:
        return None
    hidden = params.config.hidden_widths
    if len(dropout_mask) != len(hidden):
        raise InvalidArgumentError(f"expected {len(hidden)} dropout masks, got {len(dropout_mask)}")
    out = []
    for m, w in zip(dropout_mask, hidden):
        m = np.asarray(m, dtype=bool)
        if m.shape == (w,):
            m = np.broadcast_to(m, (n_rows, w))
        if m.shape != (n_rows, w):
            raise InvalidArgumentError(f"dropout mask shape {m.shape} does not match width {w}")
        out.append(m[None])
    return out


def _scale(params):
    return 1.0 / (1.0 - params.config.dropout_rate)


def forward_raw(params: NetworkParams, x, dropout_mask=None):
    """Raw network output ``f(x)`` for one point or an ``(N, p0)`` batch.

    With a mask, dropped hidden units output 0 and kept units are scaled by
    ``1 / (1 - dropout_rate)``.
    """
    xb, single = _as_batch(params, x)
    wt, v = stack_params([params])
    out, _ = stack_forward(wt, v, xb[None], _mask_stack(params, dropout_mask, xb.shape[0]), _scale(params))
    out = out[0]
    return float(out[0]) if single else out


def predict_g(params: NetworkParams, x):
    """Identified log-risk ``g(x) = f(x) - f(0)`` without dropout."""
    xb, single = _as_batch(params, x)
    wt, v = stack_params([params])
    g = stack_predict_g(wt, v, xb)[0]
    return float(g[0]) if single else g


def stack_predict_g(wt, v, x):
    """``g`` for every network of a stack at the shared points ``x`` (N, p0)."""
    x = np.asarray(x, dtype=wt[0].dtype)
    xz = np.concatenate([x, np.zeros((1, x.shape[1]), dtype=x.dtype)])
    f, _ = stack_forward(wt, v, xz)
    g = f[:, :-1] - f[:, -1:]
    # g(0) = 0 by construction; pin it so rounding inside a batched product cannot leak
    g[:, ~np.any(x != 0, axis=1)] = 0.0
    return g


def backward(params: NetworkParams, inputs, score_grads, dropout_masks=None, origin_mask=None) -> Gradients:
    """Parameter gradient of ``sum_i score_grads[i] * g(x_i)``.

    ``dropout_masks`` are per hidden layer ``(N, width)`` keep masks for the
    inputs and ``origin_mask`` the per-layer ``(width,)`` masks used for the
    ``f(0)`` pass, matching a training forward pass.
    """
    xb, _ = _as_batch(params, inputs)
    s = np.asarray(score_grads, dtype=np.float64).reshape(-1)
    if s.size != xb.shape[0]:
        raise InvalidArgumentError(f"{xb.shape[0]} inputs but {s.size} score gradients")
    if (dropout_masks is None) != (origin_mask is None):
        raise InvalidArgumentError("dropout_masks and origin_mask must be given together")
    n = xb.shape[0]
    xz = np.concatenate([xb, np.zeros((1, xb.shape[1]))])
    keep = None
    if dropout_masks is not None:
        mx = _mask_stack(params, dropout_masks, n)
        m0 = _mask_stack(params, origin_mask, 1)
        keep = [np.concatenate([a, b], axis=1) for a, b in zip(mx, m0)]
    wt, v = stack_params([params])
    _, cache = stack_forward(wt, v, xz[None], keep, _scale(params))
    dout = np.concatenate([s, [-s.sum()]])[None]
    gw, gv = stack_backward(wt, cache, dout, _scale(params) if keep is not None else 1.0)
    return Gradients([g[0].T.copy() for g in gw], [g[0].copy() for g in gv])


# -- serialization ------------------------------------------------------------


def params_to_dict(params: NetworkParams):
    return {
        "config": params.config.to_dict(),
        "weights": [W.tolist() for W in params.weights],
        "biases": [v.tolist() for v in params.biases],
    }


def params_from_dict(d) -> NetworkParams:
    config = NetworkConfig.from_dict(d["config"])
    weights = [np.array(W, dtype=np.float64).reshape(config.widths[l + 1], config.widths[l]) for l, W in enumerate(d["weights"])]
    biases = [np.array(v, dtype=np.float64) for v in d["biases"]]
    return NetworkParams(weights, biases, config)


def save_params(params: NetworkParams, path):
    # repr-based float formatting round-trips float64 exactly
    Path(path).write_text(json.dumps(params_to_dict(params)), encoding="utf-8")


def load_params(path) -> NetworkParams:
    return params_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
