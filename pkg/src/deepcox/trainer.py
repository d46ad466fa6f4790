"""Full-batch training of Cox networks.

Risk-set coupling means the partial likelihood does not split into
independent per-sample terms, so every step uses the whole (sub)sample.
Several networks trained on equally sized samples can be advanced together
as one stack; each network keeps its own initialization and dropout stream,
so stacking does not change any individual result.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import _seeding
from .coxloss import risk_order, sorted_loss_and_score
from .errors import InvalidArgumentError, TrainingDivergedError
from .net import NetworkConfig, NetworkParams, init_network, stack_backward, stack_forward, stack_params, unstack_params

OPTIMIZERS = ("plain-gd", "adaptive-moments")
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 500
    weight_decay: float = 0.02
    dropout_rate: float = 0.1
    optimizer: str = "adaptive-moments"
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InvalidArgumentError(f"learning_rate must be nonnegative, got {self.learning_rate}")
        if isinstance(self.epochs, bool) or not isinstance(self.epochs, (int, np.integer)) or self.epochs < 1:
            raise InvalidArgumentError(f"epochs must be a positive integer, got {self.epochs!r}")
        if self.weight_decay < 0:
            raise InvalidArgumentError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidArgumentError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidArgumentError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.dtype not in ("float32", "float64"):
            raise InvalidArgumentError(f"dtype must be float32 or float64, got {self.dtype!r}")
        _seeding.check_seed(self.seed)

    def to_dict(self):
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "weight_decay": self.weight_decay,
            "dropout_rate": self.dropout_rate,
            "optimizer": self.optimizer,
            "seed": self.seed,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in cls().to_dict() if k in d}
        return cls(**known)


@dataclass(eq=False)
class TrainResult:
    params: NetworkParams
    loss_trace: np.ndarray


def effective_net_config(net_config: NetworkConfig, train_config: TrainConfig, seed=None):
    """Network config carrying the regularization actually used in training."""
    return replace(
        net_config,
        dropout_rate=train_config.dropout_rate,
        weight_decay=train_config.weight_decay,
        seed=net_config.seed if seed is None else seed,
    )


class _DropoutStream:
    """Per-network keep masks drawn from 32-bit uniforms."""

    def __init__(self, seed, rate):
        self.bits = np.random.PCG64(seed)
        self.threshold = np.uint32(min(round(rate * 2.0**32), 2**32 - 1))

    def draw(self, n_rows, hidden):
        total = n_rows * sum(hidden)
        raw = self.bits.random_raw((total + 1) // 2).view(np.uint32)[:total]
        keep = (raw >= self.threshold).reshape(n_rows, -1)
        out, c = [], 0
        for w in hidden:
            out.append(keep[:, c : c + w])
            c += w
        return out


def train_stack(datasets, net_config: NetworkConfig, train_config: TrainConfig, init_seeds, train_seeds):
    """Train one network per dataset; all datasets must have the same size.

    Network ``k`` is initialized from ``init_seeds[k]`` and draws dropout
    masks from ``train_seeds[k]``.  Returns a list of ``TrainResult``.
    """
    datasets = list(datasets)
    K = len(datasets)
    if K == 0:
        return []
    if len(init_seeds) != K or len(train_seeds) != K:
        raise InvalidArgumentError("one init seed and one train seed per dataset are required")
    n = datasets[0].n
    if any(ds.n != n for ds in datasets):
        raise InvalidArgumentError("stacked training needs datasets of equal size")
    p0 = net_config.p0
    for ds in datasets:
        if ds.p0 != p0:
            raise InvalidArgumentError(f"dataset has {ds.p0} covariates, network expects {p0}")
        ds.require_events()

    tc = train_config
    dtype = np.dtype(tc.dtype)
    configs = [effective_net_config(net_config, tc, s) for s in init_seeds]
    wt, v = stack_params([init_network(c) for c in configs], dtype)

    # inputs in descending-time order, plus the origin row for f(0)
    x = np.zeros((K, n + 1, p0), dtype=dtype)
    d = np.empty((K, n), dtype=dtype)
    gs = np.empty((K, n), dtype=np.intp)
    ge = np.empty((K, n), dtype=np.intp)
    for k, ds in enumerate(datasets):
        ro = risk_order(ds.time, ds.event)
        x[k, :n] = ds.covariates[ro.order]
        d[k] = ro.event_flags
        gs[k] = ro.group_start
        ge[k] = ro.group_end

    hidden = net_config.hidden_widths
    use_dropout = tc.dropout_rate > 0
    streams = [_DropoutStream(s, tc.dropout_rate) for s in train_seeds] if use_dropout else None
    scale = 1.0 / (1.0 - tc.dropout_rate)
    params = wt + v
    adam = tc.optimizer == "adaptive-moments"
    if adam:
        m1 = [np.zeros_like(p) for p in params]
        m2 = [np.zeros_like(p) for p in params]
    lr = dtype.type(tc.learning_rate)
    wd = dtype.type(tc.weight_decay)
    trace = np.empty((K, tc.epochs))

    # overflow is caught below as a non-finite loss
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(tc.epochs):
            keep = None
            if use_dropout:
                per_net = [s.draw(n + 1, hidden) for s in streams]
                keep = [np.stack([m[l] for m in per_net]) for l in range(len(hidden))]
            f, cache = stack_forward(wt, v, x, keep, scale)
            g = f[:, :n] - f[:, n:]
            loss, score = sorted_loss_and_score(g, d, gs, ge)
            if not np.all(np.isfinite(loss)):
                bad = int(np.flatnonzero(~np.isfinite(loss))[0])
                raise TrainingDivergedError(epoch + 1, bad)
            trace[:, epoch] = loss
            dout = np.concatenate([score, -score.sum(axis=1, keepdims=True)], axis=1)
            gw, gv = stack_backward(wt, cache, dout, scale if use_dropout else 1.0)
            if wd:
                gw = [a + wd * w for a, w in zip(gw, wt)]
            grads = gw + gv
            if adam:
                t = epoch + 1
                c1 = 1.0 - ADAM_BETA1**t
                c2 = 1.0 - ADAM_BETA2**t
                for p, gr, a, b in zip(params, grads, m1, m2):
                    a *= ADAM_BETA1
                    a += (1.0 - ADAM_BETA1) * gr
                    b *= ADAM_BETA2
                    b += (1.0 - ADAM_BETA2) * (gr * gr)
                    p -= lr * (a / c1) / (np.sqrt(b / c2) + ADAM_EPS)
            else:
                for p, gr in zip(params, grads):
                    p -= lr * gr

    out = unstack_params(wt, v, configs)
    return [TrainResult(p, trace[k].copy()) for k, p in enumerate(out)]


def train_traced(dataset, net_config: NetworkConfig, train_config: TrainConfig) -> TrainResult:
    """Train one network and keep its per-epoch loss trace."""
    return train_stack([dataset], net_config, train_config, [net_config.seed], [train_config.seed])[0]


def train(dataset, net_config: NetworkConfig, train_config: TrainConfig) -> NetworkParams:
    return train_traced(dataset, net_config, train_config).params


def training_budget_check(loss_trace, plateau_tol=0.05):
    """Practical check that a fixed epoch budget reached a plateau.

    True when the final loss is within 1e-6 of the best loss seen and the
    improvement over the last 10% of epochs is at most ``plateau_tol`` times
    the total improvement achieved by the run.
    """
    trace = np.asarray(loss_trace, dtype=np.float64)
    if trace.size == 0:
        raise InvalidArgumentError("loss trace is empty")
    best = trace.min()
    if trace[-1] > best + 1e-6:
        return False
    total = trace[0] - best
    if total <= 0:
        return True
    start = min(int(np.floor(0.9 * trace.size)), trace.size - 1)
    return bool(trace[start] - trace[-1] <= plateau_tol * total)


def write_loss_trace(trace, path):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for e, value in enumerate(np.asarray(trace), start=1):
            w.writerow([e, repr(float(value))])
    return path
