"""Subsample ensembles: inclusion bookkeeping, training, prediction, contrasts."""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _seeding
from .errors import DegenerateDataError, InvalidArgumentError, ParseError
from .net import NetworkConfig, load_params, save_params, stack_params, stack_predict_g
from .trainer import TrainConfig, effective_net_config, train_stack

MAX_REDRAWS = 100
DEFAULT_B = 1000


@dataclass(frozen=True, eq=False)
class InclusionMatrix:
    """``B x n`` 0/1 matrix; ``entries[b, i] = 1`` iff observation ``i`` is in subsample ``b``."""

    entries: np.ndarray
    r: int
    seed: int = 0

    def __post_init__(self):
        e = np.array(self.entries, dtype=np.uint8)
        if e.ndim != 2:
            raise InvalidArgumentError("inclusion matrix must be 2-D")
        if np.any(e > 1):
            raise InvalidArgumentError("inclusion entries must be 0/1")
        if np.any(e.sum(axis=1) != self.r):
            raise InvalidArgumentError(f"every inclusion row must sum to r={self.r}")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def B(self):
        return self.entries.shape[0]

    @property
    def n(self):
        return self.entries.shape[1]

    def rows(self):
        """Sorted observation indices of each subsample."""
        return [np.flatnonzero(row) for row in self.entries]


def subsample_size(n, alpha):
    """``r = floor(n ** alpha)``, guarded against floating error at integer powers."""
    r = math.floor(n**alpha + 1e-9)
    return max(1, min(n, r))


def draw_subsamples(n, r, B, seed, events=None) -> InclusionMatrix:
    """Draw ``B`` independent size-``r`` subsets of ``{0, ..., n-1}`` without replacement.

    Row ``b`` comes from its own derived stream.  When ``events`` is given,
    a row whose subset holds no event is redrawn from the same stream, up to
    ``MAX_REDRAWS`` times.
    """
    for name, value in (("n", n), ("r", r), ("B", B)):
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            raise InvalidArgumentError(f"{name} must be an integer, got {value!r}")
    if r < 1 or r > n:
        raise InvalidArgumentError(f"subsample size must satisfy 1 <= r <= n, got r={r}, n={n}")
    if B < 1:
        raise InvalidArgumentError(f"B must be positive, got {B}")
    if events is not None:
        events = np.asarray(events, dtype=bool)
        if events.size != n:
            raise InvalidArgumentError("events must have length n")
        if not events.any():
            raise DegenerateDataError("dataset has no events; every subsample would be all-censored")
    J = np.zeros((B, n), dtype=np.uint8)
    for b in range(B):
        rng = _seeding.derive_rng(seed, _seeding.SUBSAMPLE, b)
        idx = rng.choice(n, r, replace=False)
        if events is not None:
            tries = 0
            while not events[idx].any():
                tries += 1
                if tries >= MAX_REDRAWS:
                    raise DegenerateDataError(
                        f"subsample {b}: {MAX_REDRAWS} consecutive draws contained no event"
                    )
                idx = rng.choice(n, r, replace=False)
        J[b, idx] = 1
    return InclusionMatrix(J, r, seed)


@dataclass(eq=False)
class EnsembleModel:
    base_params: list
    inclusion: InclusionMatrix
    net_config: NetworkConfig
    train_config: TrainConfig
    seed: int = 0
    alpha: float | None = None
    _stack: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.base_params) != self.inclusion.B:
            raise InvalidArgumentError(
                f"{len(self.base_params)} base learners but {self.inclusion.B} inclusion rows"
            )

    @property
    def n(self):
        return self.inclusion.n

    @property
    def r(self):
        return self.inclusion.r

    @property
    def B(self):
        return self.inclusion.B

    @property
    def p0(self):
        return self.net_config.p0

    def base_predictions(self, x):
        """``g^b(x)`` for every base learner: shape ``(B,)`` for one point, ``(B, m)`` for ``m`` points."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = x.reshape(1, -1) if single else x
        if xb.ndim != 2 or xb.shape[1] != self.p0:
            raise InvalidArgumentError(f"x must have length {self.p0}, got shape {x.shape}")
        if self._stack is None:
            self._stack = stack_params(self.base_params)
        g = stack_predict_g(*self._stack, xb)
        return g[:, 0] if single else g


def _chunks(seq, size):
    return [seq[i : i + size] for i in range(0, len(seq), size)]


def fit_ensemble(dataset, net_config: NetworkConfig, train_config: TrainConfig, r, B=DEFAULT_B, seed=0,
                 threads=1, chunk_size=200, alpha=None) -> EnsembleModel:
    """Train ``B`` base learners on random size-``r`` subsamples of ``dataset``.

    Learner ``b`` uses seeds derived from ``(seed, b)`` only, so the model
    does not depend on ``threads`` or ``chunk_size``.
    """
    dataset.require_events()
    if dataset.p0 != net_config.p0:
        raise InvalidArgumentError(f"dataset has {dataset.p0} covariates, network expects {net_config.p0}")
    if B < dataset.n:
        warnings.warn(
            f"B={B} is below n={dataset.n}; the variance estimator assumes B of order n or larger",
            stacklevel=2,
        )
    inclusion = draw_subsamples(dataset.n, r, B, seed, events=dataset.event)
    rows = inclusion.rows()
    init_seeds = [_seeding.derive_seed(seed, _seeding.INIT, b) for b in range(B)]
    train_seeds = [_seeding.derive_seed(seed, _seeding.DROPOUT, b) for b in range(B)]

    def work(block):
        return train_stack(
            [dataset.subset(rows[b]) for b in block],
            net_config,
            train_config,
            [init_seeds[b] for b in block],
            [train_seeds[b] for b in block],
        )

    blocks = _chunks(list(range(B)), max(1, chunk_size))
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(block) for block in blocks]
    params = [res.params for block in results for res in block]
    return EnsembleModel(
        params, inclusion, effective_net_config(net_config, train_config), train_config, seed, alpha
    )


def ensemble_predict(model: EnsembleModel, x):
    """Ensemble average ``B^-1 sum_b g^b(x)``."""
    return model.base_predictions(x).mean(axis=0)


def contrast_estimate(model: EnsembleModel, x1, x2):
    """Estimated log-hazard ratio between covariate profiles ``x1`` and ``x2``."""
    return ensemble_predict(model, x1) - ensemble_predict(model, x2)


# -- model directory ----------------------------------------------------------


def save_model(model: EnsembleModel, directory):
    """Write ``metadata.json``, ``inclusion.csv`` and one ``base_XXXXX.json`` per learner."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "n": model.n,
        "r": model.r,
        "B": model.B,
        "alpha": model.alpha,
        "seed": model.seed,
        "inclusion_seed": model.inclusion.seed,
        "net_config": model.net_config.to_dict(),
        "train_config": model.train_config.to_dict(),
        "base_seeds": [p.config.seed for p in model.base_params],
    }
    (d / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    with (d / "inclusion.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in model.inclusion.entries:
            w.writerow(row.tolist())
    for b, p in enumerate(model.base_params):
        save_params(p, d / f"base_{b:05d}.json")
    return d


def load_model(directory) -> EnsembleModel:
    d = Path(directory)
    meta_path = d / "metadata.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"model metadata not found: {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    with (d / "inclusion.csv").open(newline="", encoding="utf-8") as fh:
        try:
            J = np.array([[int(c) for c in row] for row in csv.reader(fh) if row], dtype=np.uint8)
        except ValueError as exc:
            raise ParseError(f"{d / 'inclusion.csv'}: {exc}") from None
    inclusion = InclusionMatrix(J, meta["r"], meta.get("inclusion_seed", meta["seed"]))
    params = [load_params(d / f"base_{b:05d}.json") for b in range(meta["B"])]
    return EnsembleModel(
        params,
        inclusion,
        NetworkConfig.from_dict(meta["net_config"]),
        TrainConfig.from_dict(meta["train_config"]),
        meta["seed"],
        meta.get("alpha"),
    )
