"""Monte Carlo simulation harness: coverage tables for pointwise values and contrasts.

A study is a grid of cells ``(case, n, alpha)``.  Within a replication the
same simulated dataset is shared by every ``alpha`` so that differences
between cells reflect the subsample size alone.  Each replication can be
cached to disk, which makes long studies resumable; the cache key covers
every setting that affects the replication.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _seeding
from .data import N_COVARIATES, SimulationSpec, generate_case, true_risk, truncated_normal
from .ensemble import fit_ensemble, subsample_size
from .errors import DeepCoxError, InvalidArgumentError
from .inference import clamp_variance, contrast_variance_from_parts, ij_covariance_from_predictions
from .metrics import MetricsRow, evaluate_pointwise
from .net import NetworkConfig
from .trainer import TrainConfig

log = logging.getLogger(__name__)

SIGNAL_RANGE = (-1.5, 2.0)
CONTRAST_GAP = 1.0


@dataclass(frozen=True)
class StudyConfig:
    cases: tuple = (1,)
    ns: tuple = (400,)
    alphas: tuple = (0.7, 0.9)
    B: int = 200
    R: int = 100
    m: int = 20
    n_pairs: int = 10
    gap_tol: float = 0.1
    level: float = 0.95
    censor_rate: float = 0.30
    seed: int = 0
    widths: tuple = (N_COVARIATES, 128, 64, 1)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(dtype="float32"))
    chunk_size: int = 200

    def __post_init__(self):
        for name in ("cases", "ns", "alphas", "widths"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if isinstance(self.train, dict):
            object.__setattr__(self, "train", TrainConfig.from_dict(self.train))
        if not self.cases or not self.ns or not self.alphas:
            raise InvalidArgumentError("cases, ns and alphas must be nonempty")
        if any(not 0 < a <= 1 for a in self.alphas):
            raise InvalidArgumentError(f"alphas must lie in (0, 1], got {self.alphas}")
        if self.B < 2 or self.R < 1 or self.m < 1 or self.n_pairs < 0:
            raise InvalidArgumentError("need B >= 2, R >= 1, m >= 1 and n_pairs >= 0")
        if not 0 < self.level < 1:
            raise InvalidArgumentError(f"level must lie in (0, 1), got {self.level}")
        _seeding.check_seed(self.seed)

    def to_dict(self):
        d = asdict(self)
        d["train"] = self.train.to_dict()
        for k in ("cases", "ns", "alphas", "widths"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise InvalidArgumentError(f"unknown study config keys: {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def replication_key(self, case_id, n):
        """Hash of every setting that determines one replication's results."""
        d = self.to_dict()
        for k in ("R", "level", "cases", "ns"):
            d.pop(k)
        d["cell"] = [case_id, n]
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TestSet:
    case_id: int
    points: np.ndarray
    truth: np.ndarray
    pairs: tuple

    @property
    def contrast_truth(self):
        return np.array([self.truth[i] - self.truth[j] for i, j in self.pairs])


def make_test_set(case_id, m, n_pairs, seed, gap_tol=0.1) -> TestSet:
    """Fixed evaluation points for a case plus contrast pairs.

    Pairs ``(i, j)``, ``i < j``, are scanned in lexicographic order and kept
    when both true values lie in ``SIGNAL_RANGE`` and the absolute true gap
    is within ``gap_tol`` of ``CONTRAST_GAP``.
    """
    rng = _seeding.derive_rng(seed, _seeding.TEST_SET, case_id)
    x = truncated_normal(rng, (m, N_COVARIATES))
    g = true_risk(case_id, x)
    lo, hi = SIGNAL_RANGE
    pairs = []
    for i in range(m):
        for j in range(i + 1, m):
            if len(pairs) >= n_pairs:
                break
            if lo <= g[i] <= hi and lo <= g[j] <= hi and abs(abs(g[i] - g[j]) - CONTRAST_GAP) <= gap_tol:
                pairs.append((i, j))
    if len(pairs) < n_pairs:
        log.warning("case %d: only %d of %d contrast pairs pass the signal filter", case_id, len(pairs), n_pairs)
    return TestSet(case_id, x, g, tuple(pairs))


def summarize_predictions(P, J, r, pairs):
    """Estimates, standard errors and clamp flags for points and contrasts from ``(B, m)`` predictions."""
    B, m = P.shape
    raw = np.array([ij_covariance_from_predictions(J, P[:, k], P[:, k], r) for k in range(m)])
    point = [clamp_variance(v) for v in raw]
    out = {
        "estimate": P.mean(axis=0),
        "se": np.sqrt([v for v, _ in point]),
        "clamped": np.array([c for _, c in point]),
    }
    c_est, c_se, c_cl = [], [], []
    for i, j in pairs:
        cov = ij_covariance_from_predictions(J, P[:, i], P[:, j], r)
        v, c = clamp_variance(contrast_variance_from_parts(raw[i], raw[j], cov))
        c_est.append(out["estimate"][i] - out["estimate"][j])
        c_se.append(np.sqrt(v))
        c_cl.append(c)
    out["contrast_estimate"] = np.array(c_est)
    out["contrast_se"] = np.array(c_se)
    out["contrast_clamped"] = np.array(c_cl, dtype=bool)
    return out


def run_replication(config: StudyConfig, case_id, n, rep, test: TestSet):
    """One dataset, one ensemble per alpha; returns ``{alpha: summary}`` (or an error string)."""
    data_seed = _seeding.derive_seed(config.seed, _seeding.DATA, case_id, n, rep)
    ds = generate_case(SimulationSpec(case_id, n, config.censor_rate, data_seed))
    net = NetworkConfig(config.widths)
    out = {}
    for a_idx, alpha in enumerate(config.alphas):
        r = subsample_size(n, alpha)
        ens_seed = _seeding.derive_seed(config.seed, _seeding.ENSEMBLE, case_id, n, rep, a_idx)
        try:
            with warnings.catch_warnings():
                # desk-scale grids use B < n on purpose
                warnings.simplefilter("ignore", UserWarning)
                model = fit_ensemble(ds, net, config.train, r, config.B, ens_seed, chunk_size=config.chunk_size)
            P = model.base_predictions(test.points)
            out[alpha] = summarize_predictions(P, model.inclusion.entries, r, test.pairs)
        except DeepCoxError as exc:
            out[alpha] = f"{type(exc).__name__}: {exc}"
    return out


def _save_rep(path, result):
    arrays, errors = {}, {}
    for a_idx, (alpha, res) in enumerate(result.items()):
        if isinstance(res, str):
            errors[str(a_idx)] = res
            continue
        for k, v in res.items():
            arrays[f"{a_idx}:{k}"] = v
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, errors=json.dumps(errors), **arrays)
    tmp.replace(path)


def _load_rep(path, alphas):
    with np.load(path) as f:
        errors = json.loads(str(f["errors"]))
        out = {}
        for a_idx, alpha in enumerate(alphas):
            if str(a_idx) in errors:
                out[alpha] = errors[str(a_idx)]
            else:
                prefix = f"{a_idx}:"
                out[alpha] = {k[len(prefix):]: f[k] for k in f.files if k.startswith(prefix)}
    return out


@dataclass
class CellResult:
    case_id: int
    n: int
    alpha: float
    r: int
    pointwise: MetricsRow | None
    contrast: MetricsRow | None
    failures: list
    per_point_empsd: np.ndarray | None = None
    per_point_se: np.ndarray | None = None

    @property
    def status(self):
        if not self.failures:
            return "ok"
        if self.pointwise is None:
            return "failed"
        return f"partial:{len(self.failures)}"


def _cell_rows(config, case_id, n, alpha, test, reps):
    r = subsample_size(n, alpha)
    good = [res[alpha] for res in reps if not isinstance(res[alpha], str)]
    failures = [(k, res[alpha]) for k, res in enumerate(reps) if isinstance(res[alpha], str)]
    label = f"case{case_id}_n{n}_a{alpha:g}"
    if not good:
        return CellResult(case_id, n, alpha, r, None, None, failures)
    est = np.array([g["estimate"] for g in good])
    se = np.array([g["se"] for g in good])
    point = evaluate_pointwise(est, se, test.truth, config.level, label,
                               np.array([g["clamped"] for g in good]), allow_single=True)
    contrast = None
    if test.pairs:
        contrast = evaluate_pointwise(
            np.array([g["contrast_estimate"] for g in good]),
            np.array([g["contrast_se"] for g in good]),
            test.contrast_truth, config.level, label,
            np.array([g["contrast_clamped"] for g in good]), allow_single=True,
        )
    empsd = est.std(axis=0, ddof=1) if len(good) >= 2 else None
    return CellResult(case_id, n, alpha, r, point, contrast, failures, empsd, se.mean(axis=0))


def run_monte_carlo(config: StudyConfig, out_dir=None, threads=1, cache_dir=None, progress=True):
    """Run the grid; returns a list of ``CellResult`` and writes tables when ``out_dir`` is set."""
    results = []
    raw = {}
    for case_id in config.cases:
        test = make_test_set(case_id, config.m, config.n_pairs, config.seed, config.gap_tol)
        for n in config.ns:
            key = config.replication_key(case_id, n)
            cdir = None
            if cache_dir is not None:
                cdir = Path(cache_dir) / f"case{case_id}_n{n}_{key}"
                cdir.mkdir(parents=True, exist_ok=True)
            t0 = time.monotonic()

            def one(rep, case_id=case_id, n=n, test=test, cdir=cdir, t0=t0):
                path = None if cdir is None else cdir / f"rep{rep:05d}.npz"
                if path is not None and path.exists():
                    return _load_rep(path, config.alphas)
                res = run_replication(config, case_id, n, rep, test)
                if path is not None:
                    _save_rep(path, res)
                if progress:
                    log.info("case %d n %d rep %d done (%.0fs elapsed)", case_id, n, rep + 1, time.monotonic() - t0)
                return res

            if threads > 1:
                with ThreadPoolExecutor(threads) as pool:
                    reps = list(pool.map(one, range(config.R)))
            else:
                reps = [one(rep) for rep in range(config.R)]
            raw[(case_id, n)] = (test, reps)
            for alpha in config.alphas:
                results.append(_cell_rows(config, case_id, n, alpha, test, reps))
    if out_dir is not None:
        write_study_outputs(config, results, raw, out_dir)
    return results


# -- outputs ------------------------------------------------------------------

_HEAD = ["case", "n", "alpha", "r", "B", "status"]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_metrics(path, config, results, attr):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_HEAD + list(MetricsRow.COLUMNS[1:]))
        for cell in results:
            row = getattr(cell, attr)
            head = [cell.case_id, cell.n, _fmt(cell.alpha), cell.r, config.B, cell.status]
            w.writerow(head + (row.csv_row()[1:] if row is not None else ["NA"] * (len(MetricsRow.COLUMNS) - 1)))


def write_study_outputs(config: StudyConfig, results, raw, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_metrics(out / "pointwise_metrics.csv", config, results, "pointwise")
    _write_metrics(out / "contrast_metrics.csv", config, results, "contrast")

    for (case_id, n), (test, reps) in raw.items():
        with (out / f"test_set_case{case_id}.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x_id", "g0"] + [f"x{k + 1}" for k in range(test.points.shape[1])])
            for k, (x, g) in enumerate(zip(test.points, test.truth)):
                w.writerow([k, _fmt(g)] + [_fmt(v) for v in x])
        for alpha in config.alphas:
            stem = f"case{case_id}_n{n}_a{alpha:g}"
            with (out / f"raw_pointwise_{stem}.csv").open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["rep", "x_id", "estimate", "se", "truth", "clamped"])
                for rep, res in enumerate(reps):
                    cell = res[alpha]
                    if isinstance(cell, str):
                        continue
                    for k in range(len(test.truth)):
                        w.writerow([rep, k, _fmt(cell["estimate"][k]), _fmt(cell["se"][k]),
                                    _fmt(test.truth[k]), _fmt(cell["clamped"][k])])
            with (out / f"raw_contrasts_{stem}.csv").open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["rep", "pair", "i", "j", "estimate", "se", "truth", "clamped"])
                truth = test.contrast_truth
                for rep, res in enumerate(reps):
                    cell = res[alpha]
                    if isinstance(cell, str):
                        continue
                    for k, (i, j) in enumerate(test.pairs):
                        w.writerow([rep, k, i, j, _fmt(cell["contrast_estimate"][k]), _fmt(cell["contrast_se"][k]),
                                    _fmt(truth[k]), _fmt(cell["contrast_clamped"][k])])

    # gnuplot-style "x y" data
    groups = {}
    for cell in results:
        groups.setdefault((cell.case_id, cell.n), []).append(cell)
    for (case_id, n), cells in groups.items():
        with (out / f"coverage_vs_alpha_case{case_id}_n{n}.dat").open("w", encoding="utf-8") as fh:
            fh.write("# alpha pointwise_cp contrast_cp\n")
            for c in sorted(cells, key=lambda c: c.alpha):
                if c.pointwise is None:
                    continue
                ccp = c.contrast.coverage if c.contrast is not None else float("nan")
                fh.write(f"{c.alpha!r} {c.pointwise.coverage!r} {ccp!r}\n")
        for c in cells:
            if c.per_point_empsd is None:
                continue
            with (out / f"se_vs_empsd_case{case_id}_n{n}_a{c.alpha:g}.dat").open("w", encoding="utf-8") as fh:
                fh.write("# empsd mean_se (one line per test point)\n")
                for e, s in zip(c.per_point_empsd, c.per_point_se):
                    fh.write(f"{float(e)!r} {float(s)!r}\n")

    summary = {
        "config": config.to_dict(),
        "cells": [
            {
                "case": c.case_id, "n": c.n, "alpha": c.alpha, "r": c.r, "status": c.status,
                "failures": [{"rep": k, "error": msg} for k, msg in c.failures],
                "pointwise": None if c.pointwise is None else c.pointwise.to_dict(),
                "contrast": None if c.contrast is None else c.contrast.to_dict(),
            }
            for c in results
        ],
    }
    (out / "study.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return out
