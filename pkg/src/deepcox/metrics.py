"""Concordance index and Monte Carlo evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InsufficientReplicationsError, InvalidArgumentError, UndefinedMetricError
from .inference import normal_quantile


def concordance_index(scores, times, events) -> float:
    """Harrell's C.

    A pair ``(i, j)`` is comparable when ``T_i < T_j`` and ``Delta_i = 1``; it
    is concordant when ``score_i > score_j`` and counts 1/2 on a score tie.
    Pairs with tied times are never comparable.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    t = np.asarray(times, dtype=np.float64).reshape(-1)
    e = np.asarray(events).reshape(-1).astype(bool)
    if not (s.size == t.size == e.size):
        raise InvalidArgumentError("scores, times and events must have equal lengths")
    num = 0.0
    comparable = 0
    for i in np.flatnonzero(e):
        later = t > t[i]
        k = int(later.sum())
        if k == 0:
            continue
        comparable += k
        sj = s[later]
        num += np.count_nonzero(s[i] > sj) + 0.5 * np.count_nonzero(s[i] == sj)
    if comparable == 0:
        raise UndefinedMetricError("no comparable pairs")
    return num / comparable


@dataclass(frozen=True)
class MetricsRow:
    """Table row; ``emp_sd`` is None when fewer than two replications exist."""

    label: str
    bias: float
    mae: float
    emp_sd: float | None
    mean_se: float
    coverage: float
    avg_interval_length: float
    replications: int = 0
    points: int = 0
    clamped_fraction: float = 0.0

    COLUMNS = ("label", "bias", "mae", "emp_sd", "mean_se", "coverage", "avg_interval_length",
               "replications", "points", "clamped_fraction")

    def to_dict(self):
        return asdict(self)

    def csv_row(self):
        def fmt(v):
            if v is None:
                return "NA"
            if isinstance(v, float):
                return repr(v)
            return str(v)

        return [fmt(getattr(self, c)) for c in self.COLUMNS]


def evaluate_pointwise(estimates, ses, truths, level=0.95, label="", clamped=None, allow_single=False) -> MetricsRow:
    """Bias, MAE, EmpSD, SE, CP and AIL over an ``(R, m)`` replication grid.

    EmpSD is the across-replication sample standard deviation at each point,
    averaged over points.  ``truths`` broadcasts against the estimates.  With
    ``R < 2`` this raises unless ``allow_single`` is set, in which case EmpSD
    is reported as None.
    """
    est = np.atleast_2d(np.asarray(estimates, dtype=np.float64))
    se = np.atleast_2d(np.asarray(ses, dtype=np.float64))
    if est.shape != se.shape:
        raise InvalidArgumentError(f"estimates {est.shape} and ses {se.shape} differ in shape")
    truth = np.broadcast_to(np.asarray(truths, dtype=np.float64), est.shape)
    R, m = est.shape
    if R < 2 and not allow_single:
        raise InsufficientReplicationsError(f"EmpSD needs at least 2 replications, got {R}")
    if np.any(se < 0):
        raise InvalidArgumentError("standard errors must be nonnegative")
    z = normal_quantile(1.0 - (1.0 - level) / 2.0)
    half = z * se
    covered = (est - half <= truth) & (truth <= est + half)
    err = est - truth
    emp_sd = float(np.mean(np.std(est, axis=0, ddof=1))) if R >= 2 else None
    frac = 0.0 if clamped is None else float(np.mean(np.asarray(clamped, dtype=bool)))
    return MetricsRow(
        label=label,
        bias=float(np.mean(err)),
        mae=float(np.mean(np.abs(err))),
        emp_sd=emp_sd,
        mean_se=float(np.mean(se)),
        coverage=float(np.mean(covered)),
        avg_interval_length=float(np.mean(2.0 * half)),
        replications=R,
        points=m,
        clamped_fraction=frac,
    )


def se_to_empsd_ratio(row: MetricsRow):
    if row.emp_sd is None or row.emp_sd == 0:
        return math.nan
    return row.mean_se / row.emp_sd
