"""Right-censored survival datasets, CSV ingestion and the simulation cases.

Event times follow the Cox model with hazard ``0.1 t exp{g0(x)}``, whose
cumulative hazard ``0.05 t^2 exp{g0(x)}`` inverts in closed form.  Covariates
are ten standard normals truncated componentwise to ``[-3, 3]``; censoring is
exponential with a rate calibrated to the requested censoring fraction.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _seeding
from .errors import CalibrationError, InvalidArgumentError, ParseError, ValidationError

CASE_IDS = (1, 2, 3)
N_COVARIATES = 10
TRUNCATION = 3.0
# cumulative hazard of 0.1 t e^g is 0.05 t^2 e^g
CUMHAZ_SCALE = 0.05

RATE_BRACKET = (1e-6, 1e3)
PROBE_SIZE = 100_000
PROBE_SEED = 20_240_517


@dataclass(frozen=True)
class Observation:
    time: float
    event: bool
    covariates: np.ndarray


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Immutable column store of ``(time, event, covariates)`` triples.

    The arrays are copied and marked read-only on construction.  A dataset
    may contain tied times; the loss module defines how ties are handled.
    Whether the dataset carries at least one event is checked by the
    consumers that need it (``require_events``), since subsets and probe
    samples are legitimately event-free.
    """

    time: np.ndarray
    event: np.ndarray
    covariates: np.ndarray
    name: str = "data"

    def __post_init__(self):
        time = np.array(self.time, dtype=np.float64).reshape(-1)
        event = np.asarray(self.event)
        if event.dtype != bool:
            if not np.all(np.isin(event, (0, 1))):
                raise ValidationError("event flags must be 0/1")
            event = event.astype(bool)
        event = np.array(event, dtype=bool).reshape(-1)
        cov = np.array(self.covariates, dtype=np.float64)
        if cov.ndim == 1:
            cov = cov.reshape(-1, 1) if time.size != 1 else cov.reshape(1, -1)
        if cov.ndim != 2:
            raise ValidationError("covariates must be a 2-D array")
        n = time.size
        if n == 0:
            raise ValidationError("dataset has no observations")
        if event.size != n or cov.shape[0] != n:
            raise ValidationError(
                f"length mismatch: {n} times, {event.size} events, {cov.shape[0]} covariate rows"
            )
        if cov.shape[1] < 1:
            raise ValidationError("at least one covariate column is required")
        if not np.all(np.isfinite(time)):
            raise ValidationError("times must be finite")
        if np.any(time < 0):
            raise ValidationError("times must be nonnegative")
        if not np.all(np.isfinite(cov)):
            raise ValidationError("covariates must be finite")
        for arr in (time, event, cov):
            arr.setflags(write=False)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        object.__setattr__(self, "covariates", cov)

    @property
    def n(self):
        return self.time.size

    @property
    def p0(self):
        return self.covariates.shape[1]

    def __len__(self):
        return self.n

    def __iter__(self):
        for t, d, x in zip(self.time, self.event, self.covariates):
            yield Observation(float(t), bool(d), x)

    @property
    def n_events(self):
        return int(self.event.sum())

    @property
    def censoring_fraction(self):
        return 1.0 - self.n_events / self.n

    def require_events(self):
        if self.n_events == 0:
            raise ValidationError(f"dataset {self.name!r} has no observed events")
        return self

    def subset(self, index, name=None):
        index = np.asarray(index)
        return SurvivalDataset(
            self.time[index], self.event[index], self.covariates[index], name or self.name
        )

    @classmethod
    def concat(cls, parts, name=None):
        parts = list(parts)
        return cls(
            np.concatenate([p.time for p in parts]),
            np.concatenate([p.event for p in parts]),
            np.concatenate([p.covariates for p in parts]),
            name or parts[0].name,
        )

    @classmethod
    def from_observations(cls, observations, name="data"):
        observations = list(observations)
        if not observations:
            raise ValidationError("dataset has no observations")
        p0 = len(observations[0].covariates)
        if any(len(o.covariates) != p0 for o in observations):
            raise ValidationError("observations disagree on the number of covariates")
        return cls(
            [o.time for o in observations],
            [bool(o.event) for o in observations],
            np.array([o.covariates for o in observations], dtype=np.float64),
            name,
        )


@dataclass(frozen=True)
class SimulationSpec:
    case_id: int
    n: int
    censor_rate_target: float = 0.30
    seed: int = 0

    def __post_init__(self):
        _check_case(self.case_id)
        if isinstance(self.n, bool) or not isinstance(self.n, (int, np.integer)) or self.n < 2:
            raise InvalidArgumentError(f"n must be an integer >= 2, got {self.n!r}")
        if not 0.0 < self.censor_rate_target < 1.0:
            raise InvalidArgumentError(
                f"censor_rate_target must lie strictly inside (0, 1), got {self.censor_rate_target}"
            )
        _seeding.check_seed(self.seed)


def _check_case(case_id):
    if case_id not in CASE_IDS:
        raise InvalidArgumentError(f"unknown case_id {case_id!r}; expected one of {CASE_IDS}")


def true_risk(case_id, x):
    """Log-risk ``g0(x)`` of simulation case 1, 2 or 3.

    ``x`` is a length-10 vector or an ``(m, 10)`` array; only the first
    three coordinates enter.
    """
    _check_case(case_id)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (N_COVARIATES,):
        raise InvalidArgumentError(f"x must have trailing length {N_COVARIATES}, got shape {x.shape}")
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    if case_id == 1:
        g = x1 - 1.2 * x2 + 0.8 * x3
    elif case_id == 2:
        g = 0.7 * x1 - 0.5 * x3 + 0.4 * x2**2 + 0.3 * x1 * x2
    else:
        g = (
            0.7 * x1
            - 0.8 * x3
            + 0.5 * x2**2
            + np.sin(0.5 * x1 * x2)
            + 1.2 * np.exp(-0.25 * (x1 - 1.0) ** 2 - 0.25 * (x2 + 1.0) ** 2)
            - 1.2 * np.exp(-0.5)
        )
    return float(g) if g.ndim == 0 else g


def sample_event_time(g_value, rng_draw):
    """Inverse-transform draw of ``T_U`` given log-risk ``g_value``.

    Solves ``exp(-0.05 t^2 e^g) = u`` for ``t``.  Vectorized over both
    arguments.
    """
    u = np.asarray(rng_draw, dtype=np.float64)
    if np.any(~((u > 0.0) & (u < 1.0))):
        raise InvalidArgumentError("rng_draw must lie strictly inside (0, 1)")
    g = np.asarray(g_value, dtype=np.float64)
    t = np.sqrt(-np.log(u) / (CUMHAZ_SCALE * np.exp(g)))
    return float(t) if t.ndim == 0 else t


def truncated_normal(rng, shape, bound=TRUNCATION):
    """Standard normals truncated to ``[-bound, bound]`` by componentwise rejection."""
    z = rng.standard_normal(shape)
    bad = np.abs(z) > bound
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > bound
    return z


def _open_uniform(rng, size):
    u = rng.random(size)
    zero = u == 0.0
    while zero.any():
        u[zero] = rng.random(int(zero.sum()))
        zero = u == 0.0
    return u


def _draw_latent(case_id, n, rng):
    x = truncated_normal(rng, (n, N_COVARIATES))
    t_event = sample_event_time(true_risk(case_id, x), _open_uniform(rng, n))
    # unit exponentials; censoring time at rate mu is e / mu
    e = rng.standard_exponential(n)
    return x, np.atleast_1d(t_event), e


def censoring_fraction(rate, t_event, unit_exponentials):
    """Fraction of subjects with ``T_C < T_U`` when ``T_C = E / rate``."""
    if rate < 0:
        raise InvalidArgumentError("censoring rate must be nonnegative")
    if rate == 0:
        return 0.0
    t_cens = np.asarray(unit_exponentials) / rate
    return float(np.mean(t_cens < np.asarray(t_event)))


def calibrate_censoring_rate(case_id, n_probe=PROBE_SIZE, target=0.30, seed=PROBE_SEED, tol=1e-3):
    """Exponential censoring rate giving the ``target`` censoring fraction.

    Bisection over ``RATE_BRACKET`` on a probe sample of ``n_probe``
    simulated subjects.  The probe draws are fixed, so the censoring
    fraction is monotone in the rate.
    """
    _check_case(case_id)
    if not 0.0 < target < 1.0:
        raise InvalidArgumentError(f"target must lie strictly inside (0, 1), got {target}")
    if n_probe < 10_000:
        raise InvalidArgumentError(f"n_probe must be at least 1e4, got {n_probe}")
    _, t_event, e = _draw_latent(case_id, int(n_probe), np.random.default_rng(_seeding.check_seed(seed)))

    lo, hi = RATE_BRACKET
    f_lo = censoring_fraction(lo, t_event, e)
    f_hi = censoring_fraction(hi, t_event, e)
    if not f_lo <= target <= f_hi:
        raise CalibrationError("censoring target not bracketed", {lo: f_lo, hi: f_hi})
    # geometric bisection: the bracket spans nine decades
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        f_mid = censoring_fraction(mid, t_event, e)
        if abs(f_mid - target) <= tol:
            return mid
        if f_mid < target:
            lo = mid
        else:
            hi = mid
        if hi / lo - 1.0 < 1e-14:
            break
    f_mid = censoring_fraction(mid, t_event, e)
    if abs(f_mid - target) > 0.01:
        raise CalibrationError("bisection did not reach the target", {lo: f_lo, mid: f_mid, hi: f_hi})
    return mid


@functools.lru_cache(maxsize=None)
def calibrated_rate(case_id, target=0.30):
    """Cached censoring rate for a case, from the fixed default probe sample."""
    return calibrate_censoring_rate(case_id, PROBE_SIZE, target, PROBE_SEED)


def generate_case(spec: SimulationSpec, censor_rate=None) -> SurvivalDataset:
    """Simulate ``spec.n`` observations of the requested case.

    ``censor_rate`` overrides the calibrated rate; 0 disables censoring.
    """
    if censor_rate is None:
        censor_rate = calibrated_rate(spec.case_id, spec.censor_rate_target)
    rng = np.random.default_rng(spec.seed)
    x, t_event, e = _draw_latent(spec.case_id, spec.n, rng)
    if censor_rate == 0:
        t_cens = np.full(spec.n, np.inf)
    else:
        t_cens = e / censor_rate
    event = t_event <= t_cens
    time = np.where(event, t_event, t_cens)
    return SurvivalDataset(time, event, x, name=f"case{spec.case_id}_n{spec.n}_seed{spec.seed}")


def draw_covariates(n, seed):
    """Truncated-normal covariate points, e.g. for a fixed test set."""
    return truncated_normal(np.random.default_rng(_seeding.check_seed(seed)), (n, N_COVARIATES))


def load_dataset(path, name=None) -> SurvivalDataset:
    """Read a ``time,event,x1,...,xp`` CSV file."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    p = len(header) - 2
    expected = ["time", "event"] + [f"x{k}" for k in range(1, p + 1)]
    if p < 1 or header != expected:
        raise ParseError(f"{path}: header must be time,event,x1,...,xp; got {','.join(header)}", line=1)
    times, events, covs = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != p + 2:
            raise ParseError(f"expected {p + 2} fields, found {len(row)}", line=lineno)
        try:
            values = [float(c) for c in row]
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        t, d = values[0], values[1]
        if not math.isfinite(t) or t < 0:
            raise ValidationError(f"time must be finite and nonnegative, got {row[0]}", line=lineno)
        if d not in (0.0, 1.0):
            raise ValidationError(f"event must be 0 or 1, got {row[1]}", line=lineno)
        if not all(math.isfinite(v) for v in values[2:]):
            raise ValidationError("covariates must be finite", line=lineno)
        times.append(t)
        events.append(d == 1.0)
        covs.append(values[2:])
    if not times:
        raise ParseError(f"{path}: no data rows")
    return SurvivalDataset(times, events, np.array(covs), name or path.stem)


def save_dataset(dataset: SurvivalDataset, path):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "event"] + [f"x{k}" for k in range(1, dataset.p0 + 1)])
        for t, d, x in zip(dataset.time, dataset.event, dataset.covariates):
            w.writerow([repr(float(t)), int(d)] + [repr(float(v)) for v in x])
    return path
