"""Infinitesimal-jackknife inference for subsample ensembles.

The pointwise variance, the cross-covariance between two evaluation points
and the contrast variance are all built from the inclusion matrix ``J`` and
the base-learner predictions.  Raw estimates can be negative after the
Monte Carlo correction; reported variances are clamped at zero and flagged.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import asdict, dataclass

import numpy as np

from . import _seeding
from .errors import DegenerateDataError, InvalidArgumentError


@dataclass(frozen=True)
class InferenceResult:
    estimate: float
    std_error: float
    ci_lower: float
    ci_upper: float
    level: float
    clamped: bool = False

    @property
    def width(self):
        """``2 z se``; equals ``ci_upper - ci_lower`` up to rounding of the endpoints."""
        return 2.0 * (normal_quantile(1.0 - (1.0 - self.level) / 2.0) * self.std_error)

    def covers(self, value):
        return self.ci_lower <= value <= self.ci_upper


# -- IJ core ------------------------------------------------------------------


def _ij_parts(J, preds):
    """Centered inclusions ``J - J_bar`` and the ``Z``/``V`` arrays for one point."""
    B = J.shape[0]
    pc = preds - preds.mean()
    jc = J - J.mean(axis=0)
    Z = jc * pc[:, None]
    V = Z.sum(axis=0) / B
    return Z, V


def ij_covariance_from_predictions(J, preds1, preds2, r=None):
    """Unclamped IJ covariance of the ensemble means at two points.

    Parameters
    ----------
    J : ndarray, shape (B, n)
        Inclusion matrix.
    preds1, preds2 : ndarray, shape (B,)
        Base-learner predictions at the two points.
    r : int, optional
        Subsample size; read from the row sums of ``J`` when omitted.

    With ``preds1 is preds2`` (or equal arrays) this is the pointwise
    variance; the result is symmetric in the two points bit for bit.
    """
    J = np.asarray(J, dtype=np.float64)
    B, n = J.shape
    if B < 2:
        raise InvalidArgumentError(f"IJ variance needs B >= 2 base learners, got {B}")
    if r is None:
        r = int(round(J[0].sum()))
    if r >= n:
        raise InvalidArgumentError(f"IJ variance needs r < n, got r={r}, n={n}")
    p1 = np.asarray(preds1, dtype=np.float64)
    p2 = np.asarray(preds2, dtype=np.float64)
    if p1.shape != (B,) or p2.shape != (B,):
        raise InvalidArgumentError(f"predictions must have shape ({B},)")
    Z1, V1 = _ij_parts(J, p1)
    Z2, V2 = _ij_parts(J, p2)
    main = float(np.dot(V1, V2))
    mc = float(np.sum((Z1 - V1) * (Z2 - V2)))
    return n * (n - 1) / (n - r) ** 2 * (main - mc / (B * (B - 1)))


def ij_covariance_matrix(J, preds):
    """All pairwise IJ covariances for predictions of shape ``(B, m)``."""
    preds = np.asarray(preds, dtype=np.float64)
    m = preds.shape[1]
    out = np.empty((m, m))
    for a in range(m):
        for b in range(a, m):
            out[a, b] = out[b, a] = ij_covariance_from_predictions(J, preds[:, a], preds[:, b])
    return out


def clamp_variance(raw):
    if raw < 0:
        return 0.0, True
    return float(raw), False


def contrast_variance_from_parts(var1, var2, cov12):
    """Unclamped contrast variance ``var1 + var2 - 2 cov12``.

    Evaluated as ``(var1 - cov12) + (var2 - cov12)``, which is the order in
    which ``v' S v`` with ``v = (1, -1)`` comes out of a matrix product.
    """
    return (var1 - cov12) + (var2 - cov12)


def ij_pointwise_variance(model, x):
    """IJ variance of ``g_B(x)``; returns ``(variance, clamped)``."""
    p = model.base_predictions(x)
    return clamp_variance(ij_covariance_from_predictions(model.inclusion.entries, p, p, model.r))


def ij_cross_covariance(model, x1, x2):
    """Unclamped IJ covariance between ``g_B(x1)`` and ``g_B(x2)``."""
    J = model.inclusion.entries
    return ij_covariance_from_predictions(J, model.base_predictions(x1), model.base_predictions(x2), model.r)


def contrast_variance(model, x1, x2):
    """IJ variance of the contrast ``g_B(x1) - g_B(x2)``; returns ``(variance, clamped)``.

    The three components enter unclamped; only the combination is clamped.
    """
    J = model.inclusion.entries
    p1, p2 = model.base_predictions(x1), model.base_predictions(x2)
    v1 = ij_covariance_from_predictions(J, p1, p1, model.r)
    v2 = ij_covariance_from_predictions(J, p2, p2, model.r)
    c12 = ij_covariance_from_predictions(J, p1, p2, model.r)
    return clamp_variance(contrast_variance_from_parts(v1, v2, c12))


# -- normal quantile ----------------------------------------------------------

# Wichura (1988), algorithm AS 241 (PPND16)
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3, 1.3731693765509461125e4,
      4.5921953931549871457e4, 6.7265770927008700853e4, 3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4, 5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0, 3.64784832476320460504e0,
      1.27045825245236838258e0, 2.41780725177450611770e-1, 2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4, 1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0, 2.96560571828504891230e-1,
      2.65321895265761230930e-2, 1.24266094738807843860e-3, 2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7, 2.04426310338993978564e-15)


def _poly(coef, x):
    acc = 0.0
    for c in reversed(coef):
        acc = acc * x + c
    return acc


def normal_quantile(p):
    """Standard normal quantile by the AS 241 rational approximation."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise InvalidArgumentError(f"p must lie strictly inside (0, 1), got {p}")
    q = p - 0.5
    if abs(q) <= 0.425:
        t = 0.180625 - q * q
        return q * _poly(_A, t) / _poly(_B, t)
    t = math.sqrt(-math.log(min(p, 1.0 - p)))
    if t <= 5.0:
        t -= 1.6
        val = _poly(_C, t) / _poly(_D, t)
    else:
        t -= 5.0
        val = _poly(_E, t) / _poly(_F, t)
    return -val if q < 0 else val


def wald_interval(estimate, std_error, level=0.95, clamped=False) -> InferenceResult:
    if std_error < 0 or not math.isfinite(std_error):
        raise InvalidArgumentError(f"std_error must be finite and nonnegative, got {std_error}")
    if not 0.0 < level < 1.0:
        raise InvalidArgumentError(f"level must lie strictly inside (0, 1), got {level}")
    half = normal_quantile(1.0 - (1.0 - level) / 2.0) * std_error
    return InferenceResult(float(estimate), float(std_error), estimate - half, estimate + half, level, bool(clamped))


def relative_risk_interval(contrast_result: InferenceResult):
    """Hazard-ratio interval: componentwise exponential of a contrast interval."""
    if contrast_result.ci_lower > contrast_result.ci_upper:
        raise InvalidArgumentError("interval bounds are reversed")
    return math.exp(contrast_result.ci_lower), math.exp(contrast_result.ci_upper)


def infer_points(model, X, level=0.95):
    """Pointwise estimates and Wald intervals at the rows of ``X``."""
    P = model.base_predictions(np.atleast_2d(X))
    J = model.inclusion.entries
    out = []
    for k in range(P.shape[1]):
        var, clamped = clamp_variance(ij_covariance_from_predictions(J, P[:, k], P[:, k], model.r))
        out.append(wald_interval(float(P[:, k].mean()), math.sqrt(var), level, clamped))
    return out


def infer_contrasts(model, X, pairs, level=0.95):
    """Contrast estimates and intervals for index pairs ``(i, j)`` into the rows of ``X``."""
    P = model.base_predictions(np.atleast_2d(X))
    J = model.inclusion.entries
    cache = {}

    def var(k):
        if k not in cache:
            cache[k] = ij_covariance_from_predictions(J, P[:, k], P[:, k], model.r)
        return cache[k]

    g = P.mean(axis=0)
    out = []
    for i, j in pairs:
        c = ij_covariance_from_predictions(J, P[:, i], P[:, j], model.r)
        v, clamped = clamp_variance(contrast_variance_from_parts(var(i), var(j), c))
        out.append(wald_interval(float(g[i] - g[j]), math.sqrt(v), level, clamped))
    return out


# -- single-overlap covariance oracle -----------------------------------------


def _concat(a, b):
    if hasattr(a, "concat"):
        return type(a).concat([a, b])
    return np.concatenate([np.asarray(a), np.asarray(b)])


def _has_events(data):
    return getattr(data, "n_events", 1) > 0


def single_overlap_cov_mc(base_trainer, generator, r, x1, x2=None, reps=1000, seed=0):
    """Monte Carlo estimate of the single-overlap covariance.

    Each replication draws one shared observation and two independent
    completions of size ``r - 1``, fits the base estimator on both samples
    and records the pair of predictions (at ``x1`` and ``x2``).

    Parameters
    ----------
    base_trainer : callable
        ``base_trainer(data, point, rng) -> float``; fits on ``data`` and
        evaluates at ``point``.
    generator : callable
        ``generator(rng, size)`` returning ``size`` i.i.d. observations, as a
        ``SurvivalDataset`` or an array.
    """
    if reps < 2:
        raise InvalidArgumentError(f"reps must be at least 2, got {reps}")
    if r < 1:
        raise InvalidArgumentError(f"r must be positive, got {r}")
    x2 = x1 if x2 is None else x2
    first = np.empty(reps)
    second = np.empty(reps)
    for k in range(reps):
        rng = _seeding.derive_rng(seed, _seeding.OVERLAP, k)
        shared = generator(rng, 1)
        samples = []
        for _ in range(2):
            for _attempt in range(100):
                data = _concat(shared, generator(rng, r - 1)) if r > 1 else shared
                if _has_events(data):
                    break
            else:
                raise DegenerateDataError(f"replication {k}: 100 consecutive samples without events")
            samples.append(data)
        first[k] = base_trainer(samples[0], x1, rng)
        second[k] = base_trainer(samples[1], x2, rng)
    return float(np.cov(first, second, ddof=1)[0, 1])


# -- admissible subsample exponents -------------------------------------------


@dataclass(frozen=True)
class RateParams:
    """Composite-smoothness description of the target and tuning exponents.

    ``t`` and ``gamma`` list the input dimension and smoothness of each of the
    ``q + 1`` levels; ``delta`` is the overparameterization exponent, ``xi``
    the bias-domination slack and ``nu`` the single-overlap decay exponent.
    """

    t: tuple
    gamma: tuple
    delta: float = 0.0
    xi: float = 0.1
    nu: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "t", tuple(self.t))
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        if len(self.t) == 0 or len(self.t) != len(self.gamma):
            raise InvalidArgumentError("t and gamma must be nonempty and of equal length q + 1")
        if any(g <= 0 for g in self.gamma):
            raise InvalidArgumentError(f"all gamma must be positive, got {self.gamma}")
        if any(t <= 0 for t in self.t):
            raise InvalidArgumentError(f"all t must be positive, got {self.t}")
        if not 0.0 < self.xi < 1.0:
            raise InvalidArgumentError(f"xi must lie in (0, 1), got {self.xi}")

    @property
    def q(self):
        return len(self.t) - 1


@dataclass(frozen=True)
class AlphaRange:
    gamma_star: tuple
    level_rates: tuple
    c_eff: float
    i_eff: int
    eta: float
    m0: float
    alpha_lower: float
    alpha_upper: float
    delta_lower: float
    delta_upper: float
    nu_lower: float
    nu_upper: float
    delta_admissible: bool
    nu_admissible: bool
    ij_alpha_lower: float = 0.5

    @property
    def nonempty(self):
        return self.alpha_lower < self.alpha_upper

    def contains(self, alpha):
        return self.alpha_lower < alpha < self.alpha_upper

    def to_dict(self):
        d = asdict(self)
        d["nonempty"] = self.nonempty
        return d


def alpha_range(params: RateParams) -> AlphaRange:
    """Effective smoothness, bottleneck level and the admissible ``alpha`` window.

    The window is ``(1 / (2 - nu + m0), 1 / (nu + c_eff - delta))`` with
    ``m0 = c_eff (1 + eta) (1 - xi)``.  The flags report whether ``delta`` and
    ``nu`` lie in the ranges the window is derived under.  Consistency of the
    variance estimator additionally needs ``alpha > 1/2`` (``ij_alpha_lower``).
    """
    gam, t = params.gamma, params.t
    q = params.q
    gamma_star = []
    for i in range(q + 1):
        g = gam[i]
        for l in range(i + 1, q + 1):
            g *= min(gam[l], 1.0)
        gamma_star.append(g)
    rates = [2 * gs / (2 * gs + ti) for gs, ti in zip(gamma_star, t)]
    # argmin ties resolve to the smallest index
    i_eff = min(range(q + 1), key=lambda i: (rates[i], i))
    c_eff = rates[i_eff]
    eta = 2 * params.delta * gamma_star[i_eff] / (t[i_eff] * c_eff)
    m0 = c_eff * (1 + eta) * (1 - params.xi)
    delta_lower = c_eff * (1 - c_eff) / (2 - c_eff)
    nu_upper = 1 + m0 / 2
    return AlphaRange(
        gamma_star=tuple(gamma_star),
        level_rates=tuple(rates),
        c_eff=c_eff,
        i_eff=i_eff,
        eta=eta,
        m0=m0,
        alpha_lower=1 / (2 - params.nu + m0),
        alpha_upper=1 / (params.nu + c_eff - params.delta),
        delta_lower=delta_lower,
        delta_upper=c_eff,
        nu_lower=1.0,
        nu_upper=nu_upper,
        delta_admissible=delta_lower < params.delta < c_eff,
        nu_admissible=1.0 < params.nu < nu_upper,
    )


def _as_fraction(x):
    frac = Fraction(x).limit_denominator(1000)
    if frac.denominator > 1 and abs(float(frac) - x) < 1e-12:
        return f" = {frac.numerator}/{frac.denominator}"
    return ""


def format_alpha_report(params: RateParams, res: AlphaRange):
    lines = [
        f"levels q+1 = {params.q + 1}; t = {list(params.t)}; gamma = {list(params.gamma)}",
        f"gamma_star = {[round(g, 6) for g in res.gamma_star]}",
        f"level rates 2g*/(2g*+t) = {[round(x, 6) for x in res.level_rates]}",
        f"c_eff = {res.c_eff:.10g}{_as_fraction(res.c_eff)} (i_eff = {res.i_eff})",
        f"eta = {res.eta:.10g}; m0 = {res.m0:.10g}",
        f"delta = {params.delta:g}: admissible window ({res.delta_lower:.6g}, {res.delta_upper:.6g}) -> "
        + ("ok" if res.delta_admissible else "OUTSIDE"),
        f"nu = {params.nu:g}: admissible window ({res.nu_lower:.6g}, {res.nu_upper:.6g}) -> "
        + ("ok" if res.nu_admissible else "OUTSIDE"),
        f"alpha window for normality: ({res.alpha_lower:.6g}, {res.alpha_upper:.6g})"
        + ("" if res.nonempty else " EMPTY"),
        f"variance-estimator consistency additionally needs alpha > {res.ij_alpha_lower:g}",
    ]
    return "\n".join(lines)
