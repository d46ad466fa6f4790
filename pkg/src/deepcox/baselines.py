"""Linear Cox proportional hazards fit by Newton-Raphson (Breslow ties)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coxloss import risk_order
from .errors import ConvergenceError, DegenerateDesignError, InvalidArgumentError, SeparationError

MAX_NORM = 1e3
MAX_HALVINGS = 40
SEPARATION_RATIO = 1e-6


@dataclass(eq=False)
class LinearCoxFit:
    beta: np.ndarray
    log_likelihood: float
    gradient: np.ndarray
    hessian: np.ndarray
    iterations: int


def linear_cox_derivatives(beta, X, times, events):
    """Log partial likelihood of ``g(x) = beta'x`` scaled by ``1/n``, with gradient and Hessian."""
    X = np.asarray(X, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    n, p = X.shape
    ro = risk_order(times, events)
    xs = X[ro.order]
    d = ro.event_flags
    eta = xs @ beta
    shift = eta.max()
    w = np.exp(eta - shift)
    # risk-set sums in descending time, read at the end of each tie group
    s0 = np.cumsum(w)[ro.group_end]
    s1 = np.cumsum(w[:, None] * xs, axis=0)[ro.group_end]
    s2 = np.cumsum(w[:, None, None] * (xs[:, :, None] * xs[:, None, :]), axis=0)[ro.group_end]
    s0, s1, s2 = s0[d], s1[d], s2[d]
    mean = s1 / s0[:, None]
    ll = float(np.sum(eta[d] - shift - np.log(s0))) / n
    grad = np.sum(xs[d] - mean, axis=0) / n
    second = s2 / s0[:, None, None] - mean[:, :, None] * mean[:, None, :]
    hess = -np.sum(second, axis=0) / n
    return ll, grad, hess


def _check_hessian(hess):
    eig = np.linalg.eigvalsh(-hess)
    top = max(abs(eig[-1]), 1e-300)
    if eig[0] <= 1e-10 * top or top <= 1e-14:
        raise DegenerateDesignError(
            f"information matrix is singular (eigenvalues {eig[0]:.3g} .. {eig[-1]:.3g})"
        )
    return eig[0]


def fit_linear_cox(dataset, max_iter=100, tol=1e-8, return_details=False):
    """Maximize the linear-Cox partial likelihood; returns ``beta`` (or a ``LinearCoxFit``).

    Converged when the gradient sup-norm is below ``tol``.  A step that does
    not increase the likelihood is halved.
    """
    dataset.require_events()
    if max_iter < 1 or tol <= 0:
        raise InvalidArgumentError("max_iter must be positive and tol must be positive")
    X, t, e = dataset.covariates, dataset.time, dataset.event
    beta = np.zeros(X.shape[1])
    ll, grad, hess = linear_cox_derivatives(beta, X, t, e)
    info0 = _check_hessian(hess)
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad)) < tol:
            it -= 1
            break
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-hess, grad, rcond=None)[0]
        for _ in range(MAX_HALVINGS):
            cand = beta + step
            if np.linalg.norm(cand) > MAX_NORM:
                raise SeparationError(f"|beta| exceeded {MAX_NORM:g}; the likelihood appears monotone")
            ll_new, g_new, h_new = linear_cox_derivatives(cand, X, t, e)
            if ll_new >= ll:
                break
            step = step / 2
        else:
            raise ConvergenceError("step halving failed to increase the partial likelihood")
        beta, ll, grad, hess = cand, ll_new, g_new, h_new
    else:
        if np.max(np.abs(grad)) >= tol:
            raise ConvergenceError(f"no convergence within {max_iter} iterations (|grad| = {np.max(np.abs(grad)):.3g})")
        it = max_iter
    # a monotone likelihood drives the gradient to zero while the information vanishes
    if np.linalg.eigvalsh(-hess)[0] < SEPARATION_RATIO * info0:
        raise SeparationError(f"information collapsed at |beta| = {np.linalg.norm(beta):.3g}; the likelihood appears monotone")
    if return_details:
        return LinearCoxFit(beta, ll, grad, hess, it)
    return beta
