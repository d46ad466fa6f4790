from __future__ import annotations

import numpy as np
import pytest

from deepcox.baselines import fit_linear_cox, linear_cox_derivatives
from deepcox.coxloss import neg_log_partial_likelihood
from deepcox.data import SimulationSpec, SurvivalDataset, generate_case
from deepcox.errors import DegenerateDesignError, SeparationError


@pytest.fixture(scope="module")
def case1():
    return generate_case(SimulationSpec(1, 5000, seed=17))


def test_recovers_generating_coefficients(case1):
    fit = fit_linear_cox(case1, return_details=True)
    np.testing.assert_allclose(fit.beta[:3], [1.0, -1.2, 0.8], atol=0.1)
    assert np.max(np.abs(fit.gradient)) < 1e-8
    assert np.all(np.linalg.eigvalsh(fit.hessian) <= 0)


def test_likelihood_agrees_with_cox_loss(case1):
    rng = np.random.default_rng(0)
    beta = rng.normal(size=10) * 0.3
    ll, grad, hess = linear_cox_derivatives(beta, case1.covariates, case1.time, case1.event)
    assert ll == pytest.approx(-neg_log_partial_likelihood(case1.covariates @ beta, case1.time, case1.event), abs=1e-12)
    h = 1e-6
    for k in range(3):
        e = np.zeros(10)
        e[k] = h
        up = linear_cox_derivatives(beta + e, case1.covariates, case1.time, case1.event)
        down = linear_cox_derivatives(beta - e, case1.covariates, case1.time, case1.event)
        assert (up[0] - down[0]) / (2 * h) == pytest.approx(grad[k], abs=1e-8)
        np.testing.assert_allclose((up[1] - down[1]) / (2 * h), hess[k], atol=1e-7)


def test_local_optimality(case1):
    beta = fit_linear_cox(case1)
    best = linear_cox_derivatives(beta, case1.covariates, case1.time, case1.event)[0]
    for k in range(10):
        for step in (0.01, -0.01):
            b = beta.copy()
            b[k] += step
            assert linear_cox_derivatives(b, case1.covariates, case1.time, case1.event)[0] < best


def test_ties_handled():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(300, 2))
    t = np.ceil(rng.exponential(size=300) * 5)
    ds = SurvivalDataset(t, rng.random(300) < 0.8, X)
    fit = fit_linear_cox(ds, return_details=True)
    assert np.max(np.abs(fit.gradient)) < 1e-8


def test_degenerate_design():
    ds = SurvivalDataset(np.arange(1.0, 21.0), np.ones(20), np.ones((20, 3)))
    with pytest.raises(DegenerateDesignError):
        fit_linear_cox(ds)


def test_separation_detected():
    rng = np.random.default_rng(0)
    x = np.c_[-np.arange(20.0), rng.normal(size=20)]
    ds = SurvivalDataset(np.arange(1.0, 21.0), np.ones(20), x)
    with pytest.raises(SeparationError):
        fit_linear_cox(ds)
