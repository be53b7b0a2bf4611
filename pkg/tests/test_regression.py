from __future__ import annotations

import math

import numpy as np
import pytest

from dsvie.errors import DegenerateDesignError, InvalidArgumentError
from dsvie.grid import generate_scenarios, make_grid
from dsvie.regression import (
    RegressionBasis,
    condexp,
    represent_backward,
    represent_forward,
)


@pytest.fixture(scope="module")
def batch():
    return generate_scenarios(make_grid(1.0, 16), 20_000, seed=7)


def test_constant_target_reproduced(batch):
    fitted, est = condexp(np.full(batch.paths, 3.5), batch, 5, "F")
    assert np.max(np.abs(fitted - 3.5)) < 1e-5  # ridge-sized perturbation only
    assert est.residual_rms < 1e-6


def test_martingale_projection_matches_current_value(batch):
    # E[W(T) | F at t_j] = W(t_j); oracle bound 5 sqrt(Var/M) plus span exactness
    j = 8
    fitted, _ = condexp(batch.W1[:, -1], batch, j, "F",
                        RegressionBasis(degree=1, features=("W",)))
    var = 1.0 - batch.grid.nodes[j]
    rms = math.sqrt(float(np.mean((fitted - batch.W1[:, j]) ** 2)))
    assert rms <= 5.0 * math.sqrt(var / batch.paths) + 1e-6


def test_measurable_target_in_span_is_exact(batch):
    j = 8
    target = batch.b_tail[:, j]
    fitted, _ = condexp(target, batch, j, "F")
    assert np.max(np.abs(fitted - target)) < 1e-5


def test_tower_property_lambda_zero(batch):
    basis = RegressionBasis(ridge=0.0)
    j = 8
    once, _ = condexp(batch.W1[:, -1] ** 2, batch, j, "F", basis)
    twice, _ = condexp(once, batch, j, "F", basis)
    assert np.allclose(once, twice, rtol=1e-9, atol=1e-9)


def test_projection_contracts_second_moment(batch):
    basis = RegressionBasis(ridge=0.0)
    rng = np.random.default_rng(3)
    for _ in range(5):
        target = rng.normal(size=batch.paths) * (1 + batch.W1[:, -1] ** 2)
        fitted, _ = condexp(target, batch, 6, "F", basis)
        assert np.mean(fitted**2) <= np.mean(target**2) * (1 + 1e-12)


def test_nan_target_rejected(batch):
    bad = np.zeros(batch.paths)
    bad[3] = np.nan
    with pytest.raises(InvalidArgumentError):
        condexp(bad, batch, 4, "F")


def test_feature_field_validation(batch):
    with pytest.raises(InvalidArgumentError):
        condexp(batch.W1[:, -1], batch, 4, "F", RegressionBasis(features=("W", "B")))
    # same basis is fine under the G field
    condexp(batch.W1[:, -1], batch, 4, "G", RegressionBasis(features=("W", "B")))


def test_degenerate_design_without_ridge(batch):
    # at node 0 the W feature is identically zero: normal equations singular
    with pytest.raises(DegenerateDesignError):
        condexp(batch.W1[:, -1], batch, 0, "F", RegressionBasis(ridge=0.0))


def test_piecewise_constant_basis(batch):
    basis = RegressionBasis(kind="piecewise-constant", degree=8, features=("W",))
    assert basis.dimension() == 8
    fitted, _ = condexp(np.full(batch.paths, 2.0), batch, 8, "F", basis)
    assert np.max(np.abs(fitted - 2.0)) < 1e-6
    # bin means approximate a smooth conditional expectation
    fitted2, _ = condexp(batch.W1[:, -1], batch, 8, "F", basis)
    rms = math.sqrt(float(np.mean((fitted2 - batch.W1[:, 8]) ** 2)))
    assert rms < 0.25


def test_represent_forward_constant_is_null(batch):
    r = represent_forward(np.full(batch.paths, 2.0), batch, 8, 0)
    # null integrand up to regression noise (ensemble mean, target scale 2)
    assert abs(r.integrand.mean()) <= 2.0 * 5.0 / math.sqrt(batch.paths)
    assert r.residual < 0.01


def test_represent_forward_brownian_unit_integrand(batch):
    r = represent_forward(batch.W1[:, 8], batch, 8, 0)
    dtm = float(batch.grid.dt.max())
    assert abs(r.integrand.mean() - 1.0) <= 5.0 / math.sqrt(batch.paths) + 2 * dtm
    assert r.residual < 0.01


def test_represent_forward_square_ito_oracle(batch):
    # d(W^2) = 2 W dW + dt, so the integrand at t_j tracks 2 W(t_j)
    r = represent_forward(batch.W1[:, 8] ** 2, batch, 8, 0)
    for c, j in enumerate(r.j_indices):
        rms = math.sqrt(float(np.mean((r.integrand[:, c] - 2 * batch.W1[:, j]) ** 2)))
        assert rms <= 0.4
    assert r.residual < 0.15


def test_represent_backward_mirrors(batch):
    N = batch.grid.steps
    rc = represent_backward(np.full(batch.paths, 1.0), batch, 4, N)
    assert abs(rc.integrand.mean()) <= 5.0 / math.sqrt(batch.paths)
    r1 = represent_backward(batch.b_tail[:, 4], batch, 4, N)
    dtm = float(batch.grid.dt.max())
    assert abs(r1.integrand.mean() - 1.0) <= 5.0 / math.sqrt(batch.paths) + 2 * dtm
    r2 = represent_backward(batch.b_tail[:, 4] ** 2, batch, 4, N)
    for c, j in enumerate(r2.j_indices):
        rms = math.sqrt(float(np.mean((r2.integrand[:, c] - 2 * batch.b_tail[:, j + 1]) ** 2)))
        assert rms <= 0.4
    assert r2.residual < 0.15


def test_basis_validation():
    with pytest.raises(InvalidArgumentError):
        RegressionBasis(kind="spline")
    with pytest.raises(InvalidArgumentError):
        RegressionBasis(degree=-1)
    with pytest.raises(InvalidArgumentError):
        RegressionBasis(features=())
    with pytest.raises(InvalidArgumentError):
        RegressionBasis(features=("X",))
    assert RegressionBasis(degree=2, features=("W", "B_tail")).dimension() == 6
