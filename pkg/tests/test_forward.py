from __future__ import annotations

import numpy as np
import pytest

from dsvie.backward import TwoParameterField
from dsvie.errors import CertificateError, InvalidArgumentError, NonConvergenceError
from dsvie.forward import (
    FdsvieDriver,
    InitialTerm,
    check_backward_m_relation,
    solve_fdsvie,
)


def _zero_full(batch):
    n = batch.grid.steps + 1
    return TwoParameterField(batch, np.zeros((batch.paths, n, n)), region="full")


def test_deterministic_initial_term(small_batch):
    P, Q, rep = solve_fdsvie(
        InitialTerm(lambda t, w, bt: 0.5 + t), FdsvieDriver(horizon=1.0), small_batch
    )
    assert np.max(np.abs(P.values - (0.5 + small_batch.grid.nodes))) < 1e-5
    assert rep.converged


def test_backward_tail_closed_form(small_batch):
    P, Q, rep = solve_fdsvie(
        InitialTerm(lambda t, w, bt: bt), FdsvieDriver(horizon=1.0), small_batch
    )
    rms = np.sqrt(np.mean((P.values - small_batch.b_tail) ** 2, axis=0))
    assert rms.max() < 1e-5  # initial term lies in the regression span
    n = small_batch.grid.steps
    iu = np.triu_indices(n + 1)
    keep = iu[1] < n
    assert Q.values[:, iu[0][keep], iu[1][keep]].mean() == pytest.approx(1.0, abs=0.1)


def test_drift_accumulation(small_batch):
    drv = FdsvieDriver(b=lambda t, s, p, q, th: 1.0, c=1e-12, horizon=1.0)
    P, Q, _ = solve_fdsvie(InitialTerm.constant(0.0), drv, small_batch)
    assert np.max(np.abs(P.values - small_batch.grid.nodes)) < 1e-5


def test_zero_inputs_zero_solution(small_batch):
    P, Q, _ = solve_fdsvie(InitialTerm.constant(0.0), FdsvieDriver(horizon=1.0), small_batch)
    assert np.max(np.abs(P.values)) < 1e-12
    assert np.max(np.abs(Q.values)) < 1e-9


def test_sign_flag_matches_on_sign_free_cases(small_batch):
    phi = InitialTerm(lambda t, w, bt: bt)
    P_minus, _, _ = solve_fdsvie(phi, FdsvieDriver(horizon=1.0), small_batch, backward_sign=-1)
    P_plus, _, _ = solve_fdsvie(phi, FdsvieDriver(horizon=1.0), small_batch, backward_sign=+1)
    assert np.allclose(P_minus.values, P_plus.values)
    with pytest.raises(InvalidArgumentError):
        solve_fdsvie(phi, FdsvieDriver(horizon=1.0), small_batch, backward_sign=0)


def test_state_independent_linearity(small_batch):
    phi1 = InitialTerm(lambda t, w, bt: bt)
    phi2 = InitialTerm.constant(2.0)
    drv = FdsvieDriver(b=lambda t, s, p, q, th: 1.0, c=1e-12, horizon=1.0)
    P1, Q1, _ = solve_fdsvie(phi1, drv, small_batch)
    P2, Q2, _ = solve_fdsvie(phi2, FdsvieDriver(horizon=1.0), small_batch)
    phi_sum = InitialTerm(lambda t, w, bt: bt + 2.0)
    Ps, Qs, _ = solve_fdsvie(phi_sum, drv, small_batch)
    assert np.allclose(Ps.values, P1.values + P2.values, atol=1e-8)
    assert np.allclose(Qs.values, Q1.values + Q2.values, atol=1e-7)


def test_backward_m_relation_and_negative_control(small_batch):
    N = small_batch.grid.steps
    P, Q, _ = solve_fdsvie(
        InitialTerm(lambda t, w, bt: bt), FdsvieDriver(horizon=1.0), small_batch
    )
    assert check_backward_m_relation(P, Q, N, small_batch) <= 0.05
    assert check_backward_m_relation(P, _zero_full(small_batch), N, small_batch) >= 0.5


def test_constant_process_trivial_relation(small_batch):
    N = small_batch.grid.steps
    P, Q, _ = solve_fdsvie(InitialTerm.constant(3.0), FdsvieDriver(horizon=1.0), small_batch)
    assert check_backward_m_relation(P, Q, N, small_batch) < 0.01


def test_input_bound_surrogate(small_batch):
    # forward analogue of the fitted input bound; same frozen constant
    from dsvie.backward import _norm_arrays

    INPUT_BOUND_L = 4.0
    beta = 1.0
    g = small_batch.grid
    P, Q, _ = solve_fdsvie(
        InitialTerm(lambda t, w, bt: bt), FdsvieDriver(horizon=1.0), small_batch
    )
    out = _norm_arrays(P.values, Q.values, beta, g, "lower")
    phi_vals = small_batch.b_tail
    inp = float(np.sum(np.mean(phi_vals**2, axis=0)[: g.steps] * g.dt))
    assert out <= INPUT_BOUND_L * inp


def test_certificate_and_validation(small_batch):
    with pytest.raises(CertificateError):
        FdsvieDriver(b=lambda t, s, p, q, th: 10.0 * p, c=1.0, horizon=1.0)
    with pytest.raises(InvalidArgumentError):
        FdsvieDriver(alpha=0.5, horizon=1.0)
    d = FdsvieDriver(
        sigma=lambda t, s, p, q, th: np.cos(p), alpha=0.1, horizon=1.0, check_certificate=False
    )
    assert d.certificate == "waived"
    with pytest.raises(InvalidArgumentError):
        InitialTerm()
    with pytest.raises(NonConvergenceError):
        drv = FdsvieDriver(b=lambda t, s, p, q, th: p, c=1.0, horizon=1.0)
        solve_fdsvie(InitialTerm.constant(1.0), drv, small_batch, max_iter=1)
