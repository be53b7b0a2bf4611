from __future__ import annotations

import math

import numpy as np
import pytest

from dsvie.backward import BdsvieDriver, FreeTerm
from dsvie.errors import (
    HypothesisViolationError,
    InvalidArgumentError,
    SchemeFailureError,
    TruncationError,
)
from dsvie.ordering import (
    JointLipschitzApprox,
    compare_solutions,
    inf_convolution,
    solve_continuous_minimal,
)


def brute_force_envelope(f, n, x, lo=-50.0, hi=50.0, count=2_000_001):
    """Independent oracle: dense-grid minimization of f(y) + n|x - y|."""
    ys = np.linspace(lo, hi, count)
    return float(np.min(f(ys) + n * np.abs(x - ys)))


class TestInfConvolution:
    def test_rejects_n_below_growth(self):
        with pytest.raises(InvalidArgumentError):
            inf_convolution(lambda x: 2 * np.abs(x), 1, 2.0, 5.0, 0.01)

    def test_constant_function(self):
        fn = inf_convolution(lambda x: 0.0 * x + 3.0, 5, 3.0, 8.0, 0.01)
        xs = np.linspace(-1, 1, 41)
        assert np.allclose(fn(xs), 3.0)

    def test_one_lipschitz_already(self):
        # f(x) = |x| is 1-Lipschitz, so the n=2 envelope reproduces it
        fn = inf_convolution(lambda x: np.abs(x), 2, 1.0, 10.0, 0.01)
        xs = np.linspace(-2, 2, 201)
        assert np.max(np.abs(fn(xs) - np.abs(xs))) <= 2 * 0.01

    def test_two_lipschitz_at_growth_index(self):
        h = 0.01
        fn = inf_convolution(lambda x: 2 * np.abs(x), 2, 2.0, 6.0, h)
        xs = np.linspace(-2, 2, 201)
        assert np.max(np.abs(fn(xs) - 2 * np.abs(xs))) <= 2 * h
        got = fn(np.array([1.0]))[0]
        assert abs(got - brute_force_envelope(lambda y: 2 * np.abs(y), 2, 1.0)) <= 2 * h

    def test_growth_monotone_lipschitz_properties(self):
        h = 0.01
        xs = np.linspace(-2, 2, 201)
        envelopes = {n: inf_convolution(lambda x: 2 * np.abs(x), n, 2.0, 25.0, h) for n in (2, 3, 4)}
        vals = {n: envelopes[n](xs) for n in (2, 3, 4)}
        for n in (2, 3, 4):
            assert np.all(np.abs(vals[n]) <= 2.0 * (1.0 + np.abs(xs)) + 1e-12)
        assert np.all(vals[2] <= vals[3] + 1e-12)
        assert np.all(vals[3] <= vals[4] + 1e-12)
        for n in (2, 3, 4):
            diffs = np.abs(vals[n][:, None] - vals[n][None, :])
            dist = np.abs(xs[:, None] - xs[None, :])
            assert np.all(diffs <= n * dist + 2 * n * h)

    def test_strong_convergence_sequence(self):
        # x_n -> x with f_n(x_n) -> f(x) for f = |x|; spacing tightened with n
        target = 1.0
        errs = []
        for n in (2, 4, 8, 16):
            fn = inf_convolution(lambda x: np.abs(x), n, 1.0, 40.0, 0.02 / n)
            xn = target + 1.0 / n
            errs.append(abs(fn(np.array([xn]))[0] - target))
        assert errs[-1] <= 0.1 and errs[-1] <= errs[0]

    def test_containment_radius_guard(self):
        fn = inf_convolution(lambda x: np.abs(x), 2, 1.0, 3.0, 0.01)
        with pytest.raises(TruncationError):
            fn(np.array([2.0]))  # needs R >= 2 + 2*1*3/(2-1) = 8

    def test_boundary_minimizer_guard(self):
        # an understated growth constant lets f outrun the n|.| cone; the
        # minimizer lands on the grid edge and the guard catches it
        fn = inf_convolution(lambda x: -3.0 * np.abs(x), 2, 2.0, 4.0, 0.01)
        with pytest.raises(TruncationError):
            fn(np.array([0.5]))

    def test_csv_export(self, tmp_path):
        fn = inf_convolution(lambda x: np.abs(x), 2, 1.0, 12.0, 0.05)
        out = tmp_path / "table.csv"
        fn.to_csv(out, xs=np.linspace(-1, 1, 11))
        lines = out.read_text().splitlines()
        assert lines[0] == "x,f,f_n"
        assert len(lines) == 12


class TestJointEnvelope:
    def test_matches_brute_force_on_separable_source(self):
        f = lambda y, z: np.minimum(np.sqrt(np.abs(y)), 1 + np.abs(y)) + 0.0 * z  # noqa: E731
        env = JointLipschitzApprox(f, 2, 1.0, 4.0, 0.02)
        assert env(0.0, 0.0) == 0.0
        brute = brute_force_envelope(
            lambda y: np.minimum(np.sqrt(np.abs(y)), 1 + np.abs(y)), 2, 1.0
        )
        assert abs(float(env(1.0, 0.0)) - brute) <= 2 * 2 * 0.02

    def test_l1_coupling(self):
        # source |y| + |z| is 1-Lipschitz in the l1 metric: envelope is exact
        env = JointLipschitzApprox(lambda y, z: np.abs(y) + np.abs(z), 2, 1.0, 4.0, 0.05)
        ys = np.linspace(-1, 1, 21)
        assert np.allclose(env(ys, ys), 2 * np.abs(ys), atol=0.2 + 1e-12)

    def test_query_outside_grid(self):
        env = JointLipschitzApprox(lambda y, z: 0.0 * y, 2, 0.0, 1.0, 0.1)
        with pytest.raises(TruncationError):
            env(5.0, 0.0)


class TestCompare:
    def test_unit_shift_orders_solutions(self, small_batch):
        d1 = BdsvieDriver(
            f=lambda t, s, y, z, zeta: 1.0, c=1e-12, horizon=1.0,
            depends_on_y=False, depends_on_zeta=False,
        )
        d2 = BdsvieDriver(horizon=1.0, depends_on_y=False, depends_on_zeta=False)
        rep = compare_solutions(0.0, d1, 0.0, d2, small_batch)
        assert rep.violation_fraction == 0.0
        diff = (rep.Y1.values - rep.Y2.values).mean(axis=0)
        assert np.max(np.abs(diff - (1.0 - small_batch.grid.nodes))) < 1e-5

    def test_identical_inputs_no_violations_at_scaled_tolerance(self, small_batch):
        d = BdsvieDriver(horizon=1.0, depends_on_y=False, depends_on_zeta=False)
        psi = FreeTerm(lambda t, wT, w, b: wT)
        rep = compare_solutions(
            psi, d, psi, d, small_batch, tolerance=3 * 5.0 / math.sqrt(small_batch.paths)
        )
        assert rep.violation_fraction == 0.0

    def test_free_term_hypothesis_probed(self, small_batch):
        d = BdsvieDriver(horizon=1.0, depends_on_y=False, depends_on_zeta=False)
        with pytest.raises(HypothesisViolationError):
            compare_solutions(
                0.0, d, FreeTerm(lambda t, wT, w, b: np.abs(wT)), d, small_batch
            )

    def test_driver_ordering_probed(self, small_batch):
        d_low = BdsvieDriver(
            f=lambda t, s, y, z, zeta: -1.0, c=1e-12, horizon=1.0,
            depends_on_y=False, depends_on_zeta=False,
        )
        d_high = BdsvieDriver(
            f=lambda t, s, y, z, zeta: 1.0, c=1e-12, horizon=1.0,
            depends_on_y=False, depends_on_zeta=False,
        )
        with pytest.raises(HypothesisViolationError):
            compare_solutions(0.0, d_low, 0.0, d_high, small_batch)

    def test_common_g_required(self, small_batch):
        d1 = BdsvieDriver(
            g=lambda t, s, y, z, zeta: 0.1 * np.sin(z), alpha=0.02, horizon=1.0,
            depends_on_zeta=False,
        )
        d2 = BdsvieDriver(horizon=1.0, depends_on_y=False, depends_on_zeta=False)
        with pytest.raises(HypothesisViolationError):
            compare_solutions(0.0, d1, 0.0, d2, small_batch)

    def test_zeta_dependence_rejected(self, small_batch):
        d = BdsvieDriver(
            f=lambda t, s, y, z, zeta: 0.1 * zeta, c=0.01, horizon=1.0, depends_on_zeta=True
        )
        with pytest.raises(HypothesisViolationError):
            compare_solutions(0.0, d, 0.0, d, small_batch)


class TestMinimalSolution:
    def test_sqrt_case_pins_zero(self, small_batch):
        f = lambda y, z: np.minimum(np.sqrt(np.abs(y)), 1.0 + np.abs(y)) + 0.0 * z  # noqa: E731
        res = solve_continuous_minimal(0.0, f, small_batch, M_growth=1.0, n_max=3)
        for Y in res.Y_sequence:
            assert np.max(np.abs(Y.values)) <= 0.02
        assert res.max_step_violation <= res.noise_tolerance
        assert res.max_upper_violation <= res.noise_tolerance
        # majorant tracks e^{T-t} - 1 plus rectified integrand noise
        assert 1.5 <= res.upper.values[:, 0].mean() <= 2.3

    def test_lipschitz_source_reproduces_fixed_point(self, small_batch):
        # f(y) = y is 1-Lipschitz: every envelope equals f and the scheme
        # lands on the exponential fixed point
        f = lambda y, z: np.asarray(y) + 0.0 * np.asarray(z)  # noqa: E731
        res = solve_continuous_minimal(
            FreeTerm.constant(1.0), f, small_batch, M_growth=1.0, n_max=2
        )
        for Y in res.Y_sequence:
            assert abs(Y.values[:, 0].mean() - math.e) <= 0.05 * math.e
        assert res.cauchy_tail <= 1e-4

    def test_scheme_failure_diagnostics(self, small_batch):
        f = lambda y, z: 0.0 * np.asarray(y)  # noqa: E731
        with pytest.raises(SchemeFailureError) as err:
            solve_continuous_minimal(
                FreeTerm(lambda t, wT, w, b: wT), f, small_batch,
                M_growth=1.0, n_max=2, noise_tolerance=-1.0,
            )
        assert "noise_tolerance" in err.value.diagnostics
