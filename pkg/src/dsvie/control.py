"""Linear duality, cost functionals, adjoint systems, maximum principle.

One-dimensional throughout. The duality harness solves a linear forward
equation and its adjoint linear backward equation on the same batch and
compares the two pairings E int psi P dt and E int phi Y dt; the identity
itself is the oracle. The control harness evaluates Lagrange costs along
forward states, assembles the two-equation adjoint system along a given
control, checks the variational inequality

    [Y0(t) + h_u(t, P(t), u(t))] (v - u(t)) >= 0   for all v in U,

and cross-checks the adjoint pairing against one-sided difference
quotients of the cost. A projection fixed-point runner couples the state,
the adjoint and the pointwise control update; its convergence carries no
guarantee, so it stops on stall and reports instead of raising.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .backward import (
    BdsvieDriver,
    DiagonalProcess,
    FreeTerm,
    IndexedField,
    TwoParameterField,
    extend_m_solution,
    picard_solve,
    solve_simple,
)
from .errors import InvalidArgumentError
from .forward import FdsvieDriver, InitialTerm, solve_fdsvie
from .grid import ScenarioBatch
from .regression import DEFAULT_BASIS, ProjectionStack, RegressionBasis

_PROBE_SEED = 20240520


def _coef_eval(a):
    """Normalize an A-coefficient to a broadcasting callable (t, s) -> values."""
    if a is None:
        return None
    if callable(a):
        return a
    val = float(a)
    if val == 0.0:
        return None
    return lambda t, s: val + 0.0 * np.asarray(t) + 0.0 * np.asarray(s)


def _coef_bound(a, horizon: float, n_probes: int = 64) -> float:
    """Max |A(t, s)| over a deterministic probe lattice of [0, T]^2."""
    if a is None:
        return 0.0
    ts = np.linspace(0.0, horizon, n_probes)
    worst = 0.0
    for s in ts:
        worst = max(worst, float(np.max(np.abs(np.asarray(a(ts, float(s)), dtype=float)))))
    return worst


@dataclass
class LinearDualData:
    """Coefficients of the paired linear forward/backward equations.

    A1, A2 multiply the ds terms, A3, A4 the dW terms of the forward
    equation; the backward equation reuses them with swapped time
    arguments. Each is a constant, a callable (t, s) -> values, or None.
    """

    A1: object = None
    A2: object = None
    A3: object = None
    A4: object = None
    phi: InitialTerm = None
    psi: FreeTerm = None

    def __post_init__(self):
        if self.phi is None or self.psi is None:
            raise InvalidArgumentError("both phi and psi are required")


@dataclass
class DualityGapResult:
    lhs: float
    rhs: float
    gap: float
    stderr_lhs: float
    stderr_rhs: float
    forward_report: object
    backward_report: object

    def as_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "gap": self.gap,
            "stderr_lhs": self.stderr_lhs,
            "stderr_rhs": self.stderr_rhs,
        }


def _time_pairing(weight_vals, proc_vals, grid):
    """Per-path left-Riemann integral of weight * process over [0, T]."""
    N = grid.steps
    per_path = np.sum(weight_vals[:, :N] * proc_vals[:, :N] * grid.dt[None, :], axis=1)
    mean = float(np.mean(per_path))
    stderr = float(np.std(per_path, ddof=1) / math.sqrt(per_path.size)) if per_path.size > 1 else 0.0
    return mean, stderr


def duality_gap(
    data: LinearDualData,
    batch: ScenarioBatch,
    basis: RegressionBasis = DEFAULT_BASIS,
    tol: float = 1e-3,
    max_iter: int = 30,
) -> DualityGapResult:
    """Monte Carlo estimate of both sides of the linear duality identity.

    Solves the forward equation (initial term -phi, coefficients A1..A4,
    dB~ sign +1) and the backward adjoint (free term -psi, swapped time
    arguments) on the same batch, then returns E int psi P dt, E int phi Y
    dt, their standard errors and the absolute gap.
    """
    a1, a2, a3, a4 = (_coef_eval(a) for a in (data.A1, data.A2, data.A3, data.A4))
    T = batch.grid.horizon
    m1, m2, m3, m4 = (
        _coef_bound(a, T) for a in (a1, a2, a3, a4)
    )
    c_est = 2.0 * (m1 * m1 + m2 * m2)
    alpha_est = 2.0 * (m3 * m3 + m4 * m4)
    if alpha_est >= 1.0 / (T + 2.0):
        raise InvalidArgumentError(
            "dW coefficients too large: estimated alpha "
            f"{alpha_est:.4g} >= 1/(T+2) = {1.0/(T+2.0):.4g}"
        )

    def fwd_b(t, s, p, q, theta):
        out = 0.0
        if a1 is not None:
            out = out + a1(t, s) * p
        if a2 is not None:
            out = out + a2(t, s) * theta
        return out

    def fwd_sigma(t, s, p, q, theta):
        out = 0.0
        if a3 is not None:
            out = out + a3(t, s) * p
        if a4 is not None:
            out = out + a4(t, s) * theta
        return out

    phi_vals = data.phi.evaluate(batch)
    fwd_driver = FdsvieDriver(
        b=fwd_b if (a1 or a2) else None,
        sigma=fwd_sigma if (a3 or a4) else None,
        c=c_est,
        alpha=alpha_est,
        horizon=T,
        check_certificate=False,
        label="linear forward",
    )
    stack = ProjectionStack(batch, basis)
    P, Q, fwd_report = solve_fdsvie(
        InitialTerm.from_values(-phi_vals),
        fwd_driver,
        batch,
        basis,
        tol=tol,
        max_iter=max_iter,
        backward_sign=+1,
        stack=stack,
    )

    # adjoint equation: time arguments swapped, ds term A1 y + A3 zeta,
    # dB~ term A2 y + A4 zeta
    def bwd_f(t, s, y, z, zeta):
        out = 0.0
        if a1 is not None:
            out = out + a1(s, t) * y
        if a3 is not None:
            out = out + a3(s, t) * zeta
        return out

    def bwd_g(t, s, y, z, zeta):
        out = 0.0
        if a2 is not None:
            out = out + a2(s, t) * y
        if a4 is not None:
            out = out + a4(s, t) * zeta
        return out

    psi_vals = data.psi.evaluate(batch)
    bwd_driver = BdsvieDriver(
        f=bwd_f if (a1 or a3) else None,
        g=bwd_g if (a2 or a4) else None,
        c=c_est,
        alpha=alpha_est,
        horizon=T,
        depends_on_zeta=bool(a3 or a4),
        check_certificate=False,
        label="linear adjoint",
    )
    Y, Z, bwd_report = picard_solve(
        -psi_vals, bwd_driver, batch, basis, tol=tol, max_iter=max_iter, stack=stack
    )

    lhs, se_l = _time_pairing(psi_vals, P.values, batch.grid)
    rhs, se_r = _time_pairing(phi_vals, Y.values, batch.grid)
    return DualityGapResult(
        lhs=lhs,
        rhs=rhs,
        gap=abs(lhs - rhs),
        stderr_lhs=se_l,
        stderr_rhs=se_r,
        forward_report=fwd_report,
        backward_report=bwd_report,
    )


def _central_fd(fn, arg_index: int, step_scale: float):
    """Central difference in one argument, step 1e-5-scaled by magnitude."""

    def deriv(*args):
        args = [np.asarray(a, dtype=float) for a in args]
        x = args[arg_index]
        delta = step_scale * (1.0 + np.abs(x))
        hi = list(args)
        lo = list(args)
        hi[arg_index] = x + delta
        lo[arg_index] = x - delta
        return (np.asarray(fn(*hi), dtype=float) - np.asarray(fn(*lo), dtype=float)) / (2.0 * delta)

    return deriv


# argument slots: b(t, s, p, q, u), h(t, p, u)
_B_SLOTS = {"p": 2, "q": 3, "u": 4}
_H_SLOTS = {"p": 1, "u": 2}


class ControlProblem:
    """State coefficients, running cost and control set of one problem.

    b, sigma: callables (t, s, p, q, u) with q the mirrored integrand slot
    of the state equation; h: callable (t, p, u). Derivatives are given in
    the derivatives mapping (keys like "b_p", "sigma_u", "h_p") as
    callables with the parent signature, or left out to fall back to
    central differences with step 1e-5 * (1 + |argument|). Supplied
    derivatives are spot-checked against central differences on 100 probe
    points at construction.
    """

    def __init__(
        self,
        b,
        sigma,
        h,
        phi: InitialTerm,
        control_bounds,
        derivatives: dict | None = None,
        fd_step: float = 1e-5,
        label: str = "",
    ):
        lo, hi = float(control_bounds[0]), float(control_bounds[1])
        if not lo < hi:
            raise InvalidArgumentError("control bounds must satisfy lo < hi")
        self.b = b if b is not None else (lambda t, s, p, q, u: 0.0 * np.asarray(p))
        self.sigma = sigma if sigma is not None else (lambda t, s, p, q, u: 0.0 * np.asarray(p))
        self.h = h if h is not None else (lambda t, p, u: 0.0 * np.asarray(p))
        self.phi = phi
        self.u_lo, self.u_hi = lo, hi
        self.fd_step = float(fd_step)
        self.label = label
        self._derivs = dict(derivatives or {})
        self._check_supplied_derivatives()

    def deriv(self, of: str, wrt: str):
        """Derivative callable of "b", "sigma" or "h" with respect to p/q/u."""
        key = f"{of}_{wrt}"
        if key in self._derivs:
            return self._derivs[key]
        parent = getattr(self, of)
        slots = _H_SLOTS if of == "h" else _B_SLOTS
        if wrt not in slots:
            raise InvalidArgumentError(f"no argument slot {wrt!r} on {of}")
        return _central_fd(parent, slots[wrt], self.fd_step)

    def _check_supplied_derivatives(self, n_probes: int = 100) -> None:
        if not self._derivs:
            return
        rng = np.random.default_rng(_PROBE_SEED)
        for key, fn in self._derivs.items():
            of, wrt = key.split("_")
            parent = getattr(self, of)
            slots = _H_SLOTS if of == "h" else _B_SLOTS
            fd = _central_fd(parent, slots[wrt], self.fd_step)
            for _ in range(n_probes):
                if of == "h":
                    args = (
                        rng.uniform(0.0, 1.0),
                        rng.normal(0.0, 2.0),
                        rng.uniform(self.u_lo, self.u_hi),
                    )
                else:
                    u = np.sort(rng.uniform(0.0, 1.0, size=2))
                    args = (
                        float(u[1]),
                        float(u[0]),
                        rng.normal(0.0, 2.0),
                        rng.normal(0.0, 2.0),
                        rng.uniform(self.u_lo, self.u_hi),
                    )
                got = float(np.asarray(fn(*args)))
                ref = float(np.asarray(fd(*args)))
                if abs(got - ref) > 1e-4 * (1.0 + abs(got)):
                    raise InvalidArgumentError(
                        f"supplied derivative {key} disagrees with central differences "
                        f"at {args}: {got:.6g} vs {ref:.6g}"
                    )

    def clamp(self, u):
        return np.clip(u, self.u_lo, self.u_hi)

    def check_control(self, u_vals: np.ndarray) -> None:
        bad = (u_vals < self.u_lo) | (u_vals > self.u_hi)
        if np.any(bad):
            path, node = map(int, np.argwhere(bad)[0])
            raise InvalidArgumentError(
                f"control leaves [{self.u_lo}, {self.u_hi}] first at (path={path}, node={node}): "
                f"{u_vals[path, node]!r}"
            )

    def _estimate_state_constants(self, n_probes: int = 200):
        """Probe bounds on the p/q derivatives for the state driver constants."""
        rng = np.random.default_rng(_PROBE_SEED + 1)
        b_p, b_q = self.deriv("b", "p"), self.deriv("b", "q")
        s_p, s_q = self.deriv("sigma", "p"), self.deriv("sigma", "q")
        m_bp = m_bq = m_sp = m_sq = 0.0
        for _ in range(n_probes):
            u = np.sort(rng.uniform(0.0, 1.0, size=2))
            args = (
                float(u[1]),
                float(u[0]),
                rng.normal(0.0, 2.0),
                rng.normal(0.0, 2.0),
                rng.uniform(self.u_lo, self.u_hi),
            )
            m_bp = max(m_bp, abs(float(np.asarray(b_p(*args)))))
            m_bq = max(m_bq, abs(float(np.asarray(b_q(*args)))))
            m_sp = max(m_sp, abs(float(np.asarray(s_p(*args)))))
            m_sq = max(m_sq, abs(float(np.asarray(s_q(*args)))))
        return 2.0 * (m_bp**2 + m_bq**2), 2.0 * (m_sp**2 + m_sq**2)


@dataclass
class CostResult:
    value: float
    stderr: float
    P: DiagonalProcess
    Q: TwoParameterField
    report: object


def _control_values(u, batch: ScenarioBatch) -> np.ndarray:
    if isinstance(u, DiagonalProcess):
        return u.values
    arr = np.asarray(u, dtype=float)
    n = batch.grid.steps + 1
    if arr.ndim == 0:
        return np.full((batch.paths, n), float(arr))
    if arr.ndim == 1 and arr.shape == (n,):
        return np.broadcast_to(arr, (batch.paths, n)).copy()
    if arr.shape == (batch.paths, n):
        return arr
    raise InvalidArgumentError("control must be scalar, per-node, or per-path-per-node")


def solve_state(
    problem: ControlProblem,
    u,
    batch: ScenarioBatch,
    basis: RegressionBasis = DEFAULT_BASIS,
    tol: float = 1e-3,
    max_iter: int = 30,
    stack: ProjectionStack | None = None,
):
    """Solve the controlled forward state equation (dB~ sign +1) under u."""
    u_vals = _control_values(u, batch)
    problem.check_control(u_vals)
    c_est, alpha_est = problem._estimate_state_constants()
    T = batch.grid.horizon
    if alpha_est >= 1.0 / (T + 2.0):
        raise InvalidArgumentError(
            f"state dW coefficient too steep: estimated alpha {alpha_est:.4g} >= 1/(T+2)"
        )

    def b_wrap(t, s, p, q, theta, i=None, j=None):
        return problem.b(t, s, p, theta, u_vals[:, j : j + 1])

    def sigma_wrap(t, s, p, q, theta, i=None, j=None):
        return problem.sigma(t, s, p, theta, u_vals[:, j : j + 1])

    driver = FdsvieDriver(
        b=b_wrap,
        sigma=sigma_wrap,
        c=c_est,
        alpha=alpha_est,
        horizon=T,
        check_certificate=False,
        label=f"state[{problem.label}]",
    )
    return solve_fdsvie(
        problem.phi,
        driver,
        batch,
        basis,
        tol=tol,
        max_iter=max_iter,
        backward_sign=+1,
        stack=stack,
    )


def _cost_from_state(problem, u_vals, P_vals, grid):
    nodes, dt, N = grid.nodes, grid.dt, grid.steps
    h_vals = np.asarray(
        problem.h(nodes[None, :N], P_vals[:, :N], u_vals[:, :N]), dtype=float
    )
    h_vals = np.broadcast_to(h_vals, (P_vals.shape[0], N))
    per_path = np.sum(h_vals * dt[None, :], axis=1)
    mean = float(np.mean(per_path))
    stderr = float(np.std(per_path, ddof=1) / math.sqrt(per_path.size)) if per_path.size > 1 else 0.0
    return mean, stderr


def cost_functional(
    problem: ControlProblem,
    u,
    batch: ScenarioBatch,
    basis: RegressionBasis = DEFAULT_BASIS,
    tol: float = 1e-3,
    max_iter: int = 30,
    stack: ProjectionStack | None = None,
) -> CostResult:
    """Lagrange cost E int h(t, P(t), u(t)) dt under the state dynamics."""
    u_vals = _control_values(u, batch)
    P, Q, report = solve_state(problem, u_vals, batch, basis, tol, max_iter, stack=stack)
    value, stderr = _cost_from_state(problem, u_vals, P.values, batch.grid)
    return CostResult(value=value, stderr=stderr, P=P, Q=Q, report=report)


@dataclass
class AdjointSystem:
    """Adjoint pair along a fixed control-state trajectory.

    y_driver/y_free_term define the multiplier equation; y0_field(Y, Z)
    yields the given-coefficient field of the second (driverless) equation
    once the multiplier is known.
    """

    y_driver: BdsvieDriver
    y_free_term: FreeTerm
    y0_field: object
    constants: dict


def build_adjoint(
    problem: ControlProblem,
    u_bar,
    P_bar: DiagonalProcess,
    Q_bar: TwoParameterField,
    batch: ScenarioBatch,
) -> AdjointSystem:
    """Assemble the two adjoint equations along (P_bar, Q_bar, u_bar).

    Coefficients are the state derivatives at swapped time arguments with
    the trajectory frozen at the outer time: for outer node i and inner
    node j, b_p(t_j, t_i, P(t_i), Q(t_i, t_j), u(t_i)) and likewise for
    sigma; the ds coefficients pair with y, the dB~ coefficients with the
    mirrored integrand slot, and the control derivatives build the second
    equation's field.
    """
    u_vals = _control_values(u_bar, batch)
    nodes = batch.grid.nodes
    T = batch.grid.horizon
    b_p, b_q, b_u = (problem.deriv("b", w) for w in ("p", "q", "u"))
    s_p, s_q, s_u = (problem.deriv("sigma", w) for w in ("p", "q", "u"))
    h_p = problem.deriv("h", "p")

    Pv, Qv = P_bar.values, Q_bar.values

    def coef_args(i_arr, j):
        return (nodes[j], nodes[i_arr], Pv[:, i_arr], Qv[:, i_arr, j], u_vals[:, i_arr])

    def f_y(t, s, y, z, zeta, i=None, j=None):
        a = coef_args(i, j)
        return np.asarray(b_p(*a), dtype=float) * y + np.asarray(s_p(*a), dtype=float) * zeta

    def g_y(t, s, y, z, zeta, i=None, j=None):
        a = coef_args(i, j)
        return np.asarray(b_q(*a), dtype=float) * y + np.asarray(s_q(*a), dtype=float) * zeta

    # driver constants from probe bounds along the trajectory's ranges
    rng = np.random.default_rng(_PROBE_SEED + 2)
    m_bp = m_bq = m_sp = m_sq = 0.0
    p_scale = float(np.max(np.abs(Pv))) + 1.0
    q_scale = float(np.max(np.abs(Qv))) + 1.0
    for _ in range(200):
        u2 = np.sort(rng.uniform(0.0, T, size=2))
        args = (
            float(u2[1]),
            float(u2[0]),
            rng.uniform(-p_scale, p_scale),
            rng.uniform(-q_scale, q_scale),
            rng.uniform(problem.u_lo, problem.u_hi),
        )
        m_bp = max(m_bp, abs(float(np.asarray(b_p(*args)))))
        m_bq = max(m_bq, abs(float(np.asarray(b_q(*args)))))
        m_sp = max(m_sp, abs(float(np.asarray(s_p(*args)))))
        m_sq = max(m_sq, abs(float(np.asarray(s_q(*args)))))
    c_est = 2.0 * (m_bp**2 + m_sp**2)
    alpha_est = 2.0 * (m_bq**2 + m_sq**2)
    if alpha_est >= 1.0 / (T + 2.0):
        raise InvalidArgumentError(
            f"adjoint dB~ coefficients too steep: estimated alpha {alpha_est:.4g} >= 1/(T+2)"
        )

    y_driver = BdsvieDriver(
        f=f_y,
        g=g_y,
        c=c_est,
        alpha=alpha_est,
        horizon=T,
        depends_on_zeta=True,
        check_certificate=False,  # affine in (y, zeta); constants probed above
        label=f"adjoint[{problem.label}]",
    )
    h_p_vals = np.broadcast_to(
        np.asarray(h_p(nodes[None, :], Pv, u_vals), dtype=float), Pv.shape
    )
    y_free_term = FreeTerm.from_values(np.array(h_p_vals))

    def y0_field(Y: DiagonalProcess, Z: TwoParameterField) -> IndexedField:
        Yv, Zv = Y.values, Z.values

        def fn(i_arr, j):
            a = coef_args(i_arr, j)
            return (
                np.asarray(b_u(*a), dtype=float) * Yv[:, j : j + 1]
                + np.asarray(s_u(*a), dtype=float) * Zv[:, j, i_arr]
            )

        return IndexedField(fn)

    return AdjointSystem(
        y_driver=y_driver,
        y_free_term=y_free_term,
        y0_field=y0_field,
        constants={"c": c_est, "alpha": alpha_est},
    )


def hamiltonian(Y0_val, h_u_val, u):
    """-(Y0 + h_u) * u, elementwise."""
    return -(np.asarray(Y0_val, dtype=float) + np.asarray(h_u_val, dtype=float)) * np.asarray(
        u, dtype=float
    )


@dataclass
class MaxPrincipleReport:
    """Variational-inequality diagnostics along one control."""

    Y0: DiagonalProcess
    multiplier_Y: DiagonalProcess
    multiplier_Z: TwoParameterField
    bracket: np.ndarray
    v_grid: np.ndarray
    min_V: np.ndarray
    violation_fraction: float
    per_time_profile: np.ndarray
    tolerance: float
    V_at_ubar_max_abs: float
    gateaux: list
    cost: float
    cost_stderr: float
    reports: dict


def solve_adjoint(
    problem: ControlProblem,
    u_bar,
    P_bar: DiagonalProcess,
    Q_bar: TwoParameterField,
    batch: ScenarioBatch,
    basis: RegressionBasis = DEFAULT_BASIS,
    tol: float = 1e-3,
    max_iter: int = 30,
    stack: ProjectionStack | None = None,
):
    """Solve the adjoint pair; returns (Y, Z, Y0, Z0_full, reports dict)."""
    if stack is None:
        stack = ProjectionStack(batch, basis)
    adj = build_adjoint(problem, u_bar, P_bar, Q_bar, batch)
    Y, Z, y_report = picard_solve(
        adj.y_free_term, adj.y_driver, batch, basis, tol=tol, max_iter=max_iter, stack=stack
    )
    Y0, Z0 = solve_simple(0.0, adj.y0_field(Y, Z), None, batch, basis, stack=stack)
    Z0_full, z0_resid = extend_m_solution(Y0, Z0, 0, batch, basis, stack=stack)
    return Y, Z, Y0, Z0_full, {"multiplier": y_report, "y0_extension_residual": z0_resid}


def check_max_principle(
    problem: ControlProblem,
    u_bar,
    batch: ScenarioBatch,
    basis: RegressionBasis = DEFAULT_BASIS,
    v_grid_size: int = 21,
    tolerance: float | None = None,
    gateaux_eps: float = 0.05,
    probe_controls=None,
    tol: float = 1e-3,
    max_iter: int = 30,
) -> MaxPrincipleReport:
    """Evaluate the variational inequality and its difference-quotient check.

    Solves the state under u_bar, the adjoint pair along it, and scans
    V(t, v) = [Y0 + h_u](v - u_bar) over a uniform v grid; reports the
    fraction of (path, node) cells with min_v V below -tolerance (default
    5/sqrt(paths) + dt). The pairing E int [Y0 + h_u] (u - u_bar) dt is
    cross-checked against (J(u_bar + eps (u - u_bar)) - J(u_bar)) / eps
    for three probe directions (one-sided, so the perturbed control stays
    in U when u_bar touches a bound).
    """
    u_vals = _control_values(u_bar, batch)
    problem.check_control(u_vals)
    if tolerance is None:
        tolerance = 5.0 / math.sqrt(batch.paths) + float(np.max(batch.grid.dt))
    stack = ProjectionStack(batch, basis)
    P, Q, state_report = solve_state(problem, u_vals, batch, basis, tol, max_iter, stack=stack)
    Y, Z, Y0, Z0, adj_reports = solve_adjoint(
        problem, u_vals, P, Q, batch, basis, tol, max_iter, stack=stack
    )
    nodes = batch.grid.nodes
    h_u = problem.deriv("h", "u")
    bracket = Y0.values + np.broadcast_to(
        np.asarray(h_u(nodes[None, :], P.values, u_vals), dtype=float), P.values.shape
    )
    v_grid = np.linspace(problem.u_lo, problem.u_hi, int(v_grid_size))
    # V is linear in v: evaluate on the grid and track the minimum
    min_V = np.full(u_vals.shape, np.inf)
    for v in v_grid:
        np.minimum(min_V, bracket * (v - u_vals), out=min_V)
    viol = min_V < -tolerance
    v_at_ubar = bracket * (u_vals - u_vals)
    cost, cost_se = _cost_from_state(problem, u_vals, P.values, batch.grid)

    if probe_controls is None:
        ramp = problem.u_lo + (problem.u_hi - problem.u_lo) * nodes / batch.grid.horizon
        probe_controls = [problem.u_hi, problem.u_lo, ramp]
    gateaux = []
    dt = batch.grid.dt
    N = batch.grid.steps
    for probe in probe_controls[:3]:
        probe_vals = _control_values(probe, batch)
        d = probe_vals - u_vals
        u_eps = u_vals + gateaux_eps * d
        c_eps = cost_functional(problem, u_eps, batch, basis, tol, max_iter, stack=stack)
        lhs = (c_eps.value - cost) / gateaux_eps
        rhs = float(np.mean(np.sum(bracket[:, :N] * d[:, :N] * dt[None, :], axis=1)))
        gap = abs(lhs - rhs)
        gateaux.append(
            {
                "lhs": lhs,
                "rhs": rhs,
                "gap": gap,
                "relative_gap": gap / (abs(lhs) + abs(rhs) + 1e-12),
            }
        )

    return MaxPrincipleReport(
        Y0=Y0,
        multiplier_Y=Y,
        multiplier_Z=Z,
        bracket=bracket,
        v_grid=v_grid,
        min_V=min_V,
        violation_fraction=float(viol.mean()),
        per_time_profile=viol.mean(axis=0),
        tolerance=float(tolerance),
        V_at_ubar_max_abs=float(np.max(np.abs(v_at_ubar))),
        gateaux=gateaux,
        cost=cost,
        cost_stderr=cost_se,
        reports={"state": state_report, **adj_reports},
    )


@dataclass
class FbdsvieRunReport:
    control: DiagonalProcess
    iterations: int
    movement_history: list
    converged: bool
    stalled: bool
    wallclock: float
    details: dict


@dataclass
class FbdsvieSystem:
    """Coupled forward/adjoint system with a projection fixed-point runner.

    The runner alternates: state solve under the current control, adjoint
    pair, then a pointwise control update projecting the stationary point
    of v -> Y0 v + h(t, P, v) onto U (closed form when h_u is affine in
    the control, a v-grid scan otherwise). Convergence is not guaranteed;
    the loop stops on stall and reports rather than raising.
    """

    problem: ControlProblem

    def variational_residual(self, bracket: np.ndarray, u_vals: np.ndarray, grid) -> float:
        """Ensemble time-integral of |min(bracket*(v-u))| over the bounds."""
        lo_gap = bracket * (self.problem.u_lo - u_vals)
        hi_gap = bracket * (self.problem.u_hi - u_vals)
        worst = np.minimum(lo_gap, hi_gap)
        neg = np.minimum(worst, 0.0)
        N = grid.steps
        return float(np.mean(np.sum(neg[:, :N] ** 2 * grid.dt[None, :], axis=1)))

    def _update_control(self, bracket_free: np.ndarray, P_vals, u_vals, batch, v_grid_size):
        """Project the pointwise stationary control onto U.

        bracket_free is Y0; the update solves Y0 + h_u(t, P, v) = 0 in v
        when h_u is affine, else scans the v grid for the minimum of
        Y0 v + h(t, P, v).
        """
        problem = self.problem
        nodes = batch.grid.nodes[None, :]
        h_u = problem.deriv("h", "u")
        lo, hi = problem.u_lo, problem.u_hi
        hu_lo = np.broadcast_to(
            np.asarray(h_u(nodes, P_vals, np.full_like(P_vals, lo)), dtype=float), P_vals.shape
        )
        hu_hi = np.broadcast_to(
            np.asarray(h_u(nodes, P_vals, np.full_like(P_vals, hi)), dtype=float), P_vals.shape
        )
        slope = (hu_hi - hu_lo) / (hi - lo)
        affine = np.abs(slope) > 1e-12
        new_u = np.empty_like(u_vals)
        with np.errstate(divide="ignore", invalid="ignore"):
            stat = lo - (bracket_free + hu_lo) / slope
        new_u[affine] = stat[affine]
        if not np.all(affine):
            vs = np.linspace(lo, hi, int(v_grid_size))
            obj_best = np.full(P_vals.shape, np.inf)
            v_best = np.full(P_vals.shape, lo)
            for v in vs:
                obj = bracket_free * v + np.broadcast_to(
                    np.asarray(problem.h(nodes, P_vals, np.full_like(P_vals, v)), dtype=float),
                    P_vals.shape,
                )
                better = obj < obj_best
                obj_best = np.where(better, obj, obj_best)
                v_best = np.where(better, v, v_best)
            new_u[~affine] = v_best[~affine]
        return problem.clamp(new_u)

    def run(
        self,
        batch: ScenarioBatch,
        basis: RegressionBasis = DEFAULT_BASIS,
        u0=None,
        max_outer: int = 12,
        move_tol: float = 1e-4,
        v_grid_size: int = 41,
        tol: float = 1e-3,
        max_iter: int = 30,
    ) -> FbdsvieRunReport:
        t0 = time.perf_counter()
        problem = self.problem
        if u0 is None:
            u0 = min(max(0.0, problem.u_lo), problem.u_hi)
        u_vals = _control_values(u0, batch)
        problem.check_control(u_vals)
        stack = ProjectionStack(batch, basis)
        history: list[float] = []
        converged = False
        stalled = False
        it = 0
        scale = max(1.0, abs(problem.u_lo), abs(problem.u_hi)) ** 2 * batch.grid.horizon
        for it in range(1, max_outer + 1):
            P, Q, _ = solve_state(problem, u_vals, batch, basis, tol, max_iter, stack=stack)
            Y, Z, Y0, _, _ = solve_adjoint(
                problem, u_vals, P, Q, batch, basis, tol, max_iter, stack=stack
            )
            new_u = self._update_control(Y0.values, P.values, u_vals, batch, v_grid_size)
            N = batch.grid.steps
            movement = float(
                np.mean(
                    np.sum((new_u[:, :N] - u_vals[:, :N]) ** 2 * batch.grid.dt[None, :], axis=1)
                )
            )
            history.append(movement)
            u_vals = new_u
            if movement <= move_tol * scale:
                converged = True
                break
            if len(history) >= 3 and history[-1] >= 0.9 * history[-2] >= 0.81 * history[-3]:
                stalled = True
                break
        return FbdsvieRunReport(
            control=DiagonalProcess(batch, u_vals, label="u"),
            iterations=it,
            movement_history=history,
            converged=converged,
            stalled=stalled,
            wallclock=time.perf_counter() - t0,
            details={"move_tol": move_tol, "scale": scale},
        )


def assemble_fbdsvie(problem: ControlProblem) -> FbdsvieSystem:
    """Bundle the coupled state/adjoint/variational system with its runner."""
    return FbdsvieSystem(problem=problem)
