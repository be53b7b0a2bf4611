"""Registry of named experiment problems with built-in oracle checks.

Every problem knows how to run itself on a (batch, basis) pair and
returns a summary, a plot-ready time series (mean, stderr, analytic
reference when one exists) and a list of pass/fail checks against its
oracle. Tolerances are per-problem defaults, overridable from the
experiment config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .backward import (
    BdsvieDriver,
    FreeTerm,
    TwoParameterField,
    check_m_relation,
    extend_m_solution,
    picard_solve,
    solve_simple,
)
from .control import (
    ControlProblem,
    LinearDualData,
    assemble_fbdsvie,
    check_max_principle,
    duality_gap,
)
from .errors import InvalidArgumentError
from .forward import FdsvieDriver, InitialTerm, check_backward_m_relation, solve_fdsvie
from .ordering import compare_solutions, solve_continuous_minimal
from .regression import ProjectionStack


@dataclass
class CheckResult:
    name: str
    value: float
    bound: float
    op: str  # "<=" or ">="
    passed: bool

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "bound": self.bound,
            "op": self.op,
            "passed": self.passed,
        }


def _check(name, value, bound, op) -> CheckResult:
    value = float(value)
    bound = float(bound)
    ok = value <= bound if op == "<=" else value >= bound
    return CheckResult(name=name, value=value, bound=bound, op=op, passed=bool(ok))


@dataclass
class ExperimentOutput:
    summary: dict
    series: dict
    checks: list
    convergence: list | None = None
    fields: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CorpusProblem:
    name: str
    kind: str
    oracle: str
    runner: object
    defaults: dict = field(default_factory=dict)

    def run(self, batch, basis, solver: dict, tolerances: dict, params: dict | None = None) -> ExperimentOutput:
        tols = dict(self.defaults)
        tols.update(tolerances or {})
        return self.runner(batch, basis, solver or {}, tols, params or {})


def _series(grid, values, analytic=None, label="mean Y(t)"):
    mean = values.mean(axis=0)
    stderr = values.std(axis=0, ddof=1) / math.sqrt(values.shape[0])
    out = {
        "t": grid.nodes.tolist(),
        "mean": mean.tolist(),
        "stderr": stderr.tolist(),
        "label": label,
    }
    if analytic is not None:
        out["analytic"] = np.asarray(analytic, dtype=float).tolist()
        out["abs_err"] = np.abs(mean - analytic).tolist()
    return out


def _upper_triangle_mean(field_values: np.ndarray) -> float:
    n = field_values.shape[1]
    iu = np.triu_indices(n)
    keep = iu[1] < n - 1  # exclude the structural-zero last column
    return float(field_values[:, iu[0][keep], iu[1][keep]].mean())


def _martingale_free_term(batch, basis, solver, tols, params):
    stack = ProjectionStack(batch, basis)
    psi = FreeTerm(lambda t, wT, w, b: wT, label="terminal W value")
    Y, Z = solve_simple(psi, None, None, batch, basis, stack=stack)
    rms = np.sqrt(np.mean((Y.values - batch.W1) ** 2, axis=0))
    z_mean = _upper_triangle_mean(Z.values)
    Z_full, resid = extend_m_solution(Y, Z, 0, batch, basis, stack=stack)
    zeroed = TwoParameterField(batch, np.zeros_like(Z_full.values), region="full")
    resid_neg = check_m_relation(Y, zeroed, 0, batch, basis, stack=stack)
    T = batch.grid.horizon
    checks = [
        _check("max_node_rms_vs_W", rms.max(), tols["rms_y"] * math.sqrt(T), "<="),
        _check("mean_Z_lower", z_mean, tols["z_mean_lo"], ">="),
        _check("mean_Z_upper", z_mean, tols["z_mean_hi"], "<="),
        _check("m_relation_residual", resid, tols["m_relation"], "<="),
        _check("m_relation_negative_control", resid_neg, tols["m_relation_negative"], ">="),
    ]
    summary = {
        "max_node_rms": float(rms.max()),
        "mean_Z_on_triangle": z_mean,
        "m_relation_residual": float(resid),
        "m_relation_negative_control": float(resid_neg),
    }
    return ExperimentOutput(
        summary=summary,
        series=_series(batch.grid, Y.values, analytic=np.zeros_like(batch.grid.nodes)),
        checks=checks,
        fields={"Z": Z_full.values},
    )


def _backward_noise(batch, basis, solver, tols, params):
    Y, Z = solve_simple(0.0, None, lambda t, s: 1.0, batch, basis)
    rms = np.sqrt(np.mean((Y.values - batch.b_tail) ** 2, axis=0))
    checks = [_check("max_node_rms_vs_B_tail", rms.max(), tols["rms_y"], "<=")]
    return ExperimentOutput(
        summary={"max_node_rms": float(rms.max())},
        series=_series(batch.grid, Y.values, analytic=np.zeros_like(batch.grid.nodes)),
        checks=checks,
    )


def _deterministic_ramp(batch, basis, solver, tols, params):
    Y, Z = solve_simple(0.0, lambda t, s: 1.0, None, batch, basis)
    T = batch.grid.horizon
    exact = T - batch.grid.nodes
    err = float(np.abs(Y.values - exact).max())
    return ExperimentOutput(
        summary={"max_abs_err": err},
        series=_series(batch.grid, Y.values, analytic=exact),
        checks=[_check("max_abs_err", err, tols["abs_err"], "<=")],
    )


def _exp_ode(batch, basis, solver, tols, params):
    T = batch.grid.horizon
    driver = BdsvieDriver(
        f=lambda t, s, y, z, zeta: y,
        c=float(params.get("c", 1.0)),
        alpha=float(params.get("alpha", 0.05)),
        horizon=T,
        depends_on_zeta=False,
        label="linear growth in y",
    )
    Y, Z, report = picard_solve(
        FreeTerm.constant(1.0),
        driver,
        batch,
        basis,
        tol=solver.get("tol", 1e-3),
        max_iter=solver.get("max_iter", 30),
        beta=solver.get("beta", "auto"),
    )
    exact = np.exp(T - batch.grid.nodes)
    y0 = float(Y.values[:, 0].mean())
    err = abs(y0 - math.e)
    checks = [
        _check("abs_err_Y0_vs_e", err, tols["y0_rel"] * math.e, "<="),
        _check(
            "measured_contraction_ratio",
            report.measured_contraction_ratio,
            report.theoretical_delta + tols["ratio_slack"],
            "<=",
        ),
    ]
    summary = {"Y0": y0, "exact": math.e, **report.as_dict()}
    return ExperimentOutput(
        summary=summary,
        series=_series(batch.grid, Y.values, analytic=exact),
        checks=checks,
        convergence=list(report.residual_history),
    )


def _bw_noise_forward(batch, basis, solver, tols, params):
    stack = ProjectionStack(batch, basis)
    P, Q, report = solve_fdsvie(
        InitialTerm(lambda t, w, bt: bt, label="backward tail"),
        FdsvieDriver(horizon=batch.grid.horizon),
        batch,
        basis,
        tol=solver.get("tol", 1e-3),
        max_iter=solver.get("max_iter", 30),
        stack=stack,
    )
    rms = np.sqrt(np.mean((P.values - batch.b_tail) ** 2, axis=0))
    q_mean = _upper_triangle_mean(Q.values)
    resid = check_backward_m_relation(P, Q, batch.grid.steps, batch, basis, stack=stack)
    zeroed = TwoParameterField(batch, np.zeros_like(Q.values), region="full")
    resid_neg = check_backward_m_relation(P, zeroed, batch.grid.steps, batch, basis, stack=stack)
    checks = [
        _check("max_node_rms_vs_B_tail", rms.max(), tols["rms_p"], "<="),
        _check("mean_Q_lower", q_mean, tols["q_mean_lo"], ">="),
        _check("mean_Q_upper", q_mean, tols["q_mean_hi"], "<="),
        _check("backward_m_relation", resid, tols["m_relation"], "<="),
        _check("backward_m_relation_negative_control", resid_neg, tols["m_relation_negative"], ">="),
    ]
    summary = {
        "max_node_rms": float(rms.max()),
        "mean_Q_on_triangle": q_mean,
        "backward_m_relation": float(resid),
        **report.as_dict(),
    }
    return ExperimentOutput(
        summary=summary,
        series=_series(batch.grid, P.values, analytic=np.zeros_like(batch.grid.nodes), label="mean P(t)"),
        checks=checks,
        convergence=list(report.residual_history),
        fields={"Q": Q.values},
    )


def _compare_shift(batch, basis, solver, tols, params):
    T = batch.grid.horizon
    d1 = BdsvieDriver(
        f=lambda t, s, y, z, zeta: 1.0,
        c=1e-12,
        horizon=T,
        depends_on_y=False,
        depends_on_zeta=False,
        label="constant drift 1",
    )
    d2 = BdsvieDriver(horizon=T, depends_on_y=False, depends_on_zeta=False, label="zero")
    rep = compare_solutions(
        0.0, d1, 0.0, d2, batch, basis,
        tol=solver.get("tol", 1e-3), max_iter=solver.get("max_iter", 30),
    )
    diff = rep.Y1.values - rep.Y2.values
    exact = T - batch.grid.nodes
    checks = [_check("violation_fraction", rep.violation_fraction, tols["violations"], "<=")]
    summary = {
        "violation_fraction": rep.violation_fraction,
        "worst_violation": rep.worst_violation,
        "tolerance_used": rep.tolerance,
    }
    return ExperimentOutput(
        summary=summary,
        series=_series(batch.grid, diff, analytic=exact, label="mean Y1(t) - Y2(t)"),
        checks=checks,
    )


def _compare_abs_pair(batch, basis, solver, tols, params):
    T = batch.grid.horizon
    f_plus = lambda t, s, y, z, zeta: np.abs(y) + np.abs(z)  # noqa: E731
    f_minus = lambda t, s, y, z, zeta: -(np.abs(y) + np.abs(z))  # noqa: E731
    g_cos = lambda t, s, y, z, zeta: np.cos(z)  # noqa: E731
    mk = lambda f, name: BdsvieDriver(  # noqa: E731
        f=f, g=g_cos, c=2.0, alpha=min(0.3, 0.9 / (T + 2.0)), horizon=T,
        depends_on_zeta=False, check_certificate=False, label=name,
    )
    rep = compare_solutions(
        FreeTerm(lambda t, wT, w, b: np.abs(wT)),
        mk(f_plus, "absolute growth"),
        FreeTerm(lambda t, wT, w, b: -np.abs(wT)),
        mk(f_minus, "absolute decay"),
        batch,
        basis,
        tol=solver.get("tol", 1e-3),
        max_iter=solver.get("max_iter", 30),
    )
    diff = rep.Y1.values - rep.Y2.values
    checks = [_check("violation_fraction", rep.violation_fraction, tols["violations"], "<=")]
    summary = {
        "violation_fraction": rep.violation_fraction,
        "worst_violation": rep.worst_violation,
        "tolerance_used": rep.tolerance,
        "certificates": [r.certificate for r in rep.reports],
    }
    return ExperimentOutput(
        summary=summary,
        series=_series(batch.grid, diff, label="mean Y1(t) - Y2(t)"),
        checks=checks,
    )


def _sqrt_minimal(batch, basis, solver, tols, params):
    fsq = lambda y, z: np.minimum(np.sqrt(np.abs(y)), 1.0 + np.abs(y)) + 0.0 * z  # noqa: E731
    res = solve_continuous_minimal(
        0.0, fsq, batch, M_growth=1.0, n_max=int(params.get("n_max", 4)), basis=basis,
        tol=solver.get("tol", 1e-3), max_iter=solver.get("max_iter", 30),
    )
    worst = max(float(np.abs(y.values).max()) for y in res.Y_sequence)
    checks = [
        _check("max_abs_Yn", worst, tols["abs_y"], "<="),
        _check("max_step_violation", res.max_step_violation, res.noise_tolerance, "<="),
        _check("max_upper_violation", res.max_upper_violation, res.noise_tolerance, "<="),
    ]
    summary = {
        "indices": res.ns,
        "max_abs_Yn": worst,
        "cauchy_tail": res.cauchy_tail,
        "max_step_violation": res.max_step_violation,
        "max_upper_violation": res.max_upper_violation,
        "noise_tolerance": res.noise_tolerance,
        "upper_Y0_mean": float(res.upper.values[:, 0].mean()),
    }
    return ExperimentOutput(
        summary=summary,
        series=_series(batch.grid, res.minimal.values, analytic=np.zeros_like(batch.grid.nodes)),
        checks=checks,
    )


def _duality_zero(batch, basis, solver, tols, params):
    data = LinearDualData(phi=InitialTerm.constant(1.0), psi=FreeTerm.constant(1.0))
    res = duality_gap(data, batch, basis, tol=solver.get("tol", 1e-3), max_iter=solver.get("max_iter", 30))
    dt_max = float(np.max(batch.grid.dt))
    bound = tols["gap_abs"] + 2.0 * dt_max
    checks = [_check("duality_gap", res.gap, bound, "<=")]
    exact = -np.ones_like(batch.grid.nodes)
    summary = res.as_dict()
    return ExperimentOutput(
        summary=summary,
        series={
            "t": batch.grid.nodes.tolist(),
            "mean": exact.tolist(),
            "stderr": [0.0] * batch.grid.nodes.size,
            "analytic": exact.tolist(),
            "abs_err": [0.0] * batch.grid.nodes.size,
            "label": "pairing sides (deterministic)",
        },
        checks=checks,
    )


def _duality_drift(batch, basis, solver, tols, params):
    data = LinearDualData(A1=0.2, phi=InitialTerm.constant(1.0), psi=FreeTerm.constant(1.0))
    res = duality_gap(data, batch, basis, tol=solver.get("tol", 1e-3), max_iter=solver.get("max_iter", 30))
    bound = 3.0 * (res.stderr_lhs + res.stderr_rhs) + tols["gap_slack"]
    checks = [_check("duality_gap", res.gap, bound, "<=")]
    nodes = batch.grid.nodes
    exact = -np.exp(0.2 * nodes)
    return ExperimentOutput(
        summary=res.as_dict(),
        series={
            "t": nodes.tolist(),
            "mean": [res.lhs] * nodes.size,
            "stderr": [res.stderr_lhs] * nodes.size,
            "analytic": exact.tolist(),
            "abs_err": [float("nan")] * nodes.size,
            "label": "lhs pairing (flat) vs analytic P(t)",
        },
        checks=checks,
    )


def _lq_problem(batch) -> ControlProblem:
    return ControlProblem(
        b=lambda t, s, p, q, u: u + 0.0 * np.asarray(p),
        sigma=None,
        h=lambda t, p, u: np.asarray(u) ** 2 / 2.0 + np.asarray(p),
        phi=InitialTerm.constant(0.0),
        control_bounds=(-1.0, 1.0),
        derivatives={
            "b_p": lambda t, s, p, q, u: 0.0 * np.asarray(p),
            "b_q": lambda t, s, p, q, u: 0.0 * np.asarray(p),
            "b_u": lambda t, s, p, q, u: 1.0 + 0.0 * np.asarray(p),
            "h_p": lambda t, p, u: 1.0 + 0.0 * np.asarray(p),
            "h_u": lambda t, p, u: np.asarray(u) + 0.0 * np.asarray(p),
        },
        label="linear-quadratic",
    )


def _lq_control(batch, basis, solver, tols, params):
    T = batch.grid.horizon
    problem = _lq_problem(batch)
    u_bar = -(T - batch.grid.nodes)
    rep = check_max_principle(
        problem, u_bar, batch, basis,
        tol=solver.get("tol", 1e-3), max_iter=solver.get("max_iter", 30),
    )
    exact_J = -(T**3) / 6.0
    worst_abs_gap = max(g["gap"] for g in rep.gateaux)
    checks = [
        _check("abs_err_J", abs(rep.cost - exact_J), tols["j_abs"], "<="),
        _check("violation_fraction", rep.violation_fraction, tols["violations"], "<="),
        _check("gateaux_abs_gap", worst_abs_gap, tols["gateaux_abs"], "<="),
        _check("V_at_ubar", rep.V_at_ubar_max_abs, 0.0, "<="),
    ]
    nodes = batch.grid.nodes
    exact_P = -(nodes - nodes**2 / 2.0)
    summary = {
        "J": rep.cost,
        "J_stderr": rep.cost_stderr,
        "exact_J": exact_J,
        "violation_fraction": rep.violation_fraction,
        "tolerance_used": rep.tolerance,
        "V_at_ubar_max_abs": rep.V_at_ubar_max_abs,
        "gateaux": rep.gateaux,
    }
    return ExperimentOutput(
        summary=summary,
        series=_series(batch.grid, rep.Y0.values, analytic=T - nodes, label="mean Y0(t)"),
        checks=checks,
    )


def _lq_control_null(batch, basis, solver, tols, params):
    problem = _lq_problem(batch)
    rep = check_max_principle(
        problem, 0.0, batch, basis,
        tol=solver.get("tol", 1e-3), max_iter=solver.get("max_iter", 30),
    )
    worst_rel = max(g["relative_gap"] for g in rep.gateaux)
    checks = [
        _check("violation_fraction", rep.violation_fraction, tols["violations_min"], ">="),
        _check("gateaux_relative_gap", worst_rel, tols["gateaux_rel"], "<="),
    ]
    summary = {
        "J": rep.cost,
        "violation_fraction": rep.violation_fraction,
        "tolerance_used": rep.tolerance,
        "gateaux": rep.gateaux,
    }
    nodes = batch.grid.nodes
    return ExperimentOutput(
        summary=summary,
        series=_series(batch.grid, rep.Y0.values, analytic=batch.grid.horizon - nodes, label="mean Y0(t)"),
        checks=checks,
    )


def _lq_fbdsvie(batch, basis, solver, tols, params):
    T = batch.grid.horizon
    problem = _lq_problem(batch)
    runner = assemble_fbdsvie(problem)
    run = runner.run(
        batch, basis, u0=0.0,
        max_outer=int(solver.get("max_outer", 12)),
        tol=solver.get("tol", 1e-3), max_iter=solver.get("max_iter", 30),
    )
    nodes = batch.grid.nodes
    u_exact = -(T - nodes)
    N = batch.grid.steps
    l2 = float(
        np.sqrt(
            np.mean(
                np.sum(
                    (run.control.values[:, :N] - u_exact[None, :N]) ** 2
                    * batch.grid.dt[None, :],
                    axis=1,
                )
            )
        )
    )
    checks = [
        _check("control_l2_error", l2, tols["u_l2"], "<="),
        _check("converged", 1.0 if run.converged else 0.0, 1.0, ">="),
    ]
    summary = {
        "iterations": run.iterations,
        "movement_history": run.movement_history,
        "converged": run.converged,
        "stalled": run.stalled,
        "control_l2_error": l2,
    }
    return ExperimentOutput(
        summary=summary,
        series=_series(batch.grid, run.control.values, analytic=u_exact, label="mean u(t)"),
        checks=checks,
        convergence=run.movement_history,
    )


def _stall_control(batch, basis, solver, tols, params):
    problem = ControlProblem(
        b=lambda t, s, p, q, u: u + 0.0 * np.asarray(p),
        sigma=None,
        h=lambda t, p, u: np.asarray(u) + 0.0 * np.asarray(p),  # h_u constant: min sits outside U
        phi=InitialTerm.constant(0.0),
        control_bounds=(-1.0, 1.0),
        derivatives={
            "b_p": lambda t, s, p, q, u: 0.0 * np.asarray(p),
            "b_q": lambda t, s, p, q, u: 0.0 * np.asarray(p),
            "b_u": lambda t, s, p, q, u: 1.0 + 0.0 * np.asarray(p),
            "h_p": lambda t, p, u: 0.0 * np.asarray(p),
            "h_u": lambda t, p, u: 1.0 + 0.0 * np.asarray(p),
        },
        label="boundary stall",
    )
    runner = assemble_fbdsvie(problem)
    run = runner.run(
        batch, basis, u0=0.0,
        max_outer=int(solver.get("max_outer", 6)),
        tol=solver.get("tol", 1e-3), max_iter=solver.get("max_iter", 30),
    )
    at_boundary = float(np.mean(np.isclose(run.control.values, problem.u_lo)))
    final_move = run.movement_history[-1] if run.movement_history else float("nan")
    checks = [
        _check("boundary_fraction", at_boundary, tols["boundary_fraction"], ">="),
        _check("final_movement", final_move, tols["final_movement"], "<="),
    ]
    summary = {
        "iterations": run.iterations,
        "movement_history": run.movement_history,
        "converged": run.converged,
        "stalled": run.stalled,
        "boundary_fraction": at_boundary,
    }
    nodes = batch.grid.nodes
    return ExperimentOutput(
        summary=summary,
        series=_series(
            batch.grid, run.control.values,
            analytic=np.full_like(nodes, problem.u_lo), label="mean u(t)",
        ),
        checks=checks,
        convergence=run.movement_history,
    )


PROBLEMS: dict[str, CorpusProblem] = {
    p.name: p
    for p in [
        CorpusProblem(
            name="martingale-free-term",
            kind="simple",
            oracle="closed-form forward representation: Y(t) = W(t), Z = 1 on the triangle",
            runner=_martingale_free_term,
            defaults={
                "rms_y": 0.05,
                "z_mean_lo": 0.9,
                "z_mean_hi": 1.1,
                "m_relation": 0.05,
                "m_relation_negative": 0.5,
            },
        ),
        CorpusProblem(
            name="backward-noise",
            kind="simple",
            oracle="per-path closed form: Y(t) = B(T) - B(t) from a unit backward coefficient",
            runner=_backward_noise,
            defaults={"rms_y": 0.05},
        ),
        CorpusProblem(
            name="deterministic-ramp",
            kind="simple",
            oracle="deterministic integration: Y(t) = T - t, exact on the grid",
            runner=_deterministic_ramp,
            defaults={"abs_err": 1e-5},
        ),
        CorpusProblem(
            name="exp-ode",
            kind="picard",
            oracle="backward linear growth: Y(t) = exp(T - t), fixed point of the iteration",
            runner=_exp_ode,
            defaults={"y0_rel": 0.05, "ratio_slack": 0.1},
        ),
        CorpusProblem(
            name="bw-noise-forward",
            kind="fdsvie",
            oracle="per-path closed form: P(t) = B(T) - B(t), Q = 1 on the triangle",
            runner=_bw_noise_forward,
            defaults={
                "rms_p": 0.05,
                "q_mean_lo": 0.9,
                "q_mean_hi": 1.1,
                "m_relation": 0.05,
                "m_relation_negative": 0.5,
            },
        ),
        CorpusProblem(
            name="compare-shift",
            kind="compare",
            oracle="closed-form difference: Y1 - Y2 = T - t >= 0 from a unit drift shift",
            runner=_compare_shift,
            defaults={"violations": 0.0},
        ),
        CorpusProblem(
            name="compare-abs-pair",
            kind="compare",
            oracle="ordering only: opposite absolute-growth drifts, common cosine backward coefficient",
            runner=_compare_abs_pair,
            defaults={"violations": 0.01},
        ),
        CorpusProblem(
            name="sqrt-minimal",
            kind="continuous",
            oracle="backward square-root drift: minimal solution is identically zero",
            runner=_sqrt_minimal,
            defaults={"abs_y": 0.02},
        ),
        CorpusProblem(
            name="duality-zero",
            kind="duality",
            oracle="decoupled pairing: both sides equal -int phi psi dt exactly",
            runner=_duality_zero,
            defaults={"gap_abs": 1e-8},
        ),
        CorpusProblem(
            name="duality-drift",
            kind="duality",
            oracle="the duality identity itself: two independent solves of the paired equations",
            runner=_duality_drift,
            defaults={"gap_slack": 0.02},
        ),
        CorpusProblem(
            name="lq-control",
            kind="control",
            oracle="linear-quadratic optimum: u = -(T - t), Y0 = T - t, J = -T^3/6",
            runner=_lq_control,
            defaults={"j_abs": 0.02, "violations": 0.01, "gateaux_abs": 0.05},
        ),
        CorpusProblem(
            name="lq-control-null",
            kind="control",
            oracle="negative control: zero control violates the variational inequality on most nodes",
            runner=_lq_control_null,
            defaults={"violations_min": 0.5, "gateaux_rel": 0.1},
        ),
        CorpusProblem(
            name="lq-fbdsvie",
            kind="fbdsvie",
            oracle="projection fixed point recovers the linear-quadratic optimum from zero",
            runner=_lq_fbdsvie,
            defaults={"u_l2": 0.05},
        ),
        CorpusProblem(
            name="stall-control",
            kind="fbdsvie",
            oracle="constant cost slope: stationary point outside U, runner pins the boundary",
            runner=_stall_control,
            defaults={"boundary_fraction": 0.99, "final_movement": 1e-12},
        ),
    ]
}


def get_problem(name: str) -> CorpusProblem:
    try:
        return PROBLEMS[name]
    except KeyError:
        known = ", ".join(sorted(PROBLEMS))
        raise InvalidArgumentError(f"unknown corpus problem {name!r}; known: {known}") from None


def listing() -> list:
    """Registry contents for the CLI listing."""
    return [
        {"name": p.name, "kind": p.kind, "oracle": p.oracle}
        for p in sorted(PROBLEMS.values(), key=lambda p: p.name)
    ]
