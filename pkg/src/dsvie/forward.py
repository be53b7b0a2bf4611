"""Forward doubly stochastic Volterra equation solvers.

The forward equation mirrors the backward one under time reversal, with
the roles of the two drivers exchanged:

    P(t) = phi(t) + int_0^t b(t, s, P(s), Q(t, s), Q(s, t)) ds
                  + int_0^t sigma(t, s, ...) dW(s) -+ int_0^t Q(t, s) dB~(s).

Correspondence used throughout (documented once here): W <-> B, the native
triangle t <= s <-> t > s, the backward sweep's conditional projections at
F_{t_j} <-> projections at F_{t_i} of the forward accumulation, and the
G-field dW extraction <-> the backward-field dB extraction. Given frozen
driver arguments, the b/sigma accumulation R(t) is explicit per path;
P(t) is its F_t projection and the dB~ term is the represented remainder
(so Q on the strict lower triangle), while Q on the upper triangle comes
from the backward representation of P itself. The dB~ term's sign is part
of the problem statement (the defining equation subtracts it; the control
formulation adds it), so it is a parameter.
"""

from __future__ import annotations

import time

import numpy as np

from .backward import (
    SolveReport,
    DiagonalProcess,
    TwoParameterField,
    _alloc_field,
    _auto_beta,
    _measured_ratio,
    _moment_mat,
    _moment_vec,
    _norm_from_moments,
    _require_scalar_dims,
    _wrap_coefficient,
    contraction_constants,
)
from .errors import (
    CertificateError,
    DriverEvaluationError,
    InvalidArgumentError,
    NonConvergenceError,
)
from .grid import ScenarioBatch
from .regression import DEFAULT_BASIS, ProjectionStack, RegressionBasis


class FdsvieDriver:
    """Coefficient pair (b, sigma) for the forward equation.

    Callables (t, s, p, q, theta) -> values with q the integrand at (t, s)
    and theta its mirror at (s, t); vectorized over numpy arguments, with
    optional keyword indices i (array) and j (int) for closures that need
    grid positions. Declared constants (c for b, alpha for sigma) are
    spot-checked like the backward driver's certificate.
    """

    def __init__(
        self,
        b=None,
        sigma=None,
        c: float = 0.0,
        alpha: float = 0.0,
        horizon: float = 1.0,
        check_certificate: bool = True,
        label: str = "",
    ):
        if c < 0:
            raise InvalidArgumentError("Lipschitz constant c must be nonnegative")
        if not 0 <= alpha < 1.0 / (horizon + 2.0):
            raise InvalidArgumentError(
                f"alpha must satisfy 0 <= alpha < 1/(T+2) = {1.0/(horizon+2.0):.6g}, got {alpha}"
            )
        self.b = _wrap_coefficient(b)
        self.sigma = _wrap_coefficient(sigma)
        self._has_b = b is not None
        self._has_sigma = sigma is not None
        self.c = float(c)
        self.alpha = float(alpha)
        self.horizon = float(horizon)
        self.label = label
        if check_certificate:
            self._spot_check()
            self.certificate = "passed"
        else:
            self.certificate = "waived"

    def _spot_check(self, n_probes: int = 100, scale: float = 2.0) -> None:
        rng = np.random.default_rng(20240518)
        worst_b = worst_s = 0.0
        for _ in range(n_probes):
            u = np.sort(rng.uniform(0.0, self.horizon, size=2))
            s, t = float(u[0]), float(u[1])  # t > s on the forward domain
            a = rng.normal(0.0, scale, size=6)
            dist2 = float((a[0] - a[3]) ** 2 + (a[1] - a[4]) ** 2 + (a[2] - a[5]) ** 2)
            if dist2 == 0.0:
                continue
            ta = np.array([t])
            if self._has_b:
                db = float(
                    np.asarray(self.b(ta, s, a[0], a[1], a[2]))
                    - np.asarray(self.b(ta, s, a[3], a[4], a[5]))
                )
                worst_b = max(worst_b, db**2 / dist2)
            if self._has_sigma:
                ds = float(
                    np.asarray(self.sigma(ta, s, a[0], a[1], a[2]))
                    - np.asarray(self.sigma(ta, s, a[3], a[4], a[5]))
                )
                worst_s = max(worst_s, ds**2 / dist2)
        tol = 1.0 + 1e-9
        if worst_b > self.c * tol + 1e-12:
            raise CertificateError(
                f"b violates its Lipschitz certificate: probe ratio {worst_b:.4g} > c = {self.c:.4g}"
            )
        if worst_s > self.alpha * tol + 1e-12:
            raise CertificateError(
                f"sigma violates its Lipschitz certificate: probe ratio {worst_s:.4g} > alpha = {self.alpha:.4g}"
            )


class InitialTerm:
    """Inhomogeneity phi with phi(t_i) built from information available at t_i.

    fn receives (t, w, b_tail): node times (N+1,), W node values
    (paths, N+1) and B(T) - B(t) node values (paths, N+1); both argument
    blocks are measurable at their own node. Path-history functionals can
    close over the batch directly.
    """

    def __init__(self, fn=None, values=None, label: str = ""):
        if (fn is None) == (values is None):
            raise InvalidArgumentError("provide exactly one of fn or values")
        self.fn = fn
        self._values = None if values is None else np.asarray(values, dtype=float)
        self.label = label

    @classmethod
    def from_values(cls, values, label: str = "") -> "InitialTerm":
        return cls(values=values, label=label)

    @classmethod
    def constant(cls, value: float, label: str = "") -> "InitialTerm":
        return cls(fn=lambda t, w, bt: float(value), label=label)

    def evaluate(self, batch: ScenarioBatch) -> np.ndarray:
        n = batch.grid.steps + 1
        if self._values is not None:
            if self._values.shape != (batch.paths, n):
                raise InvalidArgumentError("initial-term values shape mismatch")
            out = self._values
        else:
            out = np.asarray(self.fn(batch.grid.nodes, batch.W1, batch.b_tail), dtype=float)
            out = np.broadcast_to(out, (batch.paths, n))
        if not np.all(np.isfinite(out)):
            raise InvalidArgumentError("initial term evaluated to non-finite values")
        return np.array(out, dtype=float)


def solve_fdsvie(
    phi: InitialTerm,
    driver: FdsvieDriver,
    batch: ScenarioBatch,
    basis: RegressionBasis = DEFAULT_BASIS,
    tol: float = 1e-3,
    max_iter: int = 30,
    backward_sign: int = -1,
    S_idx: int | None = None,
    stack: ProjectionStack | None = None,
):
    """Frozen-argument iteration for the forward equation.

    backward_sign is the sign in front of the dB~ term (-1 for the defining
    equation, +1 for the control/duality formulation). Q on the strict
    lower triangle is extracted from the represented remainder between the
    explicit accumulation and its F projection; Q on the upper triangle is
    pinned by the backward representation of P down from node S_idx
    (default N). Returns (P, Q_full, SolveReport).
    """
    _require_scalar_dims(batch)
    if backward_sign not in (-1, 1):
        raise InvalidArgumentError("backward_sign must be -1 or +1")
    if tol <= 0:
        raise InvalidArgumentError("tol must be positive")
    t0 = time.perf_counter()
    warnings: list[str] = []
    N = batch.grid.steps
    T = batch.grid.horizon
    if S_idx is None:
        S_idx = N
    if driver.horizon != T:
        warnings.append(f"driver horizon {driver.horizon} differs from grid horizon {T}")
    beta = _auto_beta(driver.c, driver.alpha, T, warnings)
    cc = contraction_constants(driver.c, driver.alpha, T, beta)
    if N == 1:
        warnings.append("N=1 grid: quadrature bias is O(T); refine the grid")

    if stack is None:
        stack = ProjectionStack(batch, basis)
    phi_vals = phi.evaluate(batch)
    nodes, dt = batch.grid.nodes, batch.grid.dt
    dW, dB = batch.dW1, batch.dB1

    p_prev = np.zeros_like(phi_vals)
    q_prev = _alloc_field(batch)
    q_work = _alloc_field(batch)
    hist_w: list[float] = []
    hist_flat: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        # explicit accumulation of the b ds and sigma dW terms (left node)
        R = phi_vals.copy()
        for j in range(N):
            if not (driver._has_b or driver._has_sigma):
                break
            i_arr = np.arange(j + 1, N + 1)
            args = (
                nodes[i_arr],
                nodes[j],
                p_prev[:, j : j + 1],
                q_prev[:, i_arr, j],
                q_prev[:, j, i_arr],
            )
            if driver._has_b:
                bv = np.broadcast_to(
                    np.asarray(driver.b(*args, i=i_arr, j=j), dtype=float),
                    (batch.paths, len(i_arr)),
                )
                if not np.all(np.isfinite(bv)):
                    raise DriverEvaluationError("b evaluated to non-finite value", j=j)
                R[:, j + 1 :] += bv * dt[j]
            if driver._has_sigma:
                sv = np.broadcast_to(
                    np.asarray(driver.sigma(*args, i=i_arr, j=j), dtype=float),
                    (batch.paths, len(i_arr)),
                )
                if not np.all(np.isfinite(sv)):
                    raise DriverEvaluationError("sigma evaluated to non-finite value", j=j)
                R[:, j + 1 :] += sv * dW[:, j : j + 1]

        # P is the F projection of R node by node
        P = np.empty_like(R)
        for i in range(N + 1):
            P[:, i] = stack.project(R[:, i], i, "F")

        # lower triangle: remainder carried by the dB~ integral, extracted
        # stepwise; upper triangle: backward representation of P itself.
        # Block per outer index keeps the big-field writes contiguous.
        q_work.fill(0.0)
        D = backward_sign * (P - R)
        n_cols = max(S_idx, N)
        block = np.empty((batch.paths, n_cols))
        for i in range(N + 1):
            hi = max(i, S_idx)
            if hi == 0:
                continue
            for m in range(i):
                block[:, m] = stack.project_backward(D[:, i] * dB[:, m], i, m) / dt[m]
            for j in range(i, S_idx):
                block[:, j] = stack.project_backward(P[:, i] * dB[:, j], i, j) / dt[j]
            q_work[:, i, :hi] = block[:, :hi]

        d_p = P - p_prev
        np.subtract(q_work, q_prev, out=q_prev)
        mp_d, mq_d = _moment_vec(d_p), _moment_mat(q_prev)
        res_w = _norm_from_moments(mp_d, mq_d, beta, batch.grid, "lower")
        res_flat = _norm_from_moments(mp_d, mq_d, 0.0, batch.grid, "lower")
        ref_flat = _norm_from_moments(
            _moment_vec(P), _moment_mat(q_work), 0.0, batch.grid, "lower"
        )
        hist_w.append(res_w)
        hist_flat.append(res_flat)
        p_prev = P
        q_prev, q_work = q_work, q_prev
        if res_flat <= tol * max(ref_flat, 1e-300):
            converged = True
            break

    report = SolveReport(
        iterations=it,
        residual_history=hist_w,
        residual_history_flat=hist_flat,
        measured_contraction_ratio=_measured_ratio(hist_w),
        theoretical_delta=cc.delta,
        beta=beta,
        wallclock=time.perf_counter() - t0,
        converged=converged,
        certificate=driver.certificate,
        warnings=warnings,
    )
    P_out = DiagonalProcess(batch, p_prev, label="P")
    Q_out = TwoParameterField(batch, q_prev, region="full", label="Q")
    if not converged:
        raise NonConvergenceError(
            f"no convergence after {max_iter} iterations", report=report
        )
    return P_out, Q_out, report


def check_backward_m_relation(
    P: DiagonalProcess,
    Q: TwoParameterField,
    S_idx: int,
    batch: ScenarioBatch,
    basis: RegressionBasis = DEFAULT_BASIS,
    stack: ProjectionStack | None = None,
) -> float:
    """Relative residual of P(t_i) = E^[P(t_i)|F_S] + sum_{i<=j<S} Q dB.

    Mirror of the backward module's relation check, averaging over paths
    and nodes i <= S_idx; 0/0 returns 0.
    """
    if not 0 <= S_idx <= batch.grid.steps:
        raise InvalidArgumentError("S_idx outside grid")
    if stack is None:
        stack = ProjectionStack(batch, basis)
    cols = P.values[:, : S_idx + 1]
    proxy = stack.project(cols, S_idx, "F")
    num = 0.0
    den = 0.0
    for i in range(S_idx + 1):
        acc = np.zeros(batch.paths)
        if i < S_idx:
            js = np.arange(i, S_idx)
            acc = np.sum(Q.values[:, i, js] * batch.dB1[:, js], axis=1)
        resid = cols[:, i] - proxy[:, i] - acc
        num += float(np.mean(resid**2))
        den += float(np.mean(cols[:, i] ** 2))
    if den == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return num / den
