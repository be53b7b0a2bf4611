"""Comparison harness, inf-convolution regularization, minimal solutions.

One-dimensional only. The comparison harness solves two equations whose
drivers are independent of the mirrored integrand slot on a shared
scenario batch (common random numbers) and counts ordering violations.
The inf-convolution approximates a continuous linear-growth coefficient
from below by Lipschitz envelopes f_n(x) = inf_y f(y) + n|x - y| over a
truncated grid; the minimal-solution scheme solves the equation for each
envelope in turn, warm-starting from the previous index, and checks the
monotone sandwich against the linear-growth majorant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .backward import (
    BdsvieDriver,
    DiagonalProcess,
    FreeTerm,
    TwoParameterField,
    _psi_values,
    picard_solve,
)
from .errors import (
    HypothesisViolationError,
    InvalidArgumentError,
    SchemeFailureError,
    TruncationError,
)
from .grid import ScenarioBatch
from .regression import DEFAULT_BASIS, ProjectionStack, RegressionBasis

_EVAL_CHUNK = 50_000_000  # elements of the (queries x grid) distance block


def _lattice(radius: float, spacing: float) -> np.ndarray:
    if radius <= 0 or spacing <= 0:
        raise InvalidArgumentError("radius and spacing must be positive")
    count = int(round(2.0 * radius / spacing)) + 1
    return -radius + spacing * np.arange(count)


def _tabulate(fn, xs: np.ndarray) -> np.ndarray:
    vals = np.asarray(fn(xs), dtype=float)
    if vals.shape != xs.shape:
        vals = np.array([float(fn(x)) for x in xs])
    if not np.all(np.isfinite(vals)):
        raise InvalidArgumentError("source function is not finite on the grid")
    return vals


@dataclass
class LipschitzApprox:
    """Grid-truncated Lipschitz envelope of a linear-growth function.

    Evaluation takes the exact minimum of table + n|x - y| over the grid.
    The truncation guard raises when the sufficient containment radius
    |x| + 2M(1+|x|)/(n-M) exceeds the grid (only meaningful for n > M) or
    when a minimizer lands on the grid boundary.
    """

    source: object
    n: float
    m_growth: float
    radius: float
    spacing: float
    grid: np.ndarray = field(repr=False)
    table: np.ndarray = field(repr=False)

    def _containment_check(self, x: np.ndarray) -> None:
        amax = float(np.max(np.abs(x)))
        if self.n > self.m_growth:
            required = amax + 2.0 * self.m_growth * (1.0 + amax) / (self.n - self.m_growth)
            if self.radius < required:
                raise TruncationError(
                    f"radius {self.radius} < containment bound {required:.4g} at |x| = {amax:.4g}"
                )

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        self._containment_check(x)
        out = np.empty(x.shape)
        hit_lo = hit_hi = False
        step = max(1, _EVAL_CHUNK // self.grid.size)
        flat = x.reshape(-1)
        res = out.reshape(-1)
        for lo in range(0, flat.size, step):
            part = flat[lo : lo + step]
            cand = self.table[None, :] + self.n * np.abs(part[:, None] - self.grid[None, :])
            arg = np.argmin(cand, axis=1)
            res[lo : lo + step] = cand[np.arange(part.size), arg]
            hit_lo |= bool(np.any(arg == 0))
            hit_hi |= bool(np.any(arg == self.grid.size - 1))
        if hit_lo or hit_hi:
            raise TruncationError("minimizer attained on the grid boundary; increase radius")
        return out if out.size > 1 else out

    def to_csv(self, path, xs=None) -> None:
        """Write columns x, f(x), f_n(x)."""
        if xs is None:
            xs = self.grid
        xs = np.asarray(xs, dtype=float)
        fx = _tabulate(self.source, xs)
        fnx = self(xs)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,f,f_n\n")
            for row in zip(xs, fx, fnx):
                fh.write(f"{float(row[0])!r},{float(row[1])!r},{float(row[2])!r}\n")


def inf_convolution(
    f, n: float, M_growth: float, R: float, h: float
) -> LipschitzApprox:
    """Envelope f_n(x) = min over the grid {-R, ..., R} of f(y) + n|x - y|.

    Requires n >= M_growth (the envelope is unbounded below otherwise).
    """
    if n < M_growth:
        raise InvalidArgumentError(f"need n >= M_growth, got n={n} < {M_growth}")
    if M_growth < 0:
        raise InvalidArgumentError("M_growth must be nonnegative")
    grid = _lattice(R, h)
    table = _tabulate(f, grid)
    return LipschitzApprox(
        source=f, n=float(n), m_growth=float(M_growth), radius=float(R), spacing=float(h),
        grid=grid, table=table,
    )


def _envelope_pass(table: np.ndarray, nh: float, axis: int) -> np.ndarray:
    """Exact 1d inf-convolution with n|.| along one axis of a grid table."""
    out = np.swapaxes(table, 0, axis).copy()
    for k in range(1, out.shape[0]):
        np.minimum(out[k], out[k - 1] + nh, out=out[k])
    for k in range(out.shape[0] - 2, -1, -1):
        np.minimum(out[k], out[k + 1] + nh, out=out[k])
    return np.swapaxes(out, 0, axis)


class JointLipschitzApprox:
    """Two-argument envelope inf {f(y', z') + n(|y-y'| + |z-z'|)} on a product grid.

    The table is exact at grid nodes (two separable sweep passes); queries
    snap to the nearest node, which is inside the documented n*h slack.
    """

    def __init__(self, f, n: float, M_growth: float, R: float, h: float):
        if n < M_growth:
            raise InvalidArgumentError(f"need n >= M_growth, got n={n} < {M_growth}")
        self.n = float(n)
        self.m_growth = float(M_growth)
        self.radius = float(R)
        self.spacing = float(h)
        self.grid = _lattice(R, h)
        yy, zz = np.meshgrid(self.grid, self.grid, indexing="ij")
        base = np.asarray(f(yy, zz), dtype=float)
        if base.shape != yy.shape:
            raise InvalidArgumentError("joint source must evaluate on meshgrid arrays")
        if not np.all(np.isfinite(base)):
            raise InvalidArgumentError("joint source is not finite on the grid")
        nh = self.n * self.spacing
        self.table = _envelope_pass(_envelope_pass(base, nh, 1), nh, 0)

    def _snap(self, v: np.ndarray) -> np.ndarray:
        idx = np.rint((v + self.radius) / self.spacing).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= self.grid.size):
            raise TruncationError("query outside the envelope grid; increase radius")
        return idx

    def __call__(self, y, z) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        y, z = np.broadcast_arrays(y, z)
        return self.table[self._snap(y), self._snap(z)]


@dataclass
class ComparisonReport:
    """Ordering violations of Y1 >= Y2 over paths and nodes."""

    violation_fraction: float
    worst_violation: float
    per_time_profile: np.ndarray
    tolerance: float
    Y1: DiagonalProcess
    Y2: DiagonalProcess
    reports: tuple


def _probe_ordering(driver1, driver2, horizon, n_probes=100, scale=2.0):
    rng = np.random.default_rng(20240519)
    slack = 1e-9
    for _ in range(n_probes):
        u = np.sort(rng.uniform(0.0, horizon, size=2))
        t, s = float(u[0]), float(u[1])
        y, z = rng.normal(0.0, scale, size=2)
        ta = np.array([t])
        f1 = float(np.asarray(driver1.f(ta, s, y, z, 0.0)))
        f2 = float(np.asarray(driver2.f(ta, s, y, z, 0.0)))
        if f1 < f2 - slack - slack * max(abs(f1), abs(f2)):
            raise HypothesisViolationError(
                f"driver ordering f1 >= f2 fails at probe (t={t:.3f}, s={s:.3f}, "
                f"y={y:.3f}, z={z:.3f}): {f1:.6g} < {f2:.6g}"
            )
        g1 = float(np.asarray(driver1.g(ta, s, y, z, 0.0)))
        g2 = float(np.asarray(driver2.g(ta, s, y, z, 0.0)))
        if abs(g1 - g2) > slack * (1.0 + max(abs(g1), abs(g2))):
            raise HypothesisViolationError(
                "comparison requires a common backward coefficient g; probes differ"
            )


def compare_solutions(
    psi1,
    driver1: BdsvieDriver,
    psi2,
    driver2: BdsvieDriver,
    batch: ScenarioBatch,
    basis: RegressionBasis = DEFAULT_BASIS,
    tolerance: float | None = None,
    tol: float = 1e-3,
    max_iter: int = 30,
) -> ComparisonReport:
    """Solve both equations on the same batch and report Y1 >= Y2 violations.

    Preconditions: scalar dimensions; both drivers independent of the
    mirrored integrand slot; psi1 >= psi2 per path and the probe ordering
    f1 >= f2 with a common g (violations raise HypothesisViolationError:
    the ordering guarantee does not cover such inputs, so no comparison
    is reported).
    """
    if batch.d != 1 or batch.l != 1:
        raise InvalidArgumentError("comparison is one-dimensional (d = l = 1)")
    if driver1.depends_on_zeta or driver2.depends_on_zeta:
        raise HypothesisViolationError(
            "comparison covers drivers independent of the mirrored integrand slot"
        )
    if tolerance is None:
        tolerance = 5.0 / math.sqrt(batch.paths)
    p1 = _psi_values(psi1 if not isinstance(psi1, FreeTerm) else psi1, batch)
    p2 = _psi_values(psi2, batch)
    if np.any(p1 < p2 - 1e-9 * (1.0 + np.abs(p2))):
        raise HypothesisViolationError("free terms violate psi1 >= psi2 on the batch")
    _probe_ordering(driver1, driver2, batch.grid.horizon)

    stack = ProjectionStack(batch, basis)
    Y1, _, rep1 = picard_solve(p1, driver1, batch, basis, tol=tol, max_iter=max_iter, stack=stack)
    Y2, _, rep2 = picard_solve(p2, driver2, batch, basis, tol=tol, max_iter=max_iter, stack=stack)
    diff = Y1.values - Y2.values
    viol = diff < -tolerance
    profile = viol.mean(axis=0)
    return ComparisonReport(
        violation_fraction=float(viol.mean()),
        worst_violation=float(max(0.0, -diff.min())),
        per_time_profile=profile,
        tolerance=float(tolerance),
        Y1=Y1,
        Y2=Y2,
        reports=(rep1, rep2),
    )


@dataclass
class MinimalSolveResult:
    """Monotone approximation run: envelope index sequence and sandwich data."""

    ns: list
    Y_sequence: list
    minimal: DiagonalProcess
    Z_minimal: TwoParameterField
    upper: DiagonalProcess
    cauchy_tail: float
    noise_tolerance: float
    max_step_violation: float
    max_upper_violation: float
    reports: list


def solve_continuous_minimal(
    psi,
    f,
    batch: ScenarioBatch,
    M_growth: float,
    n_max: int,
    g=None,
    g_alpha: float = 0.0,
    basis: RegressionBasis = DEFAULT_BASIS,
    R: float = 8.0,
    h: float = 0.02,
    tol: float = 1e-3,
    max_iter: int = 30,
    noise_tolerance: float | None = None,
) -> MinimalSolveResult:
    """Minimal-solution scheme for a continuous driver of linear growth.

    f(y, z) (time-independent) is approximated from below by joint
    inf-convolution envelopes for n = ceil(M_growth)..n_max; each envelope
    equation is solved by Picard iteration warm-started from the previous
    one, and the sequence is checked to be nondecreasing in n and below
    the majorant solution driven by M(1 + |y| + |z|), per path and node up
    to the noise tolerance (default 3 * 5/sqrt(paths)). A violation beyond
    tolerance raises SchemeFailureError with diagnostics.
    """
    if batch.d != 1 or batch.l != 1:
        raise InvalidArgumentError("minimal-solution scheme is one-dimensional")
    if n_max < M_growth:
        raise InvalidArgumentError("n_max must be at least M_growth")
    if noise_tolerance is None:
        noise_tolerance = 3.0 * 5.0 / math.sqrt(batch.paths)
    T = batch.grid.horizon
    stack = ProjectionStack(batch, basis)

    def wrap_g(fn):
        if fn is None:
            return None
        return lambda t, s, y, z, zeta: fn(t, s, y, z)

    n_lo = max(1, int(math.ceil(M_growth)))
    ns = list(range(n_lo, int(n_max) + 1))
    Ys: list[DiagonalProcess] = []
    reports = []
    init = None
    Z_last = None
    for n in ns:
        env = JointLipschitzApprox(f, n, M_growth, R, h)
        drv = BdsvieDriver(
            f=lambda t, s, y, z, zeta, _env=env: _env(y, np.broadcast_to(z, np.broadcast_shapes(np.shape(y), np.shape(z)))),
            g=wrap_g(g),
            c=2.0 * n * n,
            alpha=g_alpha,
            horizon=T,
            depends_on_zeta=False,
            check_certificate=False,  # envelope is n-Lipschitz by construction; snapping defeats probes
            label=f"envelope n={n}",
        )
        Yn, Zn, rep = picard_solve(
            psi, drv, batch, basis, tol=tol, max_iter=max_iter, init=init, stack=stack
        )
        Ys.append(Yn)
        Z_last = Zn
        reports.append(rep)
        init = (Yn, Zn)

    majorant = BdsvieDriver(
        f=lambda t, s, y, z, zeta: M_growth * (1.0 + np.abs(y) + np.abs(z)),
        g=wrap_g(g),
        c=2.0 * M_growth * M_growth,
        alpha=g_alpha,
        horizon=T,
        depends_on_zeta=False,
        check_certificate=False,
        label="linear-growth majorant",
    )
    U, _, rep_u = picard_solve(
        psi, majorant, batch, basis, tol=tol, max_iter=max_iter, init=init, stack=stack
    )
    reports.append(rep_u)

    max_step = 0.0
    for a, b in zip(Ys[:-1], Ys[1:]):
        max_step = max(max_step, float(np.max(a.values - b.values)))
    max_upper = max(float(np.max(y.values - U.values)) for y in Ys)
    if max_step > noise_tolerance or max_upper > noise_tolerance:
        raise SchemeFailureError(
            "monotone sandwich violated beyond the noise tolerance",
            diagnostics={
                "max_step_violation": max_step,
                "max_upper_violation": max_upper,
                "noise_tolerance": noise_tolerance,
            },
        )

    if len(Ys) > 1:
        d = Ys[-1].values - Ys[-2].values
        cauchy = float(np.mean(d**2))
    else:
        cauchy = 0.0
    return MinimalSolveResult(
        ns=ns,
        Y_sequence=Ys,
        minimal=Ys[-1],
        Z_minimal=Z_last,
        upper=U,
        cauchy_tail=cauchy,
        noise_tolerance=float(noise_tolerance),
        max_step_violation=max_step,
        max_upper_violation=max_upper,
        reports=reports,
    )
