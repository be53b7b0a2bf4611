"""Least-squares Monte Carlo conditional expectations and representations.

Conditioning is with respect to two information structures on the grid:

* ``"F"`` at node j: the sigma-field generated by W up to t_j together with
  the backward increments of B after t_j. Valid named features are "W"
  (value W(t_j)) and "B_tail" (value B(T) - B(t_j)); "B" alone is rejected.
* ``"G"`` at node j: W up to t_j together with the whole B path, so any
  B functional is admissible.

Estimates are global polynomial (or piecewise-constant) regressions over
the path ensemble, Longstaff-Schwartz style: one batch serves every node.

Integrand extraction recovers the stochastic-integral representation of a
terminal-measurable target: the forward version regresses target * dW_j on
the G-features at j, the backward version regresses target * dB_j on the
pair (W(t_i), B(T) - B(t_{j+1})).
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DegenerateDesignError, InvalidArgumentError
from .grid import ScenarioBatch

_F_SELECTORS = ("W", "B_tail")
_G_SELECTORS = ("W", "B_tail", "B")


@dataclass(frozen=True)
class RegressionBasis:
    """Feature/monomial configuration for one regression family.

    degree counts total monomial degree for kind="polynomial" and bins per
    feature for kind="piecewise-constant". features mixes named selectors
    ("W", "B_tail", "B") with callables f(batch, j) -> (paths,) whose
    measurability is the caller's contract.
    """

    kind: str = "polynomial"
    degree: int = 2
    features: tuple = ("W", "B_tail")
    ridge: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("polynomial", "piecewise-constant"):
            raise InvalidArgumentError(f"unknown basis kind {self.kind!r}")
        if self.degree < 0:
            raise InvalidArgumentError("degree must be nonnegative")
        if self.ridge < 0:
            raise InvalidArgumentError("ridge must be nonnegative")
        if not self.features:
            raise InvalidArgumentError("at least one feature selector is required")
        object.__setattr__(self, "features", tuple(self.features))
        for f in self.features:
            if not callable(f) and f not in _G_SELECTORS:
                raise InvalidArgumentError(f"unknown feature selector {f!r}")

    def validate_for(self, sigma_field: str) -> None:
        if sigma_field == "F":
            for f in self.features:
                if not callable(f) and f not in _F_SELECTORS:
                    raise InvalidArgumentError(
                        f"feature {f!r} is not measurable for the F conditioning field"
                    )
        elif sigma_field != "G":
            raise InvalidArgumentError(f"sigma_field must be 'F' or 'G', got {sigma_field!r}")

    def dimension(self) -> int:
        k = len(self.features)
        if self.kind == "polynomial":
            return len(_monomial_exponents(k, self.degree))
        return max(self.degree, 1) ** k


DEFAULT_BASIS = RegressionBasis()


@dataclass(frozen=True)
class ConditionalEstimator:
    """Fitted projection at one node: fitted = design @ coefficients."""

    basis: RegressionBasis
    coefficients: np.ndarray
    node: int
    residual_rms: float


@functools.lru_cache(maxsize=None)
def _monomial_exponents(n_features: int, degree: int) -> tuple:
    """Exponent tuples with total degree <= degree, in a fixed order."""
    out = []
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(n_features), total):
            expo = [0] * n_features
            for idx in combo:
                expo[idx] += 1
            out.append(tuple(expo))
    return tuple(out)


def _feature_column(selector, batch: ScenarioBatch, j: int) -> np.ndarray:
    if callable(selector):
        col = np.asarray(selector(batch, j), dtype=float)
        if col.shape != (batch.paths,):
            raise InvalidArgumentError("feature callable must return one value per path")
        return col
    if selector == "W":
        return batch.W1[:, j]
    if selector == "B_tail":
        return batch.b_tail[:, j]
    if selector == "B":
        return batch.B1[:, j]
    raise InvalidArgumentError(f"unknown feature selector {selector!r}")


def _design_from_columns(cols: np.ndarray, basis: RegressionBasis) -> np.ndarray:
    """Design matrix (paths, dim) from raw feature columns (paths, k)."""
    m, k = cols.shape
    if basis.kind == "polynomial":
        exponents = _monomial_exponents(k, basis.degree)
        # power tables per feature avoid repeated np.power in the hot loop
        pows = []
        for f_idx in range(k):
            tab = np.empty((basis.degree + 1, m))
            tab[0] = 1.0
            for e in range(1, basis.degree + 1):
                np.multiply(tab[e - 1], cols[:, f_idx], out=tab[e])
            pows.append(tab)
        out = np.empty((m, len(exponents)))
        for c, expo in enumerate(exponents):
            col = None
            for f_idx, e in enumerate(expo):
                if e:
                    col = pows[f_idx][e] if col is None else col * pows[f_idx][e]
            out[:, c] = 1.0 if col is None else col
        return out
    # piecewise-constant: tensor product of per-feature quantile cells
    bins = max(basis.degree, 1)
    cell = np.zeros(m, dtype=np.int64)
    for f_idx in range(k):
        edges = np.quantile(cols[:, f_idx], np.linspace(0, 1, bins + 1)[1:-1])
        cell = cell * bins + np.searchsorted(edges, cols[:, f_idx], side="right")
    out = np.zeros((m, bins**k))
    out[np.arange(m), cell] = 1.0
    return out


def _factorize(X: np.ndarray, ridge: float):
    gram = X.T @ X
    p = gram.shape[0]
    if ridge > 0:
        lam = ridge * np.trace(gram) / p
        gram = gram + lam * np.eye(p)
    try:
        return cho_factor(gram, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - scipy raises its own
        raise DegenerateDesignError(str(exc)) from exc
    except Exception as exc:
        raise DegenerateDesignError(f"singular normal equations at ridge={ridge}: {exc}") from exc


class ProjectionStack:
    """Per-(batch, basis) cache of design factorizations.

    Projection is a deterministic linear map per node; caching the Cholesky
    factors makes the O(N^2) sweeps in the solvers tractable. Node designs
    keep their design matrix; the (i, j) backward designs are rebuilt on
    use to bound memory.
    """

    def __init__(self, batch: ScenarioBatch, basis: RegressionBasis = DEFAULT_BASIS):
        self.batch = batch
        self.basis = basis
        self._node_cache: dict = {}
        self._bw_cache: dict = {}
        self._bw_tables = False  # built lazily; None when inapplicable

    def _node_design(self, j: int):
        key = j
        hit = self._node_cache.get(key)
        if hit is None:
            cols = np.column_stack(
                [_feature_column(f, self.batch, j) for f in self.basis.features]
            )
            X = _design_from_columns(cols, self.basis)
            hit = (X, _factorize(X, self.basis.ridge))
            self._node_cache[key] = hit
        return hit

    def project(self, targets: np.ndarray, j: int, sigma_field: str = "F") -> np.ndarray:
        """Least-squares projection of targets (paths,) or (paths, k) at node j."""
        self.basis.validate_for(sigma_field)
        X, chol = self._node_design(j)
        return X @ cho_solve(chol, X.T @ targets, check_finite=False)

    def coefficients(self, targets: np.ndarray, j: int, sigma_field: str = "F") -> np.ndarray:
        self.basis.validate_for(sigma_field)
        X, chol = self._node_design(j)
        return cho_solve(chol, X.T @ targets, check_finite=False)

    def _bw_columns(self, i: int, j: int) -> np.ndarray:
        """Backward-field features: W-type at node i, B-tail at node j+1."""
        cols = []
        for f in self.basis.features:
            if callable(f):
                cols.append(_feature_column(f, self.batch, j + 1))
            elif f == "W":
                cols.append(_feature_column("W", self.batch, i))
            else:
                cols.append(_feature_column(f, self.batch, j + 1))
        return np.column_stack(cols)

    def _bw_power_tables(self):
        """Per-feature power tables for the polynomial backward designs.

        Built once per stack; None when a feature rules the fast path out.
        """
        if self._bw_tables is False:
            self._bw_tables = None
            if self.basis.kind == "polynomial" and all(
                f in ("W", "B_tail") for f in self.basis.features
            ):
                tabs = []
                for f in self.basis.features:
                    vals = self.batch.W1 if f == "W" else self.batch.b_tail
                    # node-major layout so a node slice is contiguous
                    vt = np.ascontiguousarray(vals.T)
                    tab = np.empty((self.basis.degree + 1,) + vt.shape)
                    tab[0] = 1.0
                    for e in range(1, self.basis.degree + 1):
                        np.multiply(tab[e - 1], vt, out=tab[e])
                    tabs.append(tab)
                self._bw_tables = tabs
        return self._bw_tables

    def _bw_design(self, i: int, j: int) -> np.ndarray:
        tabs = self._bw_power_tables()
        if tabs is None:
            return _design_from_columns(self._bw_columns(i, j), self.basis)
        k = len(self.basis.features)
        node = [i if f == "W" else j + 1 for f in self.basis.features]
        exponents = _monomial_exponents(k, self.basis.degree)
        X = np.empty((self.batch.paths, len(exponents)))
        for c, expo in enumerate(exponents):
            col = None
            for f_idx, e in enumerate(expo):
                if e:
                    part = tabs[f_idx][e, node[f_idx]]
                    col = part if col is None else col * part
            X[:, c] = 1.0 if col is None else col
        return X

    def project_backward(self, targets: np.ndarray, i: int, j: int) -> np.ndarray:
        """Projection onto the backward field spanned at (i, j)."""
        key = (i, j)
        chol = self._bw_cache.get(key)
        X = self._bw_design(i, j)
        if chol is None:
            chol = _factorize(X, self.basis.ridge)
            self._bw_cache[key] = chol
        return X @ cho_solve(chol, X.T @ targets, check_finite=False)


def _check_target(target: np.ndarray, batch: ScenarioBatch) -> np.ndarray:
    target = np.asarray(target, dtype=float)
    if target.shape != (batch.paths,):
        raise InvalidArgumentError(f"target must have shape ({batch.paths},)")
    if not np.all(np.isfinite(target)):
        raise InvalidArgumentError("target contains non-finite values")
    return target


def condexp(
    target,
    batch: ScenarioBatch,
    at: int,
    sigma_field: str = "F",
    basis: RegressionBasis = DEFAULT_BASIS,
    stack: ProjectionStack | None = None,
):
    """Regression estimate of E[target | field at t_j].

    Returns (per-path fitted values, ConditionalEstimator). The projection
    is linear and idempotent up to the ridge perturbation.
    """
    target = _check_target(target, batch)
    if not 0 <= at <= batch.grid.steps:
        raise InvalidArgumentError(f"node {at} outside grid")
    if stack is None:
        stack = ProjectionStack(batch, basis)
    coeffs = stack.coefficients(target, at, sigma_field)
    X, _ = stack._node_design(at)
    fitted = X @ coeffs
    rms = float(np.sqrt(np.mean((target - fitted) ** 2)))
    return fitted, ConditionalEstimator(basis=basis, coefficients=coeffs, node=at, residual_rms=rms)


@dataclass(frozen=True)
class RepresentationResult:
    """Extracted integrand plus its reconstruction diagnostics.

    integrand[:, c] multiplies the step increment at j_indices[c]; the
    reconstruction is proxy + sum_c integrand[:, c] * d(driver)_c and
    residual is its relative ensemble-L2 mismatch against the target.
    """

    integrand: np.ndarray
    j_indices: np.ndarray
    proxy: np.ndarray
    residual: float


def _relative_residual(target: np.ndarray, recon: np.ndarray) -> float:
    denom = float(np.mean(target**2))
    if denom == 0.0:
        return 0.0
    return float(np.mean((target - recon) ** 2) / denom)


def represent_forward(
    target,
    batch: ScenarioBatch,
    at_idx: int,
    from_idx: int,
    basis: RegressionBasis = DEFAULT_BASIS,
    stack: ProjectionStack | None = None,
) -> RepresentationResult:
    """Integrand Z(t_i, t_j), from_idx <= j < at_idx, of the forward representation.

    target (measurable at t_i) decomposes as a conditional mean at t_S plus
    a dW sum; each coefficient is condexp(target * dW_j | G at j) / dt_j.
    """
    target = _check_target(target, batch)
    if not 0 <= from_idx <= at_idx <= batch.grid.steps:
        raise InvalidArgumentError("need 0 <= from_idx <= at_idx <= N")
    if stack is None:
        stack = ProjectionStack(batch, basis)
    dt = batch.grid.dt
    js = np.arange(from_idx, at_idx)
    integrand = np.empty((batch.paths, js.size))
    for c, j in enumerate(js):
        integrand[:, c] = stack.project(target * batch.dW1[:, j], j, "G") / dt[j]
    proxy, _ = condexp(target, batch, from_idx, "F", basis, stack=stack)
    recon = proxy + np.sum(integrand * batch.dW1[:, js], axis=1) if js.size else proxy
    return RepresentationResult(integrand, js, proxy, _relative_residual(target, recon))


def represent_backward(
    target,
    batch: ScenarioBatch,
    at_idx: int,
    to_idx: int,
    basis: RegressionBasis = DEFAULT_BASIS,
    stack: ProjectionStack | None = None,
) -> RepresentationResult:
    """Integrand Q(t_i, t_j), at_idx <= j < to_idx, of the backward representation.

    Mirrors represent_forward under time reversal: coefficients pair with
    dB_j and condition on (W(t_i), B(T) - B(t_{j+1})) features.
    """
    target = _check_target(target, batch)
    if not 0 <= at_idx <= to_idx <= batch.grid.steps:
        raise InvalidArgumentError("need 0 <= at_idx <= to_idx <= N")
    if stack is None:
        stack = ProjectionStack(batch, basis)
    dt = batch.grid.dt
    js = np.arange(at_idx, to_idx)
    integrand = np.empty((batch.paths, js.size))
    for c, j in enumerate(js):
        integrand[:, c] = stack.project_backward(target * batch.dB1[:, j], at_idx, j) / dt[j]
    proxy, _ = condexp(target, batch, to_idx, "F", basis, stack=stack)
    recon = proxy + np.sum(integrand * batch.dB1[:, js], axis=1) if js.size else proxy
    return RepresentationResult(integrand, js, proxy, _relative_residual(target, recon))
