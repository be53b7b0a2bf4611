"""Time grids, paired Brownian scenario batches, and discrete Ito integrals.

Two mutually independent drivers are simulated on a shared partition of
[0, T]: W enters forward Ito integrals (left-endpoint sums) and B enters
backward Ito integrals (right-endpoint sums). Generation is counter-based
per path chunk so parallel generation is order independent and reruns are
bit identical.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidArgumentError, ResourceLimitError

# Paths per counter-based substream. Fixed: changing it changes the stream.
_CHUNK = 4096

# Default cap on M*N*(d+l) increment elements (~3.2 GB of float64).
DEFAULT_ELEMENT_CAP = 200_000_000


@dataclass(frozen=True)
class TimeGrid:
    """Partition 0 = t_0 < t_1 < ... < t_N = T shared by all processes."""

    horizon: float
    steps: int
    nodes: np.ndarray
    uniform: bool = True

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size != self.steps + 1:
            raise InvalidArgumentError("nodes must have steps+1 entries")
        if nodes[0] != 0.0 or not np.isclose(nodes[-1], self.horizon, rtol=0, atol=1e-12 * self.horizon):
            raise InvalidArgumentError("nodes must start at 0 and end at T")
        if np.any(np.diff(nodes) <= 0):
            raise InvalidArgumentError("nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)

    @cached_property
    def dt(self) -> np.ndarray:
        """Step sizes t_{i+1} - t_i, shape (steps,)."""
        return np.diff(self.nodes)


def make_grid(T: float, N: int) -> TimeGrid:
    """Uniform grid with N+1 nodes on [0, T].

    Raises InvalidArgumentError for T <= 0 or N < 1.
    """
    if not np.isfinite(T) or T <= 0:
        raise InvalidArgumentError(f"horizon T must be positive, got {T}")
    if int(N) != N or N < 1:
        raise InvalidArgumentError(f"steps N must be a positive integer, got {N}")
    N = int(N)
    nodes = np.linspace(0.0, float(T), N + 1)
    nodes[0] = 0.0
    nodes[-1] = float(T)
    return TimeGrid(horizon=float(T), steps=N, nodes=nodes, uniform=True)


@dataclass(frozen=True)
class ScenarioBatch:
    """Seeded ensemble of paired increment paths for the two drivers.

    dW, dB hold per-step increments, shapes (paths, N, d) and (paths, N, l).
    W, B hold the cumulative values at nodes with W[:, 0] = B[:, 0] = 0.
    """

    grid: TimeGrid
    paths: int
    d: int
    l: int
    seed: int
    dW: np.ndarray = field(repr=False)
    dB: np.ndarray = field(repr=False)
    W: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)

    def _single(self, arr: np.ndarray, name: str) -> np.ndarray:
        if arr.shape[2] != 1:
            raise InvalidArgumentError(f"{name} has {arr.shape[2]} components; scalar view needs 1")
        return arr[:, :, 0]

    @property
    def W1(self) -> np.ndarray:
        """W node values for d=1, shape (paths, N+1)."""
        return self._single(self.W, "W")

    @property
    def B1(self) -> np.ndarray:
        return self._single(self.B, "B")

    @property
    def dW1(self) -> np.ndarray:
        return self._single(self.dW, "dW")

    @property
    def dB1(self) -> np.ndarray:
        return self._single(self.dB, "dB")

    @cached_property
    def b_tail(self) -> np.ndarray:
        """B(T) - B(t_i) at every node, shape (paths, N+1); l = 1 only."""
        b = self.B1
        return b[:, -1:] - b


def _chunk_key(seed: int, chunk_index: int) -> np.ndarray:
    return np.array([np.uint64(seed % 2**64), np.uint64(chunk_index)], dtype=np.uint64)


def generate_scenarios(
    grid: TimeGrid,
    paths: int,
    d: int = 1,
    l: int = 1,
    seed: int = 0,
    element_cap: int = DEFAULT_ELEMENT_CAP,
    threads: int = 1,
) -> ScenarioBatch:
    """Draw paths of paired Gaussian increments, deterministic in seed.

    Each fixed-size block of paths comes from its own Philox substream keyed
    by (seed, block index), so the result does not depend on generation
    order or on ``threads``.
    """
    if int(paths) != paths or paths < 1:
        raise InvalidArgumentError(f"paths must be a positive integer, got {paths}")
    if d < 1 or l < 1:
        raise InvalidArgumentError("dims d and l must be >= 1")
    paths, d, l = int(paths), int(d), int(l)
    N = grid.steps
    n_elem = paths * N * (d + l)
    if n_elem > element_cap:
        raise ResourceLimitError(
            f"scenario storage {n_elem} elements exceeds cap {element_cap}"
        )

    raw = np.empty((paths, N, d + l))
    sqdt = np.sqrt(grid.dt)[None, :, None]

    def fill(chunk_index: int) -> None:
        lo = chunk_index * _CHUNK
        hi = min(lo + _CHUNK, paths)
        rng = np.random.Generator(np.random.Philox(key=_chunk_key(seed, chunk_index)))
        raw[lo:hi] = rng.standard_normal((hi - lo, N, d + l))

    n_chunks = (paths + _CHUNK - 1) // _CHUNK
    if threads > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, range(n_chunks)))
    else:
        for c in range(n_chunks):
            fill(c)

    raw *= sqdt
    dW = np.ascontiguousarray(raw[:, :, :d])
    dB = np.ascontiguousarray(raw[:, :, d:])

    W = np.zeros((paths, N + 1, d))
    B = np.zeros((paths, N + 1, l))
    np.cumsum(dW, axis=1, out=W[:, 1:])
    np.cumsum(dB, axis=1, out=B[:, 1:])
    return ScenarioBatch(grid=grid, paths=paths, d=d, l=l, seed=int(seed), dW=dW, dB=dB, W=W, B=B)


def _as_node_field(field_values, batch: ScenarioBatch, components: int) -> np.ndarray:
    """Broadcast an integrand to shape (paths, N+1, components)."""
    arr = np.asarray(field_values, dtype=float)
    target = (batch.paths, batch.grid.steps + 1, components)
    if arr.ndim == 3:
        pass
    elif arr.ndim == 2:
        arr = arr[:, :, None]
    elif arr.ndim <= 1:
        arr = np.broadcast_to(arr, target[:2]).reshape(target[:2] + (1,))
    try:
        return np.broadcast_to(arr, target)
    except ValueError as exc:
        raise InvalidArgumentError(f"integrand shape {arr.shape} incompatible with {target}") from exc


def _check_range(a: int, b: int, N: int) -> None:
    if not (0 <= a <= b <= N):
        raise InvalidArgumentError(f"index range [{a}, {b}] outside [0, {N}] or reversed")


def forward_ito_integral(field_values, batch: ScenarioBatch, a: int, b: int) -> np.ndarray:
    """Per-path sum_{j=a}^{b-1} field_j . dW_j (left-endpoint evaluation).

    The integrand at step j must only use information available at t_j
    (caller contract). Returns shape (paths,).
    """
    _check_range(a, b, batch.grid.steps)
    f = _as_node_field(field_values, batch, batch.d)
    if a == b:
        return np.zeros(batch.paths)
    return np.sum(f[:, a:b, :] * batch.dW[:, a:b, :], axis=(1, 2))


def backward_ito_integral(field_values, batch: ScenarioBatch, a: int, b: int) -> np.ndarray:
    """Per-path sum_{j=a}^{b-1} field_{j+1} . dB_j (right-endpoint evaluation).

    Right-node evaluation mirrors the left-endpoint forward sum under time
    reversal; the integrand at step j must only use information backward
    available at t_{j+1} (caller contract). Returns shape (paths,).
    """
    _check_range(a, b, batch.grid.steps)
    f = _as_node_field(field_values, batch, batch.l)
    if a == b:
        return np.zeros(batch.paths)
    return np.sum(f[:, a + 1 : b + 1, :] * batch.dB[:, a:b, :], axis=(1, 2))
