from __future__ import annotations

import math

import numpy as np
import pytest

from dsvie.errors import InvalidArgumentError, ResourceLimitError
from dsvie.grid import (
    backward_ito_integral,
    forward_ito_integral,
    generate_scenarios,
    make_grid,
)


def test_make_grid_uniform_partition():
    g = make_grid(1.0, 4)
    assert np.allclose(g.nodes, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 1.0
    g2 = make_grid(2.0, 1)
    assert np.allclose(g2.nodes, [0.0, 2.0])


@pytest.mark.parametrize("T,N", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, -2), (math.nan, 4)])
def test_make_grid_rejects_bad_arguments(T, N):
    with pytest.raises(InvalidArgumentError):
        make_grid(T, N)


def test_uniform_step_tolerance():
    g = make_grid(3.0, 7)
    assert np.all(np.abs(g.dt - 3.0 / 7) <= 1e-12 * 3.0)


def test_generation_is_deterministic_and_thread_invariant():
    g = make_grid(1.0, 16)
    a = generate_scenarios(g, 10_000, seed=42)
    b = generate_scenarios(g, 10_000, seed=42)
    c = generate_scenarios(g, 10_000, seed=42, threads=4)
    assert np.array_equal(a.dW, b.dW) and np.array_equal(a.dB, b.dB)
    assert np.array_equal(a.dW, c.dW) and np.array_equal(a.dB, c.dB)
    d = generate_scenarios(g, 10_000, seed=43)
    assert not np.array_equal(a.dW, d.dW)


def test_cumulative_arrays_are_exact_prefix_sums():
    g = make_grid(1.0, 8)
    b = generate_scenarios(g, 100, seed=1)
    assert np.all(b.W[:, 0] == 0.0) and np.all(b.B[:, 0] == 0.0)
    assert np.array_equal(b.W[:, 1:], np.cumsum(b.dW, axis=1))
    assert np.array_equal(b.B[:, 1:], np.cumsum(b.dB, axis=1))


def test_increment_statistics():
    g = make_grid(1.0, 16)
    M = 10_000
    b = generate_scenarios(g, M, seed=42)
    # per-step variance against the step size
    for j in range(g.steps):
        dt = g.dt[j]
        assert abs(b.dW1[:, j].var() - dt) <= 5.0 * dt / math.sqrt(M)
        assert abs(b.dB1[:, j].var() - dt) <= 5.0 * dt / math.sqrt(M)
    # terminal mean and cross-independence
    assert abs(b.W1[:, -1].mean()) <= 5.0 * math.sqrt(1.0 / M)
    corr = np.corrcoef(b.W1[:, -1], b.B1[:, -1])[0, 1]
    assert abs(corr) <= 5.0 / math.sqrt(M)


def test_memory_cap_enforced():
    g = make_grid(1.0, 16)
    with pytest.raises(ResourceLimitError):
        generate_scenarios(g, 1000, seed=0, element_cap=100)


@pytest.fixture(scope="module")
def batch():
    return generate_scenarios(make_grid(1.0, 16), 10_000, seed=42)


def test_forward_integral_zero_and_telescoping(batch):
    N = batch.grid.steps
    assert np.all(forward_ito_integral(0.0, batch, 0, N) == 0.0)
    assert np.allclose(forward_ito_integral(1.0, batch, 0, N), batch.W1[:, -1])


def test_forward_integral_martingale_mean(batch):
    # field W(t_j): oracle E int_0^T W^2 dt = T^2/2 bounds the ensemble mean
    N = batch.grid.steps
    vals = forward_ito_integral(batch.W1, batch, 0, N)
    assert abs(vals.mean()) <= 5.0 * math.sqrt(0.5 / batch.paths)


def test_backward_integral_telescoping_and_zero(batch):
    N = batch.grid.steps
    for i in (0, 3):
        got = backward_ito_integral(1.0, batch, i, N)
        assert np.allclose(got, batch.B1[:, -1] - batch.B1[:, i])
    assert np.all(backward_ito_integral(0.0, batch, 0, N) == 0.0)


def test_backward_integral_martingale_mean(batch):
    # field B(T)-B(t_{j+1}) paired with dB_j: oracle E int (B(T)-B(s))^2 ds = T^2/2
    N = batch.grid.steps
    vals = backward_ito_integral(batch.b_tail, batch, 0, N)
    assert abs(vals.mean()) <= 5.0 * math.sqrt(0.5 / batch.paths)


def test_integral_linearity(batch):
    N = batch.grid.steps
    rng = np.random.default_rng(5)
    f1 = rng.normal(size=(batch.paths, N + 1))
    f2 = rng.normal(size=(batch.paths, N + 1))
    lhs = forward_ito_integral(2.0 * f1 - 3.0 * f2, batch, 0, N)
    rhs = 2.0 * forward_ito_integral(f1, batch, 0, N) - 3.0 * forward_ito_integral(f2, batch, 0, N)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_integral_adjacency(batch):
    N = batch.grid.steps
    rng = np.random.default_rng(6)
    f = rng.normal(size=(batch.paths, N + 1))
    for op in (forward_ito_integral, backward_ito_integral):
        whole = op(f, batch, 0, N)
        split = op(f, batch, 0, 7) + op(f, batch, 7, N)
        scale = np.abs(f).max() * np.abs(batch.dW).max() * N
        assert np.allclose(whole, split, atol=scale * np.finfo(float).eps * 4)


def test_integral_range_validation(batch):
    N = batch.grid.steps
    for op in (forward_ito_integral, backward_ito_integral):
        with pytest.raises(InvalidArgumentError):
            op(1.0, batch, 3, 2)
        with pytest.raises(InvalidArgumentError):
            op(1.0, batch, 0, N + 1)
