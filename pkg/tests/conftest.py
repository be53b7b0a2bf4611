from __future__ import annotations

import pytest

from dsvie.grid import generate_scenarios, make_grid

# Desk scale: T=1, N=32, 20k paths. Session-scoped; treat as read-only.
DESK_SEED = 20240801


@pytest.fixture(scope="session")
def desk_batch():
    return generate_scenarios(make_grid(1.0, 32), 20_000, seed=DESK_SEED)


@pytest.fixture(scope="session")
def small_batch():
    return generate_scenarios(make_grid(1.0, 16), 4_000, seed=99)
