"""Monte Carlo solvers for doubly stochastic Volterra integral equations.

Two independent Brownian drivers enter the equations through a forward
and a backward Ito integral; solutions carry a one-time-index process and
a two-time-index integrand pinned on the off-triangle by a martingale
representation. The package provides the regression-based solvers, the
comparison / minimal-solution machinery, the linear duality and maximum
principle harnesses, and a batch experiment CLI (``dsvie``).
"""

from .backward import (
    BdsvieDriver,
    DiagonalProcess,
    FreeTerm,
    SolveReport,
    TwoParameterField,
    check_m_relation,
    contraction_constants,
    extend_m_solution,
    picard_solve,
    solve_simple,
    weighted_norm,
)
from .control import (
    ControlProblem,
    LinearDualData,
    assemble_fbdsvie,
    build_adjoint,
    check_max_principle,
    cost_functional,
    duality_gap,
    hamiltonian,
)
from .forward import FdsvieDriver, InitialTerm, check_backward_m_relation, solve_fdsvie
from .grid import (
    ScenarioBatch,
    TimeGrid,
    backward_ito_integral,
    forward_ito_integral,
    generate_scenarios,
    make_grid,
)
from .ordering import (
    ComparisonReport,
    LipschitzApprox,
    compare_solutions,
    inf_convolution,
    solve_continuous_minimal,
)
from .regression import (
    RegressionBasis,
    condexp,
    represent_backward,
    represent_forward,
)

__version__ = "0.1.0"

__all__ = [
    "BdsvieDriver",
    "ComparisonReport",
    "ControlProblem",
    "DiagonalProcess",
    "FdsvieDriver",
    "FreeTerm",
    "InitialTerm",
    "LinearDualData",
    "LipschitzApprox",
    "RegressionBasis",
    "ScenarioBatch",
    "SolveReport",
    "TimeGrid",
    "TwoParameterField",
    "assemble_fbdsvie",
    "backward_ito_integral",
    "build_adjoint",
    "check_backward_m_relation",
    "check_m_relation",
    "check_max_principle",
    "compare_solutions",
    "condexp",
    "contraction_constants",
    "cost_functional",
    "duality_gap",
    "extend_m_solution",
    "forward_ito_integral",
    "generate_scenarios",
    "hamiltonian",
    "inf_convolution",
    "make_grid",
    "picard_solve",
    "represent_backward",
    "represent_forward",
    "solve_continuous_minimal",
    "solve_fdsvie",
    "solve_simple",
    "weighted_norm",
]
