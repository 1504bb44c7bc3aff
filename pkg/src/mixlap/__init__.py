"""mixlap: a desk-scale numerical laboratory for mixed local-nonlocal
p-Laplace problems with measure data."""

from .grids import (
    Ball,
    GridDomain,
    GridFunction,
    ball_average,
    decreasing_rearrangement,
    excess,
    gagliardo_seminorm,
    gradient,
    lorentz_quasinorm,
    make_grid,
    oscillation,
    w1q_distance,
)
from .measures import (
    Measure,
    PotentialProfile,
    dirac,
    mollify_measure,
    potential_profile,
    riesz_potential,
    tail,
    tv_on_ball,
    wolff_potential,
)
from .operators import (
    KernelWeights,
    ParamSet,
    VectorFieldSpec,
    apply_fractional,
    apply_local,
    assemble_kernel_weights,
    inverse_A,
    jacobian_A,
    residual,
    v_map,
    vector_field_A,
)
from .solver import (
    SolaResult,
    SolveConfig,
    SolverError,
    sola_solve,
    solve_dirichlet,
    solve_homogeneous_local,
    solve_homogeneous_mixed,
)
from .experiments import EXPERIMENTS, DecayExponents, ExperimentReport

__all__ = [
    "Ball",
    "GridDomain",
    "GridFunction",
    "Measure",
    "PotentialProfile",
    "KernelWeights",
    "ParamSet",
    "VectorFieldSpec",
    "SolveConfig",
    "SolaResult",
    "SolverError",
    "DecayExponents",
    "ExperimentReport",
    "EXPERIMENTS",
]
