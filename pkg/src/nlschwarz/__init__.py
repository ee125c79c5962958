"""Nonlinear two-level Schwarz solvers with GDSW-type coarse spaces for the
stationary Navier-Stokes equations on the lid-driven cavity."""

from .coarse import CoarseSpace, interface_values, monolithic_basis, scalar_basis
from .decomposition import build_interface, decompose
from .fem import CavityProblem, build_cavity_mesh, build_problem, dof_count
from .solvers import (
    InnerDivergence,
    NonlinearSchwarz,
    SolverConfig,
    newton_krylov_schwarz,
    outer_newton,
    plain_newton,
    solve,
)

__all__ = [
    "CavityProblem", "CoarseSpace", "InnerDivergence", "NonlinearSchwarz", "SolverConfig",
    "build_cavity_mesh", "build_interface", "build_problem", "decompose", "dof_count",
    "interface_values", "monolithic_basis", "newton_krylov_schwarz", "outer_newton",
    "plain_newton", "scalar_basis", "solve",
]
