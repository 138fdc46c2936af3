"""Finite element solver for fractional (p, s)-Laplacian Dirichlet problems.

P1 finite elements on simplicial meshes in 1d and 2d, with full-range,
truncated, and tempered interaction kernels.  Hot assembly loops run in a
compiled extension when available and fall back to a vectorized numpy
implementation otherwise.
"""

__version__ = "0.1.0"

from .kernel import FAMILIES, GFunction, KernelSpec, kernel_eval, normalizing_constant
from .mesh import DomainSpec, Mesh, build_graded_mesh_1d, build_mesh, build_mesh_2d
from .quadrature import QuadConfig, TailRule, classify_pair, pair_rule, tail_rule
from .backend import available_backends, get_backend
from .assembly import (
    AssemblyContext,
    DiscreteFunction,
    dump_matrix,
    dump_solution,
    load_solution,
    load_vector,
)
from .solver import SolveReport, SolverControls, energy_decrease_check, solve
from .norms import (
    NormReport,
    RateTable,
    besov_quotients,
    besov_seminorm,
    energy_norm,
    error_proxy,
    fit_rates,
    wsp_norm,
)
from .experiments import (
    ExperimentConfig,
    FitResult,
    emit_outputs,
    fit_boundary_exponent,
    run_boundary_study,
    run_convergence_study,
    run_experiment,
)

__all__ = [
    "FAMILIES",
    "GFunction",
    "KernelSpec",
    "kernel_eval",
    "normalizing_constant",
    "DomainSpec",
    "Mesh",
    "build_graded_mesh_1d",
    "build_mesh",
    "build_mesh_2d",
    "QuadConfig",
    "TailRule",
    "classify_pair",
    "pair_rule",
    "tail_rule",
    "available_backends",
    "get_backend",
    "AssemblyContext",
    "DiscreteFunction",
    "dump_matrix",
    "dump_solution",
    "load_solution",
    "load_vector",
    "SolveReport",
    "SolverControls",
    "energy_decrease_check",
    "solve",
    "NormReport",
    "RateTable",
    "besov_quotients",
    "besov_seminorm",
    "energy_norm",
    "error_proxy",
    "fit_rates",
    "wsp_norm",
    "ExperimentConfig",
    "FitResult",
    "emit_outputs",
    "fit_boundary_exponent",
    "run_boundary_study",
    "run_convergence_study",
    "run_experiment",
    "__version__",
]
