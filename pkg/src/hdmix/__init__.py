"""Solvers for history-dependent mixed variational problems with box multipliers."""

from __future__ import annotations

from .contact import (
    AssembledInstance,
    ContactModel,
    demo_model,
    Loads,
    Material,
    assemble,
    check_friction_kkt,
    to_evolution_problem,
)
from .errors import SolverError, UnsupportedKernelError, ValidationError
from .history import (
    EvolutionProblem,
    HistoryState,
    MemoryKernel,
    TimeGrid,
    Trajectory,
    advance_recursive,
    eval_history_direct,
    history_lipschitz_check,
    solve_evolution,
)
from .mesh import Mesh, generate_rect_mesh, read_mesh, write_mesh
from .saddle import (
    CouplingForm,
    MultiplierSet,
    PrimalOperator,
    SaddleSolution,
    StaticMixedInstance,
    inner_solve_primal,
    project_multiplier,
    uzawa_solve,
    verify_constants,
)

__version__ = "0.1.0"

__all__ = [
    "AssembledInstance",
    "ContactModel",
    "demo_model",
    "CouplingForm",
    "EvolutionProblem",
    "HistoryState",
    "Loads",
    "Material",
    "MemoryKernel",
    "Mesh",
    "MultiplierSet",
    "PrimalOperator",
    "SaddleSolution",
    "SolverError",
    "StaticMixedInstance",
    "TimeGrid",
    "Trajectory",
    "UnsupportedKernelError",
    "ValidationError",
    "advance_recursive",
    "assemble",
    "check_friction_kkt",
    "eval_history_direct",
    "generate_rect_mesh",
    "history_lipschitz_check",
    "inner_solve_primal",
    "project_multiplier",
    "read_mesh",
    "solve_evolution",
    "to_evolution_problem",
    "uzawa_solve",
    "verify_constants",
    "write_mesh",
]
