"""Frame design: interference constraints, the linearized subproblem, line search and the SCA drivers."""

from core.precoder.block_level import BlockLevelDesign, block_level_design
from core.precoder.constraints import (
    ConstraintSet,
    SymbolFrame,
    build_ci_constraints,
    build_di_constraints,
    random_symbol_frame,
)
from core.precoder.line_search import LineSearchResult, line_search
from core.precoder.sca import CaseResult, QosTargets, ScaDesigner, ScaOptions, SolveReport, sca_design
from core.precoder.subproblem import LinearSubproblemSolver, Phase1Result, SubproblemSolution, phase1_feasible, solve_subproblem

__all__ = [
    "BlockLevelDesign",
    "CaseResult",
    "ConstraintSet",
    "LineSearchResult",
    "LinearSubproblemSolver",
    "Phase1Result",
    "QosTargets",
    "ScaDesigner",
    "ScaOptions",
    "SolveReport",
    "SubproblemSolution",
    "SymbolFrame",
    "block_level_design",
    "build_ci_constraints",
    "build_di_constraints",
    "line_search",
    "phase1_feasible",
    "random_symbol_frame",
    "sca_design",
    "solve_subproblem",
]
