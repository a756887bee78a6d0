"""Linearized subproblem min Re tr(Gᴴ X) over the constraint set, and the phase-1 feasibility search."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import cvxpy as cp
import numpy as np
from scipy import sparse

from core.array_model import TransmitFrame
from core.errors import NumericalError
from core.precoder.constraints import ConstraintSet

FEASIBILITY_SLACK = 1e-9
# the cone programs are posed on the unit ball with unit-norm rows, so these are relative to the frame scale
SOLVER_SETTINGS = {
    "tol_gap_abs": 1e-9,
    "tol_gap_rel": 1e-9,
    "tol_feas": 1e-9,
    "max_iter": 400,
}
_SOLVED = (cp.OPTIMAL, cp.OPTIMAL_INACCURATE)
_INFEASIBLE = (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE)


@dataclass(frozen=True, eq=False)
class SubproblemSolution:
    X_star: TransmitFrame
    objective: float
    primal_residual: float
    dual_gap: float
    status: str

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "inaccurate")


@dataclass(frozen=True, eq=False)
class Phase1Result:
    X: Optional[TransmitFrame]
    max_slack: float
    feasible: bool
    status: str


def _status_name(status: str) -> str:
    if status == cp.OPTIMAL:
        return "optimal"
    if status == cp.OPTIMAL_INACCURATE:
        return "inaccurate"
    if status in _INFEASIBLE:
        return "infeasible"
    return str(status)


def _project_to_ball(z: np.ndarray, radius: float) -> np.ndarray:
    norm = np.linalg.norm(z)
    if norm > radius > 0:
        return z * (radius / norm)
    return z


@dataclass(frozen=True, eq=False)
class _UnitScaledRows:
    """Rows a_i/‖a_i‖ and bounds b_i/(‖a_i‖·r) for the variable w = z/r, which lives in the unit ball."""

    A: sparse.csr_matrix
    b: np.ndarray
    row_scale: np.ndarray
    active: np.ndarray
    radius: float
    ball: float

    @classmethod
    def of(cls, constraints: ConstraintSet) -> "_UnitScaledRows":
        norms = constraints.row_norms()
        row_scale = np.where(norms > 0, norms, 1.0)
        # a zero-power frame only admits w = 0; keep r = 1 so nothing divides by zero
        radius = constraints.radius if constraints.radius > 0 else 1.0
        ball = 1.0 if constraints.radius > 0 else 0.0
        A = sparse.csr_matrix(sparse.diags(1.0 / row_scale) @ constraints.A)
        return cls(A, constraints.b / row_scale / radius, row_scale, (norms > 0).astype(float), radius, ball)


class LinearSubproblemSolver:
    """
    Reusable cone program for one ConstraintSet; only the objective direction changes between calls.

    The direction enters as a cvxpy Parameter so the problem is compiled once per
    DI case and re-solved with Clarabel at every SCA iteration. The program is posed
    in w = z/r with unit-norm rows; at high power the raw rows and bounds span many
    orders of magnitude and Clarabel loses accuracy on them.
    """

    def __init__(self, constraints: ConstraintSet, *, logger: Optional[logging.Logger] = None) -> None:
        self.constraints = constraints
        self.logger = logger or logging.getLogger(self.__class__.__name__)
        self._problem = None
        if constraints.n_rows:
            self._scaled = _UnitScaledRows.of(constraints)
            n = constraints.n_coords
            self._w = cp.Variable(n)
            self._direction = cp.Parameter(n)
            self._rows = self._scaled.A @ self._w <= self._scaled.b
            self._problem = cp.Problem(
                cp.Minimize(self._direction @ self._w),
                [self._rows, cp.SOC(cp.Constant(self._scaled.ball), self._w)],
            )

    def solve(self, G: np.ndarray) -> SubproblemSolution:
        cs = self.constraints
        g = cs.frame_to_coords(np.asarray(G, dtype=complex))
        g_norm = float(np.linalg.norm(g))

        if self._problem is None:
            z = -cs.radius * g / g_norm if g_norm > 0 else np.zeros_like(g)
            return SubproblemSolution(cs.coords_to_frame(z), float(g @ z), 0.0, 0.0, "optimal")

        self._direction.value = g / g_norm if g_norm > 0 else g
        try:
            self._problem.solve(solver=cp.CLARABEL, **SOLVER_SETTINGS)
        except cp.error.SolverError as exc:
            raise NumericalError(f"subproblem solver failed: {exc}") from exc

        status = _status_name(self._problem.status)
        if self._problem.status not in _SOLVED or self._w.value is None:
            self.logger.warning("Subproblem returned status %s.", status)
            return SubproblemSolution(None, float("nan"), float("inf"), float("inf"), status)

        z = _project_to_ball(self._scaled.radius * np.asarray(self._w.value, dtype=float), cs.radius)
        X_star = cs.coords_to_frame(z)
        primal = float(g @ z)
        gap = self._dual_gap(g, primal, g_norm)
        return SubproblemSolution(X_star, primal, cs.max_violation(X_star), gap, status)

    def _dual_gap(self, g: np.ndarray, primal: float, g_norm: float) -> float:
        # dual function of min g·z s.t. Az ≤ b, ‖z‖ ≤ r at multipliers y ≥ 0, mapped back from the scaled rows
        cs = self.constraints
        y_scaled = np.clip(np.asarray(self._rows.dual_value, dtype=float).reshape(-1), 0.0, None)
        y = y_scaled * g_norm / self._scaled.row_scale
        dual = -float(cs.b @ y) - cs.radius * float(np.linalg.norm(g + cs.A.T @ y))
        return abs(primal - dual) / (1.0 + abs(primal))


def solve_subproblem(G: np.ndarray, constraints: ConstraintSet) -> SubproblemSolution:
    """One-shot convenience around LinearSubproblemSolver."""
    return LinearSubproblemSolver(constraints).solve(G)


def phase1_feasible(constraints: ConstraintSet, *, logger: Optional[logging.Logger] = None) -> Phase1Result:
    """
    Maximize the smallest normalized slack s with A z + s·‖a_i‖ ≤ b inside the ball.

    Solved as w = z/r, t = s/r against unit-norm rows. Returns a strictly feasible
    start when every raw slack is at least 1e-9.
    """
    cs = constraints
    if not cs.n_rows:
        return Phase1Result(np.zeros((cs.n_tx, cs.n_slots), dtype=complex), cs.radius, True, "optimal")

    scaled = _UnitScaledRows.of(cs)
    w = cp.Variable(cs.n_coords)
    t = cp.Variable()
    problem = cp.Problem(
        cp.Maximize(t),
        [scaled.A @ w + cp.multiply(scaled.active, t) <= scaled.b, cp.SOC(cp.Constant(scaled.ball), w), t <= 1.0],
    )
    try:
        problem.solve(solver=cp.CLARABEL, **SOLVER_SETTINGS)
    except cp.error.SolverError as exc:
        raise NumericalError(f"phase-1 solver failed: {exc}") from exc

    status = _status_name(problem.status)
    if problem.status not in _SOLVED or w.value is None:
        raise NumericalError(f"phase-1 problem returned status {status}")

    X = cs.coords_to_frame(_project_to_ball(scaled.radius * np.asarray(w.value, dtype=float), cs.radius))
    max_slack = scaled.radius * float(t.value)
    feasible = max_slack > 0 and float(np.min(cs.slack(X))) >= FEASIBILITY_SLACK
    if logger:
        logger.debug("Phase-1 for DI case %s: max slack %.4g.", cs.di_case, max_slack)
    return Phase1Result(X if feasible else None, max_slack, feasible, status)
