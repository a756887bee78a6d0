from __future__ import annotations

import logging
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from core.errors import LineSearchError

ARMIJO_C1 = 1e-4
BACKTRACK = 0.5
MAX_BACKTRACKS = 60
LINE_SEARCH_METHODS = ("armijo", "exact")


class LineSearchResult(NamedTuple):
    step: float
    value: float
    evaluations: int


def directional_slope(G: np.ndarray, direction: np.ndarray) -> float:
    """Re tr(Gᴴ Δ)."""
    return float(np.vdot(G, direction).real)


def line_search(
    f: Callable[[np.ndarray], float],
    X_prev: np.ndarray,
    X_star: np.ndarray,
    G: np.ndarray,
    *,
    f_prev: Optional[float] = None,
    method: str = "armijo",
    c1: float = ARMIJO_C1,
    backtrack: float = BACKTRACK,
    initial_step: float = 1.0,
    logger: Optional[logging.Logger] = None,
) -> LineSearchResult:
    """
    Step λ ∈ (0, 1] along Δ = X* − X_prev satisfying the Armijo condition.

    ``method="exact"`` first minimizes f on [0, 1] with a bounded scalar search and
    keeps that step when it meets the Armijo condition. A step of 0 is returned
    when backtracking runs out before the condition holds.
    """
    if method not in LINE_SEARCH_METHODS:
        raise ValueError(f"unknown line search method {method!r}")
    direction = X_star - X_prev
    slope = directional_slope(G, direction)
    if not slope < 0:
        raise LineSearchError(f"not a descent direction (slope {slope:.3e})")
    if f_prev is None:
        f_prev = f(X_prev)
    evaluations = 0

    if method == "exact":
        result = minimize_scalar(lambda t: f(X_prev + t * direction), bounds=(0.0, 1.0), method="bounded")
        evaluations += int(result.nfev)
        step = float(result.x)
        if step > 0 and result.fun <= f_prev + c1 * step * slope:
            return LineSearchResult(step, float(result.fun), evaluations)
        if logger:
            logger.debug("Exact search step %.3g failed the Armijo test; backtracking.", step)

    step = initial_step
    for _ in range(MAX_BACKTRACKS):
        value = f(X_prev + step * direction)
        evaluations += 1
        if value <= f_prev + c1 * step * slope:
            return LineSearchResult(step, value, evaluations)
        step *= backtrack

    if logger:
        logger.warning("Armijo backtracking exhausted after %d evaluations.", evaluations)
    return LineSearchResult(0.0, f_prev, evaluations)
