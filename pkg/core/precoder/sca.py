"""Successive convex approximation over the three destructive-interference cases."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, NamedTuple, Optional

import numpy as np

from core.array_model import CommChannelSet, SystemConfig, TransmitFrame
from core.bfim import BcrbObjective, ExpectationFactors
from core.errors import ConfigurationError, InfeasibleDesignError, NumericalError
from core.precoder.constraints import (
    SymbolFrame,
    available_di_cases,
    build_ci_constraints,
    build_di_constraints,
)
from core.precoder.line_search import LINE_SEARCH_METHODS, directional_slope, line_search
from core.precoder.subproblem import LinearSubproblemSolver, phase1_feasible
from core.priors import TargetPriorSet, prior_fim
from utils.logger import setup_logger

STATIONARY = "stationary"
MAX_ITER = "max-iter"
INFEASIBLE = "infeasible"
STALLED = "line-search-stall"
SOLVER_FAILURE = "solver-failure"
PRIOR_SCALING_MODES = ("unscaled", "scaled")


@dataclass(frozen=True)
class ScaOptions:
    epsilon: float = 1e-5
    max_iter: int = 50
    line_search: str = "armijo"
    jp_scaled: bool = False
    ridge: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ConfigurationError(f"must be > 0, got {self.epsilon!r}", field="solver.epsilon")
        if int(self.max_iter) < 1:
            raise ConfigurationError(f"must be >= 1, got {self.max_iter!r}", field="solver.max_iter")
        if self.line_search not in LINE_SEARCH_METHODS:
            raise ConfigurationError(
                f"must be one of {LINE_SEARCH_METHODS}, got {self.line_search!r}", field="solver.line_search"
            )
        if int(self.workers) < 1:
            raise ConfigurationError(f"must be >= 1, got {self.workers!r}", field="solver.workers")


@dataclass(frozen=True)
class QosTargets:
    """Per-user CI thresholds Γ_k and per-Eve DI thresholds τ_n, both in dB."""

    gamma_db: tuple[float, ...]
    tau_db: tuple[float, ...]

    @classmethod
    def broadcast(cls, gamma_db, tau_db, cfg: SystemConfig) -> "QosTargets":
        gamma = np.atleast_1d(np.asarray(gamma_db, dtype=float))
        tau = np.atleast_1d(np.asarray(tau_db, dtype=float))
        if gamma.size == 1:
            gamma = np.repeat(gamma, cfg.n_users)
        if tau.size == 1:
            tau = np.repeat(tau, cfg.n_targets)
        if gamma.size != cfg.n_users:
            raise ConfigurationError(f"expected 1 or {cfg.n_users} values, got {gamma.size}", field="qos.gamma_db")
        if tau.size != cfg.n_targets:
            raise ConfigurationError(f"expected 1 or {cfg.n_targets} values, got {tau.size}", field="qos.tau_db")
        if not (np.all(np.isfinite(gamma)) and np.all(np.isfinite(tau))):
            raise ConfigurationError("QoS thresholds must be finite", field="qos")
        return cls(tuple(gamma.tolist()), tuple(tau.tolist()))


@dataclass(eq=False)
class CaseResult:
    di_case: Optional[int]
    feasible: bool
    phase1_slack: float
    objective_trace: List[float] = field(default_factory=list)
    termination: str = INFEASIBLE
    max_violation: float = float("nan")
    X: Optional[TransmitFrame] = field(default=None, repr=False)

    @property
    def iterations(self) -> int:
        return max(len(self.objective_trace) - 1, 0)

    @property
    def initial_bcrb(self) -> Optional[float]:
        return self.objective_trace[0] if self.objective_trace else None

    @property
    def final_bcrb(self) -> Optional[float]:
        return self.objective_trace[-1] if self.objective_trace else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "di_case": self.di_case,
            "feasible": self.feasible,
            "phase1_slack": None if np.isnan(self.phase1_slack) else self.phase1_slack,
            "iterations": self.iterations,
            "termination": self.termination,
            "initial_bcrb": self.initial_bcrb,
            "final_bcrb": self.final_bcrb,
            "max_violation": None if np.isnan(self.max_violation) else self.max_violation,
            "objective_trace": list(self.objective_trace),
        }


@dataclass(eq=False)
class SolveReport:
    chosen_case: Optional[int]
    objective_trace: List[float]
    iterations: int
    termination: str
    final_bcrb: float
    cases: List[CaseResult]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "chosen_case": self.chosen_case,
            "final_bcrb": self.final_bcrb,
            "iterations": self.iterations,
            "termination": self.termination,
            "objective_trace": list(self.objective_trace),
            "cases": [case.to_dict() for case in self.cases],
        }


class ScaTrace(NamedTuple):
    X: np.ndarray
    trace: List[float]
    termination: str


def sca_iterate(
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    start: np.ndarray,
    solve_direction: Callable[[np.ndarray], np.ndarray],
    options: ScaOptions,
    logger: logging.Logger,
    label: str = "",
) -> ScaTrace:
    """
    Frank-Wolfe style SCA loop: linearize, solve, stop on the ε-relative gap, else line search.

    ``solve_direction(G)`` returns the minimizer of Re tr(Gᴴ X) over the feasible set. A
    NumericalError from it ends the loop at the current (feasible) iterate.
    """
    X = np.asarray(start, dtype=complex)
    value = objective(X)
    trace = [value]
    for iteration in range(1, options.max_iter + 1):
        G = gradient(X)
        try:
            X_star = solve_direction(G)
        except NumericalError as exc:
            logger.warning("%s iteration %d: subproblem failed, keeping the last iterate (%s).", label, iteration, exc)
            return ScaTrace(X, trace, SOLVER_FAILURE)
        gap = directional_slope(G, X_star - X)
        if gap > -options.epsilon * value:
            logger.debug("%s iteration %d: stationary (gap %.3e).", label, iteration, gap)
            return ScaTrace(X, trace, STATIONARY)

        step = line_search(objective, X, X_star, G, f_prev=value, method=options.line_search, logger=logger)
        if step.step == 0.0:
            return ScaTrace(X, trace, STALLED)
        X = X + step.step * (X_star - X)
        value = step.value
        trace.append(value)
        logger.debug("%s iteration %d: BCRB %.6g (step %.3g).", label, iteration, value, step.step)
    return ScaTrace(X, trace, MAX_ITER)


class ScaDesigner:
    """Runs the symbol-level design for every DI case and keeps the case with the lowest BCRB."""

    def __init__(
        self,
        cfg: SystemConfig,
        options: Optional[ScaOptions] = None,
        *,
        logger: Optional[logging.Logger] = None,
    ) -> None:
        self.cfg = cfg
        self.options = options or ScaOptions()
        self.logger = logger or setup_logger(self.__class__.__name__)

    def design(
        self,
        channels: CommChannelSet,
        symbols: SymbolFrame,
        priors: TargetPriorSet,
        factors: ExpectationFactors,
        qos: QosTargets,
    ) -> tuple[TransmitFrame, SolveReport]:
        cfg = self.cfg
        phi = cfg.half_angle
        objective = BcrbObjective(
            factors, prior_fim(priors), cfg, jp_scaled=self.options.jp_scaled, ridge=self.options.ridge
        )
        ci = build_ci_constraints(channels, symbols, qos.gamma_db, cfg.noise_cu_mw, phi, cfg)
        cases = available_di_cases(cfg.psk_order)

        def run(case: int) -> CaseResult:
            di = build_di_constraints(case, priors, symbols, qos.tau_db, cfg.noise_eve_mw, phi, cfg)
            return self._run_case(ci.stack(di), objective)

        if self.options.workers > 1:
            with ThreadPoolExecutor(max_workers=min(self.options.workers, len(cases))) as pool:
                results = list(pool.map(run, cases))
        else:
            results = [run(case) for case in cases]

        feasible = [result for result in results if result.feasible]
        if not feasible:
            failed = [result.di_case for result in results if result.termination == SOLVER_FAILURE]
            if failed:
                raise NumericalError(f"phase-1 solver failed for DI case(s) {failed}; feasibility is undetermined")
            best_slack = max(result.phase1_slack for result in results)
            raise InfeasibleDesignError(
                f"no DI case admits a feasible frame (best phase-1 slack {best_slack:.4g})", max_slack=best_slack
            )
        winner = min(feasible, key=lambda result: result.final_bcrb)
        self.logger.info(
            "SCA design finished: case %d wins with BCRB %.6g after %d iteration(s) (%s).",
            winner.di_case,
            winner.final_bcrb,
            winner.iterations,
            winner.termination,
        )
        report = SolveReport(
            chosen_case=winner.di_case,
            objective_trace=list(winner.objective_trace),
            iterations=winner.iterations,
            termination=winner.termination,
            final_bcrb=winner.final_bcrb,
            cases=results,
        )
        return winner.X, report

    def _run_case(self, constraints, objective: BcrbObjective) -> CaseResult:
        case = constraints.di_case
        try:
            start = phase1_feasible(constraints, logger=self.logger)
        except NumericalError as exc:
            self.logger.warning("DI case %d: phase-1 solver failed (%s).", case, exc)
            return CaseResult(case, False, float("nan"), termination=SOLVER_FAILURE)
        if not start.feasible:
            self.logger.info("DI case %d infeasible (phase-1 slack %.4g).", case, start.max_slack)
            return CaseResult(case, False, start.max_slack)

        solver = LinearSubproblemSolver(constraints, logger=self.logger)

        def solve_direction(G: np.ndarray) -> np.ndarray:
            solution = solver.solve(G)
            if not solution.ok:
                raise NumericalError(f"subproblem for DI case {case} returned status {solution.status}")
            return solution.X_star

        result = sca_iterate(
            objective, objective.gradient, start.X, solve_direction, self.options, self.logger, f"case {case}"
        )
        self.logger.info(
            "DI case %d: BCRB %.6g -> %.6g in %d iteration(s), %s.",
            case,
            result.trace[0],
            result.trace[-1],
            len(result.trace) - 1,
            result.termination,
        )
        return CaseResult(
            di_case=case,
            feasible=True,
            phase1_slack=start.max_slack,
            objective_trace=result.trace,
            termination=result.termination,
            max_violation=constraints.max_violation(result.X),
            X=result.X,
        )


def sca_design(
    cfg: SystemConfig,
    channels: CommChannelSet,
    symbols: SymbolFrame,
    priors: TargetPriorSet,
    factors: ExpectationFactors,
    qos: QosTargets,
    options: Optional[ScaOptions] = None,
    *,
    logger: Optional[logging.Logger] = None,
) -> tuple[TransmitFrame, SolveReport]:
    return ScaDesigner(cfg, options, logger=logger).design(channels, symbols, priors, factors, qos)


def _solver_number(section: Dict[str, Any], key: str, default, cast):
    value = section.get(key, default)
    if isinstance(value, bool):
        raise ConfigurationError(f"must be a number, got {value!r}", field=f"solver.{key}")
    try:
        return cast(value)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"must be a number, got {value!r}", field=f"solver.{key}") from exc


def options_from_solver_section(section: Dict[str, Any], *, workers: Optional[int] = None) -> ScaOptions:
    scaling = section.get("prior_scaling", "unscaled")
    if scaling not in PRIOR_SCALING_MODES:
        raise ConfigurationError(f"must be one of {PRIOR_SCALING_MODES}, got {scaling!r}", field="solver.prior_scaling")
    return ScaOptions(
        epsilon=_solver_number(section, "epsilon", 1e-5, float),
        max_iter=_solver_number(section, "max_iter", 50, int),
        line_search=section.get("line_search", "armijo"),
        jp_scaled=scaling == "scaled",
        ridge=bool(section.get("ridge", False)),
        workers=int(workers) if workers is not None else _solver_number(section, "workers", 1, int),
    )
