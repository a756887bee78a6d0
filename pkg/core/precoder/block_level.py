"""Block-level benchmark: X = W·S with per-user SINR constraints in second-order-cone form."""

from __future__ import annotations

import logging
from typing import NamedTuple, Optional, Sequence

import cvxpy as cp
import numpy as np

from core.array_model import CommChannelSet, SystemConfig, TransmitFrame, db_to_linear
from core.bfim import BcrbObjective, ExpectationFactors
from core.errors import ConfigurationError, InfeasibleDesignError, NumericalError
from core.precoder.constraints import SymbolFrame
from core.precoder.sca import CaseResult, ScaOptions, SolveReport, sca_iterate
from core.precoder.subproblem import SOLVER_SETTINGS
from core.priors import TargetPriorSet, prior_fim
from utils.logger import setup_logger

_SOLVED = (cp.OPTIMAL, cp.OPTIMAL_INACCURATE)


class BlockLevelDesign(NamedTuple):
    precoding: np.ndarray
    frame: TransmitFrame
    report: SolveReport


class SinrConstraintSet:
    """
    Convex SINR feasibility region for W (n_tx x K).

    The phase of each w_k is fixed so that h_kᴴ w_k is real, turning
    SINR_k ≥ Γ_k into Re(h_kᴴ w_k) ≥ √Γ_k ‖[h_kᴴ w_i (i ≠ k), σ_k]‖.
    The variables hold W/√P_T so the power constraint is the unit ball.
    """

    def __init__(self, channels: CommChannelSet, gammas_db: Sequence[float], noise_mw: Sequence[float], cfg: SystemConfig):
        if channels.n_users > cfg.n_tx:
            raise ConfigurationError(
                f"block-level precoding needs n_users <= n_tx ({channels.n_users} > {cfg.n_tx})", field="n_users"
            )
        self.cfg = cfg
        self.channels = channels
        self.gammas = db_to_linear(gammas_db) * np.ones(channels.n_users)
        self.noise = np.asarray(noise_mw, dtype=float) * np.ones(channels.n_users)
        self.radius = float(np.sqrt(cfg.power_budget_mw))
        self._scale = self.radius if self.radius > 0 else 1.0

        shape = (cfg.n_tx, channels.n_users)
        self.Wr = cp.Variable(shape)
        self.Wi = cp.Variable(shape)
        self.constraints = self._build()

    def _build(self) -> list:
        hr, hi = self.channels.h.real, self.channels.h.imag
        users = range(self.channels.n_users)
        constraints = [cp.norm(cp.hstack([self.Wr, self.Wi]), "fro") <= self.radius / self._scale]
        for k in users:
            real_part = hr[k] @ self.Wr + hi[k] @ self.Wi
            imag_part = hr[k] @ self.Wi - hi[k] @ self.Wr
            others = [i for i in users if i != k]
            parts = [cp.Constant(np.array([np.sqrt(self.noise[k]) / self._scale]))]
            if others:
                parts = [real_part[others], imag_part[others], *parts]
            constraints.append(cp.SOC(real_part[k] / np.sqrt(self.gammas[k]), cp.hstack(parts)))
            constraints.append(imag_part[k] == 0)
        return constraints

    def value(self) -> np.ndarray:
        return self._scale * (np.asarray(self.Wr.value) + 1j * np.asarray(self.Wi.value))

    def solve(self, problem: cp.Problem, what: str) -> np.ndarray:
        try:
            problem.solve(solver=cp.CLARABEL, **SOLVER_SETTINGS)
        except cp.error.SolverError as exc:
            raise NumericalError(f"{what} solver failed: {exc}") from exc
        if problem.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            raise InfeasibleDesignError(f"SINR targets cannot be met within the power budget ({what})")
        if problem.status not in _SOLVED or self.Wr.value is None:
            raise NumericalError(f"{what} returned status {problem.status}")
        return self.value()

    def achieved_sinr(self, W: np.ndarray) -> np.ndarray:
        gains = np.abs(self.channels.h.conj() @ W) ** 2
        signal = np.diag(gains)
        return signal / (gains.sum(axis=1) - signal + self.noise)


def minimum_power_precoder(
    channels: CommChannelSet, gammas_db: Sequence[float], noise_mw: Sequence[float], cfg: SystemConfig
) -> np.ndarray:
    """Least-power W meeting every SINR target; MRT for a single user."""
    region = SinrConstraintSet(channels, gammas_db, noise_mw, cfg)
    power = cp.sum_squares(region.Wr) + cp.sum_squares(region.Wi)
    return region.solve(cp.Problem(cp.Minimize(power), region.constraints), "minimum-power")


class BlockLevelDesigner:
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
        priors: TargetPriorSet,
        factors: ExpectationFactors,
        gammas_db: Sequence[float],
        symbols: SymbolFrame,
    ) -> BlockLevelDesign:
        cfg = self.cfg
        if symbols.n_users != channels.n_users or symbols.n_slots != cfg.n_slots:
            raise ValueError("symbol frame does not match the channel set and frame length")
        objective = BcrbObjective(
            factors, prior_fim(priors), cfg, jp_scaled=self.options.jp_scaled, ridge=self.options.ridge
        )
        region = SinrConstraintSet(channels, gammas_db, cfg.noise_cu_mw, cfg)
        start = minimum_power_precoder(channels, gammas_db, cfg.noise_cu_mw, cfg)

        Gr = cp.Parameter(region.Wr.shape)
        Gi = cp.Parameter(region.Wi.shape)
        linearized = cp.Problem(
            cp.Minimize(cp.sum(cp.multiply(Gr, region.Wr) + cp.multiply(Gi, region.Wi))), region.constraints
        )

        def value(W: np.ndarray) -> float:
            return objective.bundle_from_covariance(W @ W.conj().T).bcrb

        def gradient(W: np.ndarray) -> np.ndarray:
            return 2.0 * objective.covariance_gradient(W @ W.conj().T) @ W

        def solve_direction(G: np.ndarray) -> np.ndarray:
            scale = np.linalg.norm(G)
            unit = G / scale if scale > 0 else G
            Gr.value, Gi.value = unit.real, unit.imag
            return region.solve(linearized, "block-level subproblem")

        trace = sca_iterate(value, gradient, start, solve_direction, self.options, self.logger, "block-level")
        W = trace.X
        sinr = region.achieved_sinr(W)
        self.logger.info(
            "Block-level design: BCRB %.6g after %d iteration(s) (%s), min SINR margin %.3g dB.",
            trace.trace[-1],
            len(trace.trace) - 1,
            trace.termination,
            float(np.min(10 * np.log10(sinr / region.gammas))),
        )
        case = CaseResult(
            di_case=None,
            feasible=True,
            phase1_slack=float(np.min(sinr - region.gammas)),
            objective_trace=trace.trace,
            termination=trace.termination,
            max_violation=float(max(np.max(region.gammas - sinr), np.linalg.norm(W) - region.radius, 0.0)),
            X=W,
        )
        report = SolveReport(
            chosen_case=None,
            objective_trace=list(trace.trace),
            iterations=case.iterations,
            termination=trace.termination,
            final_bcrb=trace.trace[-1],
            cases=[case],
        )
        return BlockLevelDesign(W, W @ symbols.symbols, report)


def block_level_design(
    cfg: SystemConfig,
    channels: CommChannelSet,
    priors: TargetPriorSet,
    factors: ExpectationFactors,
    gammas_db: Sequence[float],
    symbols: SymbolFrame,
    options: Optional[ScaOptions] = None,
    *,
    logger: Optional[logging.Logger] = None,
) -> BlockLevelDesign:
    """Minimize the BCRB of R_x = W Wᴴ under block-level SINR constraints and emit X = W·S."""
    return BlockLevelDesigner(cfg, options, logger=logger).design(channels, priors, factors, gammas_db, symbols)
