"""Evaluation of designed frames: constellations, SER, SINR/SNR, beampatterns and tradeoff sweeps."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from core.array_model import (
    CommChannelSet,
    PskConstellation,
    SystemConfig,
    TransmitFrame,
    beampattern,
)
from core.bfim import ExpectationFactors
from core.errors import InfeasibleDesignError, NumericalError
from core.precoder.block_level import block_level_design
from core.precoder.constraints import (
    SymbolFrame,
    available_di_cases,
    ci_margin,
    ci_thresholds,
    di_case_margin,
    di_thresholds,
    eve_gains,
)
from core.precoder.sca import QosTargets, ScaOptions, sca_design
from core.priors import TargetPriorSet
from utils.logger import setup_logger

Z_95 = 1.96
_MARGIN_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class ConstellationPoints:
    """Noiseless rotated points per (entity, slot) with their region margin and label."""

    side: str
    entity: np.ndarray
    slot: np.ndarray
    points: np.ndarray
    margin: np.ndarray
    label: np.ndarray

    @property
    def inside_fraction(self) -> float:
        return float(np.mean(self.margin >= -_MARGIN_TOL)) if self.margin.size else 1.0


def _symbol_indices(symbols: SymbolFrame) -> np.ndarray:
    if symbols.indices is not None:
        return np.asarray(symbols.indices)
    return PskConstellation(symbols.psk_order).decide(symbols.symbols)


def _flatten(side: str, values: np.ndarray, margin: np.ndarray, labels: np.ndarray) -> ConstellationPoints:
    entity, slot = np.indices(values.shape)
    return ConstellationPoints(
        side, entity.reshape(-1), slot.reshape(-1), values.reshape(-1), margin.reshape(-1), labels.reshape(-1)
    )


def received_constellation(
    X: TransmitFrame,
    symbols: SymbolFrame,
    cfg: SystemConfig,
    qos: QosTargets,
    *,
    side: str = "user",
    channels: Optional[CommChannelSet] = None,
    priors: Optional[TargetPriorSet] = None,
    di_case: Optional[int] = None,
) -> ConstellationPoints:
    """
    Rotated noiseless points v (users) or u (Eves).

    User points are labelled ``constructive`` or ``outside``. Eve points are
    labelled with the DI case they satisfy; with ``di_case`` set, only that case
    counts and the margin is that case's margin.
    """
    X = np.asarray(X, dtype=complex)
    phi = cfg.half_angle
    if side == "user":
        if channels is None:
            raise ValueError("user constellation needs the channel set")
        points = symbols.symbols.conj() * (channels.h.conj() @ X)
        thresholds = (ci_thresholds(qos.gamma_db, cfg.noise_cu_mw) * np.ones(channels.n_users))[:, None]
        margin = ci_margin(points, thresholds, phi)
        labels = np.where(margin >= -_MARGIN_TOL, "constructive", "outside")
        return _flatten(side, points, margin, labels)

    if side != "eve":
        raise ValueError(f"side must be 'user' or 'eve', got {side!r}")
    if priors is None:
        raise ValueError("eve constellation needs the target priors")
    points = symbols.reference.conj()[None, :] * (eve_gains(priors, cfg.n_tx) @ X)
    tau = (di_thresholds(qos.tau_db, cfg.noise_eve_mw) * np.ones(priors.n_targets))[:, None]
    cases = (di_case,) if di_case is not None else available_di_cases(cfg.psk_order)
    margins = np.stack([di_case_margin(points, tau, phi, case) for case in cases])
    best = np.argmax(margins, axis=0)
    margin = np.take_along_axis(margins, best[None], axis=0)[0]
    case_labels = np.array([f"case-{case}" for case in cases])[best]
    labels = np.where(margin >= -_MARGIN_TOL, case_labels, "violated")
    return _flatten(side, points, margin, labels)


@dataclass(frozen=True, eq=False)
class SerResult:
    """
    Symbol error rates from Monte-Carlo trials.

    ``eve_pair_ser[n, k]`` is Eve n decoding user k's stream; ``eve_ser`` averages
    over users and ``eve_reference_ser`` is the stream of user 1, the rotation
    reference of the DI constraints.
    """

    user_ser: np.ndarray
    eve_pair_ser: np.ndarray
    trials: int
    decisions: int

    @property
    def eve_ser(self) -> np.ndarray:
        return self.eve_pair_ser.mean(axis=1)

    @property
    def eve_reference_ser(self) -> np.ndarray:
        return self.eve_pair_ser[:, 0]

    @property
    def mean_eve_ser(self) -> float:
        return float(self.eve_pair_ser.mean())

    def half_width(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return Z_95 * np.sqrt(p * (1.0 - p) / self.decisions)

    @property
    def user_half_width(self) -> np.ndarray:
        return self.half_width(self.user_ser)

    @property
    def eve_half_width(self) -> np.ndarray:
        return self.half_width(self.eve_ser)


def _complex_noise(rng: np.random.Generator, variance: np.ndarray, shape: tuple) -> np.ndarray:
    scale = np.sqrt(np.asarray(variance, dtype=float) / 2.0)[:, None]
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def simulate_ser(
    X: TransmitFrame,
    symbols: SymbolFrame,
    cfg: SystemConfig,
    *,
    channels: CommChannelSet,
    priors: TargetPriorSet,
    trials: int,
    rng: np.random.Generator,
) -> SerResult:
    """
    Re-transmit X ``trials`` times through AWGN and decide by PSK phase sector.

    Noise is drawn trial by trial (users first, then Eves), so the estimate is
    reproducible for a given generator state.
    """
    if int(trials) < 1:
        raise ValueError(f"trials must be >= 1, got {trials!r}")
    X = np.asarray(X, dtype=complex)
    psk = PskConstellation(symbols.psk_order)
    sent = _symbol_indices(symbols)
    user_clean = channels.h.conj() @ X
    eve_clean = eve_gains(priors, cfg.n_tx) @ X
    n_users, n_slots = user_clean.shape
    n_eves = eve_clean.shape[0]

    user_errors = np.zeros(n_users)
    eve_errors = np.zeros((n_eves, n_users))
    for _ in range(int(trials)):
        y_user = user_clean + _complex_noise(rng, cfg.noise_cu_mw, (n_users, n_slots))
        y_eve = eve_clean + _complex_noise(rng, cfg.noise_eve_mw, (n_eves, n_slots))
        user_errors += np.sum(psk.decide(y_user) != sent, axis=1)
        decided = psk.decide(y_eve)
        eve_errors += np.sum(decided[:, None, :] != sent[None, :, :], axis=2)

    decisions = int(trials) * n_slots
    return SerResult(user_errors / decisions, eve_errors / decisions, int(trials), decisions)


def trials_for_decisions(decisions: int, n_slots: int) -> int:
    return int(np.ceil(decisions / n_slots))


def eavesdrop_sinr(X: TransmitFrame, priors: TargetPriorSet, symbols: SymbolFrame, noise_eve_mw) -> np.ndarray:
    """SINR^E[n, k] = mean|β a(μ_n)ᴴ x_l|² / (mean|β a(μ_n)ᴴ x_l − s[k, l]|² + σ²_E,n)."""
    X = np.asarray(X, dtype=complex)
    received = eve_gains(priors, X.shape[0]) @ X
    signal = np.mean(np.abs(received) ** 2, axis=1)
    distortion = np.mean(np.abs(received[:, None, :] - symbols.symbols[None, :, :]) ** 2, axis=2)
    noise = np.asarray(noise_eve_mw, dtype=float) * np.ones(priors.n_targets)
    return signal[:, None] / (distortion + noise[:, None])


def frame_snr(X: TransmitFrame, channels: CommChannelSet, noise_cu_mw) -> np.ndarray:
    """mean_l |h_kᴴ x_l|² / σ²_k."""
    received = channels.received(np.asarray(X, dtype=complex))
    noise = np.asarray(noise_cu_mw, dtype=float) * np.ones(channels.n_users)
    return np.mean(np.abs(received) ** 2, axis=1) / noise


def achieved_sinr(W: np.ndarray, channels: CommChannelSet, noise_cu_mw) -> np.ndarray:
    """Block-level SINR_k of a precoding matrix with unit-power uncorrelated symbols."""
    gains = np.abs(channels.h.conj() @ np.asarray(W, dtype=complex)) ** 2
    signal = np.diag(gains)
    noise = np.asarray(noise_cu_mw, dtype=float) * np.ones(channels.n_users)
    return signal / (gains.sum(axis=1) - signal + noise)


class BeampatternTable(NamedTuple):
    theta_deg: np.ndarray
    power: np.ndarray
    power_db: np.ndarray

    @property
    def peak(self) -> float:
        return float(np.max(self.power))


def angle_grid_deg(step_deg: float = 0.1) -> np.ndarray:
    """[−90°, 90°] inclusive at ``step_deg``."""
    count = int(round(180.0 / step_deg))
    if count < 1 or not np.isclose(count * step_deg, 180.0):
        raise ValueError(f"step must divide 180 degrees, got {step_deg!r}")
    return np.linspace(-90.0, 90.0, count + 1)


def beampattern_table(R_x: np.ndarray, step_deg: float = 0.1) -> BeampatternTable:
    """P(θ) with the normalized copy in dB (peak = 0 dB)."""
    theta = angle_grid_deg(step_deg)
    power = beampattern(R_x, np.deg2rad(theta))
    peak = float(np.max(power))
    if peak <= 0:
        return BeampatternTable(theta, power, np.full(theta.shape, -np.inf))
    power_db = 10.0 * np.log10(np.maximum(power, peak * 1e-30) / peak)
    return BeampatternTable(theta, power, power_db)


@dataclass(frozen=True)
class LobeMetrics:
    target_deg: float
    peak_deg: float
    peak_gain: float
    peak_gain_db: float
    width_3db_deg: float

    def to_dict(self) -> Dict[str, float]:
        return {
            "target_deg": self.target_deg,
            "peak_deg": self.peak_deg,
            "peak_gain": self.peak_gain,
            "peak_gain_db": self.peak_gain_db,
            "width_3db_deg": self.width_3db_deg,
        }


def _crossing(theta: np.ndarray, power: np.ndarray, start: int, step: int, level: float) -> float:
    i = start
    while 0 <= i + step < power.size and power[i + step] >= level:
        i += step
    j = i + step
    if not 0 <= j < power.size:
        return float(theta[i])
    # linear interpolation between the last sample above and the first below
    fraction = (power[i] - level) / (power[i] - power[j])
    return float(theta[i] + fraction * (theta[j] - theta[i]))


def main_lobe_metrics(
    table: BeampatternTable, targets_deg: Sequence[float], search_deg: float = 10.0
) -> List[LobeMetrics]:
    """Highest local maximum within ``search_deg`` of each target, with its half-power width."""
    theta, power = table.theta_deg, table.power
    interior = np.arange(1, power.size - 1)
    is_peak = (power[interior] >= power[interior - 1]) & (power[interior] >= power[interior + 1])
    peaks = interior[is_peak]

    metrics = []
    for target in targets_deg:
        near = peaks[np.abs(theta[peaks] - target) <= search_deg]
        if near.size:
            index = int(near[np.argmax(power[near])])
        else:
            index = int(np.argmin(np.abs(theta - target)))
        gain = float(power[index])
        level = gain / 2.0
        width = _crossing(theta, power, index, 1, level) - _crossing(theta, power, index, -1, level)
        metrics.append(
            LobeMetrics(
                target_deg=float(target),
                peak_deg=float(theta[index]),
                peak_gain=gain,
                peak_gain_db=float(10 * np.log10(gain)) if gain > 0 else float("-inf"),
                width_3db_deg=float(width),
            )
        )
    return metrics


class DesignInputs(NamedTuple):
    """Channels, symbols and factors shared by every design at one seed."""

    channels: CommChannelSet
    symbols: SymbolFrame
    factors: ExpectationFactors


@dataclass(frozen=True)
class TradeoffPoint:
    gamma_db: float
    power_budget_dbm: float
    seed: int
    bcrb_ci: float
    bcrb_block: float
    ci_case: Optional[int] = None
    status: str = "ok"


@dataclass(frozen=True)
class SerPoint:
    gamma_db: float
    power_budget_dbm: float
    seed: int
    result: Optional[SerResult]
    status: str = "ok"


def _grid(gamma_grid_db, power_list_dbm, seeds) -> List[tuple]:
    if not len(gamma_grid_db) or not len(power_list_dbm) or not len(seeds):
        raise ValueError("sweep grids must be non-empty")
    return [(int(s), float(p), float(g)) for s in seeds for p in power_list_dbm for g in gamma_grid_db]


def _run_grid(task: Callable, points: List[tuple], workers: int) -> list:
    if workers > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(task, points))
    return [task(point) for point in points]


def sweep_tradeoff(
    cfg: SystemConfig,
    priors: TargetPriorSet,
    gamma_grid_db: Sequence[float],
    power_list_dbm: Sequence[float],
    seeds: Sequence[int],
    inputs_for_seed: Callable[[int], DesignInputs],
    *,
    tau_db,
    options: Optional[ScaOptions] = None,
    workers: int = 1,
    logger: Optional[logging.Logger] = None,
) -> List[TradeoffPoint]:
    """
    CI and block-level BCRB for every (seed, P_T, Γ), returned in grid order.

    Both designs at a grid point share channels, symbols and factors. An
    infeasible or numerically failed design yields a gap point with NaN in the
    failing column.
    """
    logger = logger or setup_logger("TradeoffSweep")
    points = _grid(gamma_grid_db, power_list_dbm, seeds)
    inputs = {seed: inputs_for_seed(seed) for seed in dict.fromkeys(point[0] for point in points)}
    options = options or ScaOptions()
    inner = replace(options, workers=1)

    def task(point: tuple) -> TradeoffPoint:
        seed, power, gamma = point
        point_cfg = replace(cfg, power_budget_dbm=power)
        shared = inputs[seed]
        qos = QosTargets.broadcast(gamma, tau_db, point_cfg)
        status = []
        try:
            _, report = sca_design(point_cfg, shared.channels, shared.symbols, priors, shared.factors, qos, inner, logger=logger)
            bcrb_ci, case = report.final_bcrb, report.chosen_case
        except InfeasibleDesignError:
            bcrb_ci, case = float("nan"), None
            status.append("ci-infeasible")
        except NumericalError as exc:
            logger.warning("CI design failed numerically at P_T=%.1f dBm, Γ=%.1f dB: %s", power, gamma, exc)
            bcrb_ci, case = float("nan"), None
            status.append("ci-numerical-failure")
        try:
            design = block_level_design(
                point_cfg, shared.channels, priors, shared.factors, qos.gamma_db, shared.symbols, inner, logger=logger
            )
            bcrb_block = design.report.final_bcrb
        except InfeasibleDesignError:
            bcrb_block = float("nan")
            status.append("block-infeasible")
        except NumericalError as exc:
            logger.warning("Block-level design failed numerically at P_T=%.1f dBm, Γ=%.1f dB: %s", power, gamma, exc)
            bcrb_block = float("nan")
            status.append("block-numerical-failure")
        logger.info("Sweep point seed=%d P_T=%.1f dBm Γ=%.1f dB: CI %.6g, block %.6g.", seed, power, gamma, bcrb_ci, bcrb_block)
        return TradeoffPoint(gamma, power, seed, bcrb_ci, bcrb_block, case, ",".join(status) or "ok")

    return _run_grid(task, points, workers)


def sweep_ser(
    cfg: SystemConfig,
    priors: TargetPriorSet,
    gamma_grid_db: Sequence[float],
    power_list_dbm: Sequence[float],
    seeds: Sequence[int],
    inputs_for_seed: Callable[[int], DesignInputs],
    noise_rng_for: Callable[[int, int], np.random.Generator],
    *,
    tau_db,
    decisions: int,
    options: Optional[ScaOptions] = None,
    workers: int = 1,
    logger: Optional[logging.Logger] = None,
) -> List[SerPoint]:
    """
    Design with CI/DI at every (seed, P_T, Γ) and estimate SER.

    ``noise_rng_for(seed, index)`` supplies an independent noise stream per grid
    point so results do not depend on the worker count.
    """
    logger = logger or setup_logger("SerSweep")
    points = _grid(gamma_grid_db, power_list_dbm, seeds)
    inputs = {seed: inputs_for_seed(seed) for seed in dict.fromkeys(point[0] for point in points)}
    inner = replace(options or ScaOptions(), workers=1)
    trials = trials_for_decisions(decisions, cfg.n_slots)

    def task(indexed: tuple) -> SerPoint:
        index, (seed, power, gamma) = indexed
        point_cfg = replace(cfg, power_budget_dbm=power)
        shared = inputs[seed]
        qos = QosTargets.broadcast(gamma, tau_db, point_cfg)
        try:
            X, _ = sca_design(point_cfg, shared.channels, shared.symbols, priors, shared.factors, qos, inner, logger=logger)
        except InfeasibleDesignError:
            return SerPoint(gamma, power, seed, None, "infeasible")
        except NumericalError as exc:
            logger.warning("SER design failed numerically at P_T=%.1f dBm, Γ=%.1f dB: %s", power, gamma, exc)
            return SerPoint(gamma, power, seed, None, "numerical-failure")
        result = simulate_ser(
            X, shared.symbols, point_cfg, channels=shared.channels, priors=priors, trials=trials, rng=noise_rng_for(seed, index)
        )
        logger.info(
            "SER point seed=%d P_T=%.1f dBm Γ=%.1f dB: user %s, eve %.4f.",
            seed,
            power,
            gamma,
            np.array2string(result.user_ser, precision=4),
            result.mean_eve_ser,
        )
        return SerPoint(gamma, power, seed, result)

    return _run_grid(task, list(enumerate(points)), workers)
