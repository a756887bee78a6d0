"""Physical model: ULA steering, target response, covariance, beampattern, PSK, channels."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from core.errors import ConfigurationError

# Complex n_tx x L transmit matrix, one column per symbol slot.
TransmitFrame = np.ndarray

_SUPPORTED_PSK = (2, 4, 8, 16)
_HERMITIAN_TOL = 1e-9


def dbm_to_mw(value_dbm) -> np.ndarray:
    return np.power(10.0, np.asarray(value_dbm, dtype=float) / 10.0)


def db_to_linear(value_db) -> np.ndarray:
    return np.power(10.0, np.asarray(value_db, dtype=float) / 10.0)


def _per_entity(value, count: int, name: str) -> tuple[float, ...]:
    values = np.atleast_1d(np.asarray(value, dtype=float))
    if values.size == 1:
        values = np.repeat(values, count)
    if values.size != count:
        raise ConfigurationError(f"expected 1 or {count} values, got {values.size}", field=name)
    if not np.all(np.isfinite(values)):
        raise ConfigurationError("values must be finite", field=name)
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class SystemConfig:
    """Array sizes, frame length, entity counts, powers (dBm) and constellation order."""

    n_tx: int
    n_rx: int
    n_slots: int
    n_users: int
    n_targets: int
    power_budget_dbm: float
    noise_cu_dbm: tuple[float, ...] | float = 0.0
    noise_eve_dbm: tuple[float, ...] | float = 0.0
    noise_sensing_dbm: float = 0.0
    psk_order: int = 4

    def __post_init__(self) -> None:
        for name in ("n_tx", "n_rx", "n_slots", "n_users", "n_targets"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ConfigurationError(f"must be a positive integer, got {value!r}", field=name)
            object.__setattr__(self, name, int(value))
        for name in ("n_tx", "n_rx"):
            if getattr(self, name) % 2:
                raise ConfigurationError(
                    f"must be even for the center-referenced ULA, got {getattr(self, name)}", field=name
                )
        if self.psk_order not in _SUPPORTED_PSK:
            raise ConfigurationError(f"must be one of {_SUPPORTED_PSK}, got {self.psk_order!r}", field="psk_order")
        for name in ("power_budget_dbm", "noise_sensing_dbm"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigurationError("must be finite", field=name)
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "noise_cu_dbm", _per_entity(self.noise_cu_dbm, self.n_users, "noise_cu_dbm"))
        object.__setattr__(self, "noise_eve_dbm", _per_entity(self.noise_eve_dbm, self.n_targets, "noise_eve_dbm"))

    @property
    def power_budget_mw(self) -> float:
        return float(dbm_to_mw(self.power_budget_dbm))

    @property
    def noise_cu_mw(self) -> np.ndarray:
        return dbm_to_mw(self.noise_cu_dbm)

    @property
    def noise_eve_mw(self) -> np.ndarray:
        return dbm_to_mw(self.noise_eve_dbm)

    @property
    def noise_sensing_mw(self) -> float:
        return float(dbm_to_mw(self.noise_sensing_dbm))

    @property
    def half_angle(self) -> float:
        return np.pi / self.psk_order

    @property
    def n_params(self) -> int:
        return 3 * self.n_targets


@dataclass(frozen=True)
class UlaGeometry:
    """Half-wavelength ULA with the phase reference at the array center."""

    n_elems: int

    def __post_init__(self) -> None:
        if self.n_elems < 1 or self.n_elems % 2:
            raise ConfigurationError(f"ULA element count must be even, got {self.n_elems}", field="n_elems")

    @property
    def phase_weights(self) -> np.ndarray:
        # i - (n+1)/2 for 1-based i, antisymmetric around the center
        return np.arange(self.n_elems) - (self.n_elems - 1) / 2.0

    def steering(self, theta: float) -> np.ndarray:
        return np.exp(1j * np.pi * self.phase_weights * np.sin(theta))

    def steering_derivative(self, theta: float) -> np.ndarray:
        weights = self.phase_weights
        return 1j * np.pi * weights * np.cos(theta) * np.exp(1j * np.pi * weights * np.sin(theta))


def steering_vector(theta: float, n: int) -> np.ndarray:
    """a(θ) with element i equal to exp(jπ(i − (n+1)/2) sin θ)."""
    return UlaGeometry(n).steering(theta)


def steering_derivative(theta: float, n: int) -> np.ndarray:
    """∂a/∂θ; orthogonal to a(θ) because the phase weights are antisymmetric."""
    return UlaGeometry(n).steering_derivative(theta)


def steering_matrix(thetas: Sequence[float], n: int) -> np.ndarray:
    """Steering vectors for a grid of angles as columns (n x len(thetas))."""
    weights = UlaGeometry(n).phase_weights
    return np.exp(1j * np.pi * np.outer(weights, np.sin(np.asarray(thetas, dtype=float))))


def steering_derivative_matrix(thetas: Sequence[float], n: int) -> np.ndarray:
    """∂a/∂θ for a grid of angles as columns (n x len(thetas))."""
    thetas = np.asarray(thetas, dtype=float)
    weights = UlaGeometry(n).phase_weights[:, None]
    return 1j * np.pi * weights * np.cos(thetas)[None, :] * steering_matrix(thetas, n)


def target_response(alphas: Sequence[complex], thetas: Sequence[float], cfg: SystemConfig) -> np.ndarray:
    """H_S = Σ_n α_n b(θ_n) a(θ_n)^H, shape n_rx x n_tx."""
    alphas = np.atleast_1d(np.asarray(alphas, dtype=complex))
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    if alphas.shape != thetas.shape:
        raise ValueError(f"alphas and thetas differ in length: {alphas.size} != {thetas.size}")
    a = steering_matrix(thetas, cfg.n_tx)
    b = steering_matrix(thetas, cfg.n_rx)
    return (b * alphas) @ a.conj().T


def sample_covariance(X: TransmitFrame) -> np.ndarray:
    """R_x = X X^H / L."""
    X = np.asarray(X)
    if X.ndim != 2 or X.size == 0:
        raise ValueError(f"transmit frame must be a non-empty 2-D array, got shape {X.shape}")
    R = X @ X.conj().T / X.shape[1]
    return (R + R.conj().T) / 2


def beampattern(R_x: np.ndarray, grid: Sequence[float]) -> np.ndarray:
    """P(θ) = a(θ)^H R_x a(θ) over ``grid`` (radians), clamped at zero."""
    R_x = np.asarray(R_x)
    scale = max(1.0, float(np.abs(R_x).max(initial=0.0)))
    if not np.allclose(R_x, R_x.conj().T, atol=_HERMITIAN_TOL * scale):
        raise ValueError("covariance matrix is not Hermitian")
    A = steering_matrix(grid, R_x.shape[0])
    power = np.real(np.einsum("ig,ij,jg->g", A.conj(), R_x, A))
    return np.clip(power, 0.0, None)


@dataclass(frozen=True)
class PskConstellation:
    """M-PSK points e^{j2πm/M} with sector decisions of half-angle π/M."""

    order: int
    points: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.order < 2:
            raise ConfigurationError(f"PSK order must be at least 2, got {self.order}", field="psk_order")
        object.__setattr__(self, "points", np.exp(2j * np.pi * np.arange(self.order) / self.order))

    @property
    def half_angle(self) -> float:
        return np.pi / self.order

    def decide(self, observations: np.ndarray) -> np.ndarray:
        """Index of the nearest constellation point (phase-sector decision)."""
        step = 2 * np.pi / self.order
        return np.mod(np.rint(np.angle(observations) / step), self.order).astype(int)


@dataclass(frozen=True)
class CommChannelSet:
    """MISO channels, one row h_k per user (n_users x n_tx)."""

    h: np.ndarray

    def __post_init__(self) -> None:
        h = np.atleast_2d(np.asarray(self.h, dtype=complex))
        if not np.all(np.isfinite(h)):
            raise ValueError("channel entries must be finite")
        object.__setattr__(self, "h", h)

    @property
    def n_users(self) -> int:
        return self.h.shape[0]

    def received(self, X: TransmitFrame) -> np.ndarray:
        """Noiseless h_k^H x_l for every user and slot (n_users x L)."""
        return self.h.conj() @ X


def generate_rayleigh_channels(cfg: SystemConfig, seed) -> CommChannelSet:
    """i.i.d. unit-variance circularly-symmetric complex Gaussian channels."""
    rng = np.random.default_rng(seed)
    shape = (cfg.n_users, cfg.n_tx)
    h = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    return CommChannelSet(h)
