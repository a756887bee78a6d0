"""Linear CI/DI constraints over the real coordinates of a transmit frame."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from core.array_model import (
    CommChannelSet,
    PskConstellation,
    SystemConfig,
    TransmitFrame,
    db_to_linear,
    steering_matrix,
)
from core.errors import ConfigurationError
from core.priors import TargetPriorSet

DI_CASES = (1, 2, 3)
_UNIT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SymbolFrame:
    """Unit-modulus PSK symbols s[k, l] for every user and slot (n_users x L)."""

    symbols: np.ndarray
    psk_order: int
    indices: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        symbols = np.atleast_2d(np.asarray(self.symbols, dtype=complex))
        if not np.allclose(np.abs(symbols), 1.0, atol=_UNIT_TOL):
            raise ValueError("PSK symbols must be unit-modulus")
        object.__setattr__(self, "symbols", symbols)

    @property
    def n_users(self) -> int:
        return self.symbols.shape[0]

    @property
    def n_slots(self) -> int:
        return self.symbols.shape[1]

    @property
    def reference(self) -> np.ndarray:
        """Symbols of user 1, the rotation reference for eavesdroppers."""
        return self.symbols[0]


def random_symbol_frame(cfg: SystemConfig, rng: np.random.Generator) -> SymbolFrame:
    psk = PskConstellation(cfg.psk_order)
    indices = rng.integers(0, psk.order, size=(cfg.n_users, cfg.n_slots))
    return SymbolFrame(psk.points[indices], psk.order, indices)


def _is_half_plane(phi: float) -> bool:
    return bool(np.isclose(phi, np.pi / 2))


def _check_phi(phi: float) -> None:
    if not np.isfinite(phi) or phi <= 0 or phi > np.pi / 2 + 1e-12:
        raise ConfigurationError(f"PSK half-angle must lie in (0, π/2], got {phi!r}", field="psk_order")


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """
    Half-spaces A z ≤ b plus the ball ‖z‖₂ ≤ radius.

    ``z = [vec(Re X); vec(Im X)]`` with column-major vec, so the coordinates of
    slot l are contiguous. ``di_case`` is None for a set without DI rows.
    """

    A: sparse.csr_matrix
    b: np.ndarray
    radius: float
    n_tx: int
    n_slots: int
    di_case: Optional[int] = None

    def __post_init__(self) -> None:
        A = sparse.csr_matrix(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape != (b.size, self.n_coords):
            raise ValueError(f"constraint matrix shape {A.shape} does not match ({b.size}, {self.n_coords})")
        if not (np.all(np.isfinite(A.data)) and np.all(np.isfinite(b))):
            raise ValueError("constraint coefficients must be finite")
        if not np.isfinite(self.radius) or self.radius < 0:
            raise ValueError(f"ball radius must be finite and >= 0, got {self.radius!r}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def empty(cls, cfg: SystemConfig) -> "ConstraintSet":
        n_coords = 2 * cfg.n_tx * cfg.n_slots
        return cls(sparse.csr_matrix((0, n_coords)), np.zeros(0), power_radius(cfg), cfg.n_tx, cfg.n_slots)

    @property
    def n_rows(self) -> int:
        return self.b.size

    @property
    def n_coords(self) -> int:
        return 2 * self.n_tx * self.n_slots

    def frame_to_coords(self, X: TransmitFrame) -> np.ndarray:
        X = np.asarray(X)
        if X.shape != (self.n_tx, self.n_slots):
            raise ValueError(f"frame shape {X.shape} does not match ({self.n_tx}, {self.n_slots})")
        return np.concatenate([X.real.ravel(order="F"), X.imag.ravel(order="F")])

    def coords_to_frame(self, z: np.ndarray) -> TransmitFrame:
        half = self.n_tx * self.n_slots
        shape = (self.n_tx, self.n_slots)
        return z[:half].reshape(shape, order="F") + 1j * z[half:].reshape(shape, order="F")

    def slack(self, X: TransmitFrame) -> np.ndarray:
        return self.b - self.A @ self.frame_to_coords(X)

    def row_norms(self) -> np.ndarray:
        return np.sqrt(np.asarray(self.A.multiply(self.A).sum(axis=1)).reshape(-1))

    def max_violation(self, X: TransmitFrame) -> float:
        z = self.frame_to_coords(X)
        worst = float(np.linalg.norm(z) - self.radius)
        if self.n_rows:
            worst = max(worst, float(np.max(self.A @ z - self.b)))
        return max(worst, 0.0)

    def is_feasible(self, X: TransmitFrame, tol: float = 1e-8) -> bool:
        return self.max_violation(X) <= tol * (1.0 + float(np.linalg.norm(self.b)))

    def stack(self, other: "ConstraintSet") -> "ConstraintSet":
        if (self.n_tx, self.n_slots) != (other.n_tx, other.n_slots) or not np.isclose(self.radius, other.radius):
            raise ValueError("cannot stack constraint sets built for different frames")
        if self.di_case is not None and other.di_case is not None and self.di_case != other.di_case:
            raise ValueError(f"conflicting DI cases {self.di_case} and {other.di_case}")
        return ConstraintSet(
            sparse.vstack([self.A, other.A], format="csr"),
            np.concatenate([self.b, other.b]),
            self.radius,
            self.n_tx,
            self.n_slots,
            self.di_case if self.di_case is not None else other.di_case,
        )


def power_radius(cfg: SystemConfig) -> float:
    """√(L·P_T): the Frobenius-norm bound of the frame."""
    return float(np.sqrt(cfg.n_slots * cfg.power_budget_mw))


def _linear_rows(
    gains: np.ndarray,
    slots: np.ndarray,
    real_weight: np.ndarray,
    imag_weight: np.ndarray,
    n_slots: int,
) -> sparse.csr_matrix:
    """
    Rows of cr·Re(g^T x_l) + ci·Im(g^T x_l) in frame coordinates.

    ``gains`` holds one length-n_tx vector g per row; ``slots`` the slot index l.
    """
    n_rows, n_tx = gains.shape
    cr = real_weight[:, None]
    ci = imag_weight[:, None]
    on_real = cr * gains.real + ci * gains.imag
    on_imag = -cr * gains.imag + ci * gains.real

    row_index = np.repeat(np.arange(n_rows), n_tx)
    base = (slots[:, None] * n_tx + np.arange(n_tx)[None, :]).reshape(-1)
    offset = n_tx * n_slots
    data = np.concatenate([on_real.reshape(-1), on_imag.reshape(-1)])
    rows = np.concatenate([row_index, row_index])
    cols = np.concatenate([base, base + offset])
    return sparse.csr_matrix((data, (rows, cols)), shape=(n_rows, 2 * offset))


def ci_thresholds(gammas_db, noise_mw) -> np.ndarray:
    return np.sqrt(np.asarray(noise_mw, dtype=float) * db_to_linear(gammas_db))


def build_ci_constraints(
    channels: CommChannelSet,
    symbols: SymbolFrame,
    gammas_db: Sequence[float],
    noise_mw: Sequence[float],
    phi: float,
    cfg: SystemConfig,
) -> ConstraintSet:
    """
    Constructive-interference rows for every (user, slot).

    With v = conj(s[k, l])·h_kᴴ x_l and t_k = √(σ²_k Γ_k) the rows are
    ±Im(v) − tanφ·Re(v) ≤ −t_k·tanφ. For BPSK (φ = π/2) the region is the
    half-plane Re(v) ≥ t_k, one row per (k, l).
    """
    _check_phi(phi)
    if symbols.n_users != channels.n_users or symbols.n_slots != cfg.n_slots:
        raise ValueError("symbol frame does not match the channel set and frame length")
    thresholds = ci_thresholds(gammas_db, noise_mw) * np.ones(channels.n_users)

    gains = symbols.symbols.conj()[:, :, None] * channels.h.conj()[:, None, :]
    gains = gains.reshape(-1, cfg.n_tx)
    slots = np.tile(np.arange(cfg.n_slots), channels.n_users)
    t = np.repeat(thresholds, cfg.n_slots)
    ones = np.ones(t.size)

    if _is_half_plane(phi):
        A = _linear_rows(gains, slots, -ones, 0 * ones, cfg.n_slots)
        b = -t
    else:
        tan_phi = np.tan(phi)
        upper = _linear_rows(gains, slots, -tan_phi * ones, ones, cfg.n_slots)
        lower = _linear_rows(gains, slots, -tan_phi * ones, -ones, cfg.n_slots)
        A = sparse.vstack([upper, lower], format="csr")
        b = np.concatenate([-t * tan_phi, -t * tan_phi])
    return ConstraintSet(A, b, power_radius(cfg), cfg.n_tx, cfg.n_slots)


def eve_gains(priors: TargetPriorSet, n_tx: int) -> np.ndarray:
    """Row n is β_n·conj(a(μ_n)) so that β_n a(μ_n)ᴴ x = row @ x."""
    return priors.beta[:, None] * steering_matrix(priors.mu, n_tx).conj().T


def di_thresholds(tau_db, noise_eve_mw) -> np.ndarray:
    return np.sqrt(np.asarray(noise_eve_mw, dtype=float) * db_to_linear(tau_db))


def build_di_constraints(
    case: int,
    priors: TargetPriorSet,
    symbols: SymbolFrame,
    tau_db,
    noise_eve_mw: Sequence[float],
    phi: float,
    cfg: SystemConfig,
) -> ConstraintSet:
    """
    Destructive-interference rows for one case, applied to every (Eve, slot).

    With u = conj(s[1, l])·β_n a(μ_n)ᴴ x_l and τ_n = √(σ²_E,n·10^(τ_dB/10)):
    case 1 keeps Re(u) ≤ τ_n; case 2 keeps Im(u) ≥ (Re(u) − τ_n)·tanφ with
    Re(u) ≥ τ_n; case 3 mirrors case 2 in Im(u).
    """
    if case not in DI_CASES:
        raise ConfigurationError(f"must be one of {DI_CASES}, got {case!r}", field="di_case")
    _check_phi(phi)
    if _is_half_plane(phi) and case != 1:
        raise ConfigurationError("BPSK has a single destructive zone (case 1)", field="di_case")
    if symbols.n_slots != cfg.n_slots:
        raise ValueError("symbol frame does not match the frame length")

    n_eves = priors.n_targets
    thresholds = di_thresholds(tau_db, noise_eve_mw) * np.ones(n_eves)
    gains = symbols.reference.conj()[None, :, None] * eve_gains(priors, cfg.n_tx)[:, None, :]
    gains = gains.reshape(-1, cfg.n_tx)
    slots = np.tile(np.arange(cfg.n_slots), n_eves)
    tau = np.repeat(thresholds, cfg.n_slots)
    ones = np.ones(tau.size)
    zeros = np.zeros(tau.size)

    if case == 1:
        A = _linear_rows(gains, slots, ones, zeros, cfg.n_slots)
        b = tau
    else:
        tan_phi = np.tan(phi)
        sign = -1.0 if case == 2 else 1.0
        wedge = _linear_rows(gains, slots, tan_phi * ones, sign * ones, cfg.n_slots)
        floor = _linear_rows(gains, slots, -ones, zeros, cfg.n_slots)
        A = sparse.vstack([wedge, floor], format="csr")
        b = np.concatenate([tau * tan_phi, -tau])
    return ConstraintSet(A, b, power_radius(cfg), cfg.n_tx, cfg.n_slots, di_case=case)


def available_di_cases(psk_order: int) -> tuple[int, ...]:
    return (1,) if psk_order == 2 else DI_CASES


def ci_margin(points: np.ndarray, threshold, phi: float) -> np.ndarray:
    """Signed distance of rotated points into the constructive region (≥ 0 inside)."""
    points = np.asarray(points, dtype=complex)
    shifted = points.real - threshold
    if _is_half_plane(phi):
        return shifted
    return shifted * np.sin(phi) - np.abs(points.imag) * np.cos(phi)


def di_case_margin(points: np.ndarray, threshold, phi: float, case: int) -> np.ndarray:
    """Smallest scaled slack of the rows of one DI case at each rotated point (≥ 0 when satisfied)."""
    points = np.asarray(points, dtype=complex)
    if case not in DI_CASES:
        raise ConfigurationError(f"must be one of {DI_CASES}, got {case!r}", field="di_case")
    if case == 1:
        return threshold - points.real
    sign = 1.0 if case == 2 else -1.0
    wedge = sign * points.imag * np.cos(phi) - (points.real - threshold) * np.sin(phi)
    return np.minimum(wedge, points.real - threshold)
