"""Bayesian Fisher information: derivative blocks, prior expectation, assembly, BCRB gradient."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from core.array_model import SystemConfig, sample_covariance, steering_derivative_matrix, steering_matrix
from core.errors import ConfigurationError, NumericalError, SingularBfimError
from core.priors import EtaSample, TargetPriorSet, sample_eta_batch

DEFAULT_RANK_TOL = 1e-10
IMAG_RESIDUE_TOL = 1e-8
RIDGE = 1e-10
_CHUNK_SIZE = 50
_HERMITIAN_TOL = 1e-9


def partial_derivatives(eta: EtaSample, cfg: SystemConfig) -> np.ndarray:
    """∂H_S/∂η_p for p = 1..3N, stacked as (3N, n_rx, n_tx) in the [Re α; Im α; θ] order."""
    a = steering_matrix(eta.theta, cfg.n_tx)
    b = steering_matrix(eta.theta, cfg.n_rx)
    a_dot = steering_derivative_matrix(eta.theta, cfg.n_tx)
    b_dot = steering_derivative_matrix(eta.theta, cfg.n_rx)

    outer = np.einsum("in,jn->nij", b, a.conj())
    d_theta = eta.alpha[:, None, None] * (
        np.einsum("in,jn->nij", b_dot, a.conj()) + np.einsum("in,jn->nij", b, a_dot.conj())
    )
    return np.concatenate([outer, 1j * outer, d_theta], axis=0)


@dataclass(frozen=True)
class DerivativeBlocks:
    """
    The 2·n_rx blocks F_i (each 3N x n_tx) of F = ∂h_S*/∂η.

    Row p of block i ≤ n_rx is conj(∂H[i, :]/∂η_p); block n_rx + i is its conjugate.
    """

    blocks: np.ndarray

    @property
    def n_rx(self) -> int:
        return self.blocks.shape[0] // 2

    @property
    def first(self) -> np.ndarray:
        return self.blocks[: self.n_rx]

    @property
    def second(self) -> np.ndarray:
        return self.blocks[self.n_rx :]


def derivative_blocks(eta: EtaSample, cfg: SystemConfig) -> DerivativeBlocks:
    partials = partial_derivatives(eta, cfg).transpose(1, 0, 2)
    return DerivativeBlocks(np.concatenate([partials.conj(), partials], axis=0))


def apply_blocks(blocks: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Σ_i F_i Ξ F_i^H for a stack of blocks (r, 3N, n_tx)."""
    return np.einsum("rpa,ab,rqb->pq", blocks, xi, blocks.conj())


def _vec_columns(blocks: np.ndarray) -> np.ndarray:
    # column-major vec of every (3N x n_tx) block, one per row
    count, n_params, n_elems = blocks.shape
    return blocks.transpose(0, 2, 1).reshape(count, n_params * n_elems)


def _mat_columns(vectors: np.ndarray, n_params: int, n_elems: int) -> np.ndarray:
    # inverse of _vec_columns for column vectors (n_params*n_elems x r)
    return vectors.T.reshape(-1, n_elems, n_params).transpose(0, 2, 1)


@dataclass(frozen=True)
class ExpectationFactors:
    """Low-rank factors with E{Σ F_i Ξ F_i^H} = Σ F̃_i Ξ F̃_i^H (likewise G̃ for the second half)."""

    F_tilde: np.ndarray
    G_tilde: np.ndarray
    sample_count: int
    eigenvalues_first: np.ndarray = field(repr=False)
    eigenvalues_second: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        # one memory layout whether computed or read back from the cache; einsum order depends on it
        for name in ("F_tilde", "G_tilde"):
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=complex))
        for name in ("eigenvalues_first", "eigenvalues_second"):
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=float))

    @property
    def rank_first(self) -> int:
        return self.F_tilde.shape[0]

    @property
    def rank_second(self) -> int:
        return self.G_tilde.shape[0]

    @property
    def n_params(self) -> int:
        return self.F_tilde.shape[1]

    def expected_first(self, xi: np.ndarray) -> np.ndarray:
        return apply_blocks(self.F_tilde, xi)

    def expected_second(self, xi: np.ndarray) -> np.ndarray:
        return apply_blocks(self.G_tilde, xi)


def _factorize(gram: np.ndarray, n_params: int, n_elems: int, rank_tol: float) -> tuple[np.ndarray, np.ndarray]:
    gram = (gram + gram.conj().T) / 2
    eigvals, eigvecs = linalg.eigh(gram)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    lam_max = eigvals[0] if eigvals.size else 0.0
    if lam_max <= 0:
        return np.zeros((0, n_params, n_elems), dtype=complex), eigvals
    keep = eigvals > rank_tol * lam_max
    factors = np.ascontiguousarray(_mat_columns(eigvecs[:, keep] * np.sqrt(eigvals[keep]), n_params, n_elems))
    return factors, eigvals


def _accumulate(etas: Sequence[EtaSample], cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    size = cfg.n_params * cfg.n_tx
    first = np.zeros((size, size), dtype=complex)
    second = np.zeros((size, size), dtype=complex)
    for eta in etas:
        blocks = derivative_blocks(eta, cfg)
        v1 = _vec_columns(blocks.first)
        v2 = _vec_columns(blocks.second)
        first += v1.T @ v1.conj()
        second += v2.T @ v2.conj()
    return first, second


def expectation_factors(
    priors: TargetPriorSet,
    cfg: SystemConfig,
    n_samples: int,
    rng: np.random.Generator,
    *,
    rank_tol: float = DEFAULT_RANK_TOL,
    workers: int = 1,
    logger: Optional[logging.Logger] = None,
) -> ExpectationFactors:
    """
    Monte-Carlo prior expectation of the derivative Gram matrices, eigendecomposed into factors.

    Samples are drawn sequentially from ``rng`` and reduced in fixed chunks, so the
    result does not depend on ``workers``.
    """
    if int(n_samples) < 1:
        raise ConfigurationError(f"must be >= 1, got {n_samples}", field="n_samples")
    if priors.n_targets != cfg.n_targets:
        raise ConfigurationError(
            f"priors describe {priors.n_targets} targets but the system has {cfg.n_targets}", field="priors"
        )

    etas = sample_eta_batch(priors, int(n_samples), rng)
    chunks = [etas[i : i + _CHUNK_SIZE] for i in range(0, len(etas), _CHUNK_SIZE)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partial_sums = list(pool.map(lambda chunk: _accumulate(chunk, cfg), chunks))
    else:
        partial_sums = [_accumulate(chunk, cfg) for chunk in chunks]

    size = cfg.n_params * cfg.n_tx
    first = np.zeros((size, size), dtype=complex)
    second = np.zeros((size, size), dtype=complex)
    for part_first, part_second in partial_sums:
        first += part_first
        second += part_second
    first /= len(etas)
    second /= len(etas)

    F_tilde, eig_first = _factorize(first, cfg.n_params, cfg.n_tx, rank_tol)
    G_tilde, eig_second = _factorize(second, cfg.n_params, cfg.n_tx, rank_tol)
    if logger:
        logger.info(
            "Expectation factors from %d prior samples: r1=%d, r2=%d.", len(etas), F_tilde.shape[0], G_tilde.shape[0]
        )
    return ExpectationFactors(F_tilde, G_tilde, len(etas), eig_first, eig_second)


@dataclass(frozen=True)
class BfimBundle:
    factors: ExpectationFactors
    J_P: np.ndarray
    J: np.ndarray
    bcrb: float
    imag_residue: float
    J_inv: np.ndarray = field(repr=False)


def _check_hermitian(R_x: np.ndarray) -> None:
    scale = max(1.0, float(np.abs(R_x).max(initial=0.0)))
    if not np.allclose(R_x, R_x.conj().T, atol=_HERMITIAN_TOL * scale):
        raise ValueError("covariance matrix is not Hermitian")


def _spd_inverse(J: np.ndarray) -> np.ndarray:
    try:
        factor = linalg.cho_factor(J, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularBfimError(f"Bayesian FIM is not positive definite: {exc}") from exc
    inverse = linalg.cho_solve(factor, np.eye(J.shape[0]))
    return (inverse + inverse.T) / 2


def assemble_bfim(
    R_x: np.ndarray,
    factors: ExpectationFactors,
    J_P: np.ndarray,
    cfg: SystemConfig,
    *,
    jp_scaled: bool = False,
    ridge: bool = False,
) -> BfimBundle:
    """J = (L/σ²_s)(Σ F̃ R_xᵀ F̃^H + Σ G̃ R_x G̃^H) + J_P, realified, with BCRB = tr(J⁻¹)."""
    R_x = np.asarray(R_x, dtype=complex)
    _check_hermitian(R_x)
    scale = cfg.n_slots / cfg.noise_sensing_mw

    data = scale * (factors.expected_first(R_x.T) + factors.expected_second(R_x))
    prior = scale * J_P if jp_scaled else J_P
    J_complex = data + prior
    J_complex = (J_complex + J_complex.conj().T) / 2

    norm = np.linalg.norm(J_complex)
    residue = float(np.linalg.norm(J_complex.imag) / norm) if norm > 0 else 0.0
    if residue > IMAG_RESIDUE_TOL:
        raise NumericalError(f"assembled BFIM has imaginary residue {residue:.3e}")

    J = np.ascontiguousarray(J_complex.real)
    if ridge:
        J = J + RIDGE * np.eye(J.shape[0])
    J_inv = _spd_inverse(J)
    return BfimBundle(factors, np.asarray(J_P), J, float(np.trace(J_inv)), residue, J_inv)


def bcrb_gradient(
    X: np.ndarray,
    factors: ExpectationFactors,
    J_P: np.ndarray,
    cfg: SystemConfig,
    *,
    jp_scaled: bool = False,
    ridge: bool = False,
) -> np.ndarray:
    """∇f of f(X) = tr(J⁻¹(X)) so that df = Re tr(G^H dX)."""
    return BcrbObjective(factors, J_P, cfg, jp_scaled=jp_scaled, ridge=ridge).gradient(X)


def bcrb(
    X: np.ndarray,
    factors: ExpectationFactors,
    J_P: np.ndarray,
    cfg: SystemConfig,
    *,
    jp_scaled: bool = False,
    ridge: bool = False,
) -> float:
    return BcrbObjective(factors, J_P, cfg, jp_scaled=jp_scaled, ridge=ridge)(X)


def conditional_fim_direct(R_x: np.ndarray, etas: Sequence[EtaSample], cfg: SystemConfig) -> np.ndarray:
    """Sample mean of (2L/σ²_s) Re tr((∂H/∂η_p)^H (∂H/∂η_q) R_x): the Gaussian-model FIM."""
    total = np.zeros((cfg.n_params, cfg.n_params))
    for eta in etas:
        D = partial_derivatives(eta, cfg)
        total += np.einsum("pia,qib,ba->pq", D.conj(), D, R_x).real
    return (2.0 * cfg.n_slots / cfg.noise_sensing_mw) * total / len(etas)


class BcrbObjective:
    """f(X) = BCRB of the frame X, with its gradient, for a fixed set of expectation factors."""

    def __init__(
        self,
        factors: ExpectationFactors,
        J_P: np.ndarray,
        cfg: SystemConfig,
        *,
        jp_scaled: bool = False,
        ridge: bool = False,
    ) -> None:
        self.factors = factors
        self.J_P = np.asarray(J_P, dtype=float)
        self.cfg = cfg
        self.jp_scaled = jp_scaled
        self.ridge = ridge

    def bundle(self, X: np.ndarray) -> BfimBundle:
        return self.bundle_from_covariance(sample_covariance(X))

    def bundle_from_covariance(self, R_x: np.ndarray) -> BfimBundle:
        return assemble_bfim(R_x, self.factors, self.J_P, self.cfg, jp_scaled=self.jp_scaled, ridge=self.ridge)

    def __call__(self, X: np.ndarray) -> float:
        return self.bundle(X).bcrb

    def covariance_gradient(self, R_x: np.ndarray) -> np.ndarray:
        """Hermitian C with df = tr(C dR_x)."""
        J_inv = self.bundle_from_covariance(R_x).J_inv
        M = J_inv @ J_inv
        F, G = self.factors.F_tilde, self.factors.G_tilde
        first = np.einsum("rpa,pq,rqb->ab", F.conj(), M, F)
        second = np.einsum("rpa,pq,rqb->ab", G.conj(), M, G)
        return -(self.cfg.n_slots / self.cfg.noise_sensing_mw) * (first.conj() + second)

    def gradient(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=complex)
        C = self.covariance_gradient(sample_covariance(X))
        return (2.0 / X.shape[1]) * (C @ X)
