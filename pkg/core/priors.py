"""Priors of η = [Re α; Im α; θ], sampling and the prior Fisher information."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from core.errors import ConfigurationError

ALPHA_VARIANCE_MODES = ("complex", "per_component")


def _positive_vector(values, name: str) -> np.ndarray:
    array = np.atleast_1d(np.asarray(values, dtype=float))
    if array.ndim != 1 or not np.all(np.isfinite(array)) or np.any(array <= 0):
        raise ConfigurationError("all entries must be finite and > 0", field=name)
    return array


@dataclass(frozen=True)
class TargetPriorSet:
    """
    Independent per-target priors.

    ``sigma0_sq`` is the variance of the complex amplitude α_n when
    ``alpha_variance == "complex"`` (each real part then has variance σ₀²/2),
    or the variance of each real part when ``"per_component"``. Angles are in
    radians; κ_n = 1/σ²_θ,n.
    """

    sigma0_sq: float
    mu: np.ndarray
    sigma_theta: np.ndarray
    beta: np.ndarray
    alpha_variance: str = "complex"

    def __post_init__(self) -> None:
        if not np.isfinite(self.sigma0_sq) or self.sigma0_sq <= 0:
            raise ConfigurationError(f"must be > 0, got {self.sigma0_sq!r}", field="sigma0_sq")
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if mu.ndim != 1 or not np.all(np.isfinite(mu)):
            raise ConfigurationError("target mean angles must be finite", field="mu")
        sigma_theta = _positive_vector(self.sigma_theta, "sigma_theta")
        beta = _positive_vector(self.beta, "beta")
        if not (mu.size == sigma_theta.size == beta.size):
            raise ConfigurationError(
                f"per-target lists differ in length ({mu.size}, {sigma_theta.size}, {beta.size})",
                field="priors",
            )
        if self.alpha_variance not in ALPHA_VARIANCE_MODES:
            raise ConfigurationError(
                f"must be one of {ALPHA_VARIANCE_MODES}, got {self.alpha_variance!r}", field="alpha_variance"
            )
        object.__setattr__(self, "sigma0_sq", float(self.sigma0_sq))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma_theta", sigma_theta)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def from_degrees(
        cls,
        *,
        sigma0_sq: float,
        mean_deg: Sequence[float],
        sigma_theta_deg: Sequence[float],
        beta: Sequence[float],
        alpha_variance: str = "complex",
    ) -> "TargetPriorSet":
        return cls(
            sigma0_sq=sigma0_sq,
            mu=np.deg2rad(np.asarray(mean_deg, dtype=float)),
            sigma_theta=np.deg2rad(np.asarray(sigma_theta_deg, dtype=float)),
            beta=np.asarray(beta, dtype=float),
            alpha_variance=alpha_variance,
        )

    @property
    def n_targets(self) -> int:
        return self.mu.size

    @property
    def kappa(self) -> np.ndarray:
        return 1.0 / self.sigma_theta**2

    @property
    def component_variance(self) -> float:
        if self.alpha_variance == "complex":
            return self.sigma0_sq / 2.0
        return self.sigma0_sq

    def cache_token(self) -> dict:
        return {
            "sigma0_sq": self.sigma0_sq,
            "mu": self.mu.tolist(),
            "sigma_theta": self.sigma_theta.tolist(),
            "alpha_variance": self.alpha_variance,
        }


@dataclass(frozen=True)
class EtaSample:
    re_alpha: np.ndarray
    im_alpha: np.ndarray
    theta: np.ndarray

    @property
    def alpha(self) -> np.ndarray:
        return self.re_alpha + 1j * self.im_alpha

    def flatten(self) -> np.ndarray:
        """Length-3N vector in the fixed order [Re α; Im α; θ]."""
        return np.concatenate([self.re_alpha, self.im_alpha, self.theta])

    @classmethod
    def from_vector(cls, eta: np.ndarray) -> "EtaSample":
        eta = np.asarray(eta, dtype=float)
        n = eta.size // 3
        return cls(eta[:n].copy(), eta[n : 2 * n].copy(), eta[2 * n :].copy())


def _wrap_angle(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.where(x <= -np.pi, x + 2 * np.pi, np.where(x > np.pi, x - 2 * np.pi, x))


def sample_von_mises(mu, kappa, rng: np.random.Generator, size=None):
    """
    Draw from the von Mises density exp(κ cos(x − μ)) / (2π I₀(κ)), wrapped to (−π, π].

    numpy's generator implements the Best–Fisher rejection sampler and falls back
    to a wrapped normal for very large κ.
    """
    kappa_arr = np.asarray(kappa, dtype=float)
    if np.any(kappa_arr < 0) or not np.all(np.isfinite(kappa_arr)):
        raise ValueError(f"von Mises concentration must be finite and >= 0, got {kappa!r}")
    draws = _wrap_angle(rng.vonmises(mu, kappa_arr, size=size))
    if np.ndim(draws) == 0:
        return float(draws)
    return draws


def sample_eta(priors: TargetPriorSet, rng: np.random.Generator) -> EtaSample:
    std = np.sqrt(priors.component_variance)
    n = priors.n_targets
    re_alpha = rng.normal(0.0, std, size=n)
    im_alpha = rng.normal(0.0, std, size=n)
    theta = sample_von_mises(priors.mu, priors.kappa, rng, size=n)
    return EtaSample(re_alpha, im_alpha, np.atleast_1d(theta))


def sample_eta_batch(priors: TargetPriorSet, n_samples: int, rng: np.random.Generator) -> list[EtaSample]:
    """Sequential draws so the stream matches repeated ``sample_eta`` calls."""
    return [sample_eta(priors, rng) for _ in range(n_samples)]


def prior_fim(priors: TargetPriorSet) -> np.ndarray:
    """Block-diagonal prior FIM diag(1/(2σ₀²) I_N, 1/(2σ₀²) I_N, diag(κ))."""
    n = priors.n_targets
    amplitude = np.full(2 * n, 1.0 / (2.0 * priors.sigma0_sq))
    return np.diag(np.concatenate([amplitude, priors.kappa]))
