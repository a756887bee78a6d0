"""Small shared builders for the test suite."""

import logging

import numpy as np

from core.array_model import CommChannelSet, SystemConfig, generate_rayleigh_channels
from core.bfim import expectation_factors
from core.precoder.constraints import SymbolFrame, random_symbol_frame
from core.priors import TargetPriorSet

TEST_LOGGER = logging.getLogger("tests")


def small_system(**overrides) -> SystemConfig:
    values = dict(
        n_tx=4,
        n_rx=4,
        n_slots=6,
        n_users=2,
        n_targets=1,
        power_budget_dbm=20.0,
        noise_cu_dbm=0.0,
        noise_eve_dbm=0.0,
        noise_sensing_dbm=0.0,
        psk_order=4,
    )
    values.update(overrides)
    return SystemConfig(**values)


def small_priors(n_targets: int = 1, **overrides) -> TargetPriorSet:
    means = [-30.0, 20.0, 50.0][:n_targets]
    values = dict(
        sigma0_sq=1.0,
        mean_deg=means,
        sigma_theta_deg=[5.0] * n_targets,
        beta=[1.0] * n_targets,
    )
    values.update(overrides)
    return TargetPriorSet.from_degrees(**values)


def design_inputs(cfg: SystemConfig, priors: TargetPriorSet, seed: int = 0, n_samples: int = 40):
    """Channels, symbols and factors drawn from independent seeded streams."""
    root = np.random.SeedSequence(seed)
    channel_seq, symbol_seq, prior_seq = root.spawn(3)
    channels = generate_rayleigh_channels(cfg, np.random.default_rng(channel_seq))
    symbols = random_symbol_frame(cfg, np.random.default_rng(symbol_seq))
    factors = expectation_factors(priors, cfg, n_samples, np.random.default_rng(prior_seq))
    return channels, symbols, factors


def single_user_frame(cfg: SystemConfig, h, symbols) -> tuple:
    channels = CommChannelSet(np.atleast_2d(np.asarray(h, dtype=complex)))
    frame = SymbolFrame(np.atleast_2d(np.asarray(symbols, dtype=complex)), cfg.psk_order)
    return channels, frame
