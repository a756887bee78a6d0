from __future__ import annotations

from copy import deepcopy

EXPERIMENT_SCHEMA_VERSION = 1

DEFAULT_CONFIG = {
    "paths": {
        "data_dir": "data",
        "log_dir": "data/logs",
        "cache_dir": "data/cache",
    },
    "logging": {"level": "INFO"},
    "database": {
        "url": "",
        "echo": False,
    },
}

# Values not given in an experiment file fall back to the setting used for the
# constellation figure: 12x10 array, 100 slots, 3 users, 2 targets, QPSK.
EXPERIMENT_DEFAULTS = {
    "schema_version": EXPERIMENT_SCHEMA_VERSION,
    "system": {
        "n_tx": 12,
        "n_rx": 10,
        "n_slots": 100,
        "n_users": 3,
        "n_targets": 2,
        "power_budget_dbm": 30.0,
        "noise_cu_dbm": 0.0,
        "noise_eve_dbm": 0.0,
        "noise_sensing_dbm": 0.0,
        "psk_order": 4,
    },
    "priors": {
        "sigma0_sq": 1.0,
        "mean_deg": [-50.0, -20.0],
        "sigma_theta_deg": [5.0, 5.0],
        "beta": [1.0, 1.0],
        "alpha_variance": "complex",
    },
    "qos": {
        "gamma_db": 15.0,
        "tau_db": -5.0,
    },
    "solver": {
        "epsilon": 1e-5,
        "max_iter": 50,
        "n_samples": 500,
        "rank_tol": 1e-10,
        "line_search": "armijo",
        "prior_scaling": "unscaled",
        "ridge": False,
        "workers": 1,
    },
    "seed": 0,
    "sweep": {
        "gamma_grid_db": [10.0, 15.0, 20.0, 25.0],
        "power_list_dbm": [30.0, 35.0],
        "seeds": [0],
    },
    "ser": {
        "decisions": 100000,
    },
    "beampattern": {
        "step_deg": 0.1,
    },
    "output_dir": "runs",
}


def default_config_copy() -> dict:
    return deepcopy(DEFAULT_CONFIG)


def experiment_defaults_copy() -> dict:
    return deepcopy(EXPERIMENT_DEFAULTS)
