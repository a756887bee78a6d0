"""Experiment configuration: one JSON document merged over EXPERIMENT_DEFAULTS and validated up front."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np

from core.array_model import SystemConfig
from core.default_config import EXPERIMENT_SCHEMA_VERSION, experiment_defaults_copy
from core.errors import ConfigurationError
from core.precoder.sca import QosTargets, ScaOptions, options_from_solver_section
from core.priors import TargetPriorSet
from utils.config_loader import deep_merge

# Independent random streams spawned from the master seed.
CHANNEL_STREAM = 0
SYMBOL_STREAM = 1
PRIOR_STREAM = 2
NOISE_STREAM = 3

_MAX_SEED = 2**64 - 1


def _reject_unknown(raw: Mapping[str, Any], reference: Mapping[str, Any], prefix: str = "") -> None:
    for key, value in raw.items():
        path = f"{prefix}{key}"
        if key not in reference:
            raise ConfigurationError(f"unknown key '{path}'", field=path)
        if isinstance(reference[key], Mapping):
            if not isinstance(value, Mapping):
                raise ConfigurationError(f"'{path}' must be an object", field=path)
            _reject_unknown(value, reference[key], prefix=f"{path}.")


def _seed(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value <= _MAX_SEED:
        raise ConfigurationError(f"must be an integer in [0, 2^64), got {value!r}", field=name)
    return int(value)


def _float_list(values: Any, name: str) -> Tuple[float, ...]:
    if not isinstance(values, (list, tuple)) or not values:
        raise ConfigurationError("must be a non-empty list", field=name)
    try:
        result = tuple(float(v) for v in values)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"must contain numbers ({exc})", field=name) from exc
    if not all(np.isfinite(result)):
        raise ConfigurationError("must contain finite numbers", field=name)
    return result


def _is_numeric(value: Any) -> bool:
    if isinstance(value, (list, tuple)):
        return bool(value) and all(_is_numeric(v) for v in value)
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _offending_field(section: Mapping[str, Any], name: str) -> str:
    """First key whose default is numeric but whose value is not; the section name otherwise."""
    reference = experiment_defaults_copy().get(name, {})
    for key, value in section.items():
        if _is_numeric(reference.get(key)) and not _is_numeric(value):
            return f"{name}.{key}"
    return name


def _number(value: Any, name: str, cast=float):
    if isinstance(value, bool):
        raise ConfigurationError(f"must be a number, got {value!r}", field=name)
    try:
        return cast(value)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"must be a number, got {value!r}", field=name) from exc


def _build(section: Mapping[str, Any], factory, name: str):
    try:
        return factory(**section)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc), field=_offending_field(section, name)) from exc


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment; dB/dBm and degrees from the file are already converted where the model needs it."""

    system: SystemConfig
    priors: TargetPriorSet
    qos: QosTargets
    solver: ScaOptions
    n_samples: int
    rank_tol: float
    seed: int
    gamma_grid_db: Tuple[float, ...]
    power_list_dbm: Tuple[float, ...]
    sweep_seeds: Tuple[int, ...]
    ser_decisions: int
    beampattern_step_deg: float
    output_dir: Path
    document: Dict[str, Any] = field(repr=False, compare=False, default_factory=dict)
    source: Optional[Path] = field(default=None, compare=False)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], *, source: Optional[Path] = None) -> "ExperimentConfig":
        if not isinstance(raw, Mapping):
            raise ConfigurationError("experiment config must be a JSON object", field="config")
        defaults = experiment_defaults_copy()
        _reject_unknown(raw, defaults)
        version = raw.get("schema_version", EXPERIMENT_SCHEMA_VERSION)
        if version != EXPERIMENT_SCHEMA_VERSION:
            raise ConfigurationError(
                f"unsupported schema version {version!r} (expected {EXPERIMENT_SCHEMA_VERSION})", field="schema_version"
            )
        doc = deep_merge(defaults, raw)

        system = _build(doc["system"], SystemConfig, "system")
        priors_doc = doc["priors"]
        priors = _build(priors_doc, TargetPriorSet.from_degrees, "priors")
        if priors.n_targets != system.n_targets:
            raise ConfigurationError(
                f"{priors.n_targets} prior entries for {system.n_targets} targets", field="priors.mean_deg"
            )
        qos = _build(doc["qos"], lambda gamma_db, tau_db: QosTargets.broadcast(gamma_db, tau_db, system), "qos")

        solver_doc = doc["solver"]
        solver = options_from_solver_section(solver_doc)
        n_samples = solver_doc["n_samples"]
        if isinstance(n_samples, bool) or not isinstance(n_samples, int) or n_samples < 1:
            raise ConfigurationError(f"must be a positive integer, got {n_samples!r}", field="solver.n_samples")
        rank_tol = _number(solver_doc["rank_tol"], "solver.rank_tol")
        if not 0 <= rank_tol < 1:
            raise ConfigurationError(f"must lie in [0, 1), got {rank_tol!r}", field="solver.rank_tol")

        sweep = doc["sweep"]
        decisions = doc["ser"]["decisions"]
        if isinstance(decisions, bool) or not isinstance(decisions, int) or decisions < 1:
            raise ConfigurationError(f"must be a positive integer, got {decisions!r}", field="ser.decisions")
        step = _number(doc["beampattern"]["step_deg"], "beampattern.step_deg")
        if not step > 0:
            raise ConfigurationError(f"must be > 0, got {step!r}", field="beampattern.step_deg")
        if not isinstance(doc["output_dir"], str) or not doc["output_dir"]:
            raise ConfigurationError("must be a non-empty path", field="output_dir")

        return cls(
            system=system,
            priors=priors,
            qos=qos,
            solver=solver,
            n_samples=n_samples,
            rank_tol=rank_tol,
            seed=_seed(doc["seed"], "seed"),
            gamma_grid_db=_float_list(sweep["gamma_grid_db"], "sweep.gamma_grid_db"),
            power_list_dbm=_float_list(sweep["power_list_dbm"], "sweep.power_list_dbm"),
            sweep_seeds=tuple(_seed(s, "sweep.seeds") for s in sweep["seeds"]) or (0,),
            ser_decisions=decisions,
            beampattern_step_deg=step,
            output_dir=Path(doc["output_dir"]),
            document=doc,
            source=source,
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        path = Path(path)
        try:
            with path.open("r", encoding="utf-8") as fp:
                raw = json.load(fp)
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config file not found: {path}", field="config") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"invalid JSON in {path}: {exc}", field="config") from exc
        return cls.from_dict(raw, source=path)

    def with_overrides(
        self, *, seed: Optional[int] = None, output_dir: Optional[Union[str, Path]] = None, workers: Optional[int] = None
    ) -> "ExperimentConfig":
        doc = dict(self.document)
        config = self
        if seed is not None:
            # --seed pins every command to that one seed, sweeps included
            doc["seed"] = _seed(seed, "seed")
            doc["sweep"] = {**doc.get("sweep", {}), "seeds": [doc["seed"]]}
            config = replace(config, seed=doc["seed"], sweep_seeds=(doc["seed"],))
        if output_dir is not None:
            doc["output_dir"] = str(output_dir)
            config = replace(config, output_dir=Path(output_dir))
        if workers is not None:
            config = replace(config, solver=replace(config.solver, workers=int(workers)))
        return replace(config, document=doc)

    @property
    def config_hash(self) -> str:
        """sha256 of the canonical merged document; output location and worker count excluded."""
        payload = {key: value for key, value in self.document.items() if key != "output_dir"}
        if "solver" in payload:
            payload["solver"] = {k: v for k, v in payload["solver"].items() if k != "workers"}
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def rng(self, stream: int, *extra: int, seed: Optional[int] = None) -> np.random.Generator:
        """Generator for one named stream of ``seed`` (default: the master seed)."""
        root = self.seed if seed is None else seed
        return np.random.default_rng(np.random.SeedSequence(root, spawn_key=(stream, *extra)))
