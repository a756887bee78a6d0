"""Command-line entry point for the secure ISAC frame design tool."""

from __future__ import annotations

import argparse
import contextlib
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Mapping, Optional, Sequence

import numpy as np

from core.array_model import generate_rayleigh_channels, sample_covariance
from core.bfim import BcrbObjective, ExpectationFactors, conditional_fim_direct, expectation_factors
from core.database import Database
from core.errors import ConfigurationError, InfeasibleDesignError, NumericalError, SecureIsacError
from core.evaluate import (
    DesignInputs,
    beampattern_table,
    eavesdrop_sinr,
    frame_snr,
    main_lobe_metrics,
    received_constellation,
    sweep_ser,
    sweep_tradeoff,
)
from core.experiment import CHANNEL_STREAM, NOISE_STREAM, PRIOR_STREAM, SYMBOL_STREAM, ExperimentConfig
from core.precoder.constraints import random_symbol_frame
from core.precoder.sca import sca_design
from core.priors import prior_fim, sample_eta_batch
from core.run_manager import MANIFEST_NAME, RunManager, RunManifest
from storage.factor_cache import FactorCache, factor_key
from storage.file_storage import FileStorage
from utils.config_loader import load_config
from utils.logger import setup_logger

COMMANDS = ("design", "beampattern", "sweep", "ser", "factors")
HISTORY_COLUMNS = ("started_at", "command", "status", "config_hash", "seeds", "output_dir", "wall_clock_s")
EXIT_OK = 0


def fmt(value: Any) -> str:
    """CSV number format: 12 significant digits, '.' separator, no locale."""
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".12g")


class ExperimentRunner:
    """Run one CLI command for a validated experiment and write its outputs."""

    def __init__(
        self,
        experiment: ExperimentConfig,
        settings: Mapping[str, Any],
        *,
        logger,
        storage: Optional[FileStorage] = None,
        factor_cache: Optional[FactorCache] = None,
    ) -> None:
        self.experiment = experiment
        self.settings = settings
        self.logger = logger
        self.storage = storage or FileStorage(logger=logger)
        cache_dir = Path(settings.get("paths", {}).get("cache_dir", "data/cache"))
        self.factor_cache = factor_cache or FactorCache(cache_dir, logger=logger)
        self.out_dir = Path(experiment.output_dir)
        self.outputs: List[str] = []
        self._inputs: Dict[int, DesignInputs] = {}

    @property
    def csv_comment(self) -> str:
        return f"manifest={MANIFEST_NAME} config_hash={self.experiment.config_hash}"

    def run(self, command: str) -> None:
        handler: Callable[[], None] = getattr(self, f"cmd_{command}")
        self.out_dir.mkdir(parents=True, exist_ok=True)
        handler()

    # ------------------------------------------------------------------ inputs

    def factor_key_for(self, seed: int) -> str:
        exp = self.experiment
        return factor_key(
            {
                "n_tx": exp.system.n_tx,
                "n_rx": exp.system.n_rx,
                "priors": exp.priors.cache_token(),
                "n_samples": exp.n_samples,
                "rank_tol": exp.rank_tol,
                "seed": seed,
            }
        )

    def factors_for(self, seed: int) -> ExpectationFactors:
        exp = self.experiment
        key = self.factor_key_for(seed)
        factors = self.factor_cache.load(key)
        if factors is None:
            factors = expectation_factors(
                exp.priors,
                exp.system,
                exp.n_samples,
                exp.rng(PRIOR_STREAM, seed=seed),
                rank_tol=exp.rank_tol,
                workers=exp.solver.workers,
                logger=self.logger,
            )
            self.factor_cache.save(key, factors)
        return factors

    def inputs_for(self, seed: int) -> DesignInputs:
        if seed not in self._inputs:
            exp = self.experiment
            channels = generate_rayleigh_channels(exp.system, exp.rng(CHANNEL_STREAM, seed=seed))
            symbols = random_symbol_frame(exp.system, exp.rng(SYMBOL_STREAM, seed=seed))
            self._inputs[seed] = DesignInputs(channels, symbols, self.factors_for(seed))
        return self._inputs[seed]

    def _design(self):
        exp = self.experiment
        shared = self.inputs_for(exp.seed)
        X, report = sca_design(
            exp.system, shared.channels, shared.symbols, exp.priors, shared.factors, exp.qos, exp.solver, logger=self.logger
        )
        return shared, X, report

    # ----------------------------------------------------------------- outputs

    def _write_csv(self, name: str, header: Sequence[str], rows: List[Sequence[str]]) -> None:
        path = self.out_dir / name
        if not self.storage.write_csv(path, header, rows, comment=self.csv_comment):
            raise OSError(f"could not write {path}")
        self.outputs.append(name)

    def _write_json(self, name: str, payload: Mapping[str, Any]) -> None:
        path = self.out_dir / name
        if not self.storage.save_json(path, dict(payload), backup=False):
            raise OSError(f"could not write {path}")
        self.outputs.append(name)

    def _write_frame(self, X: np.ndarray) -> None:
        rows = [
            [fmt(slot), fmt(antenna), fmt(X[antenna, slot].real), fmt(X[antenna, slot].imag)]
            for slot in range(X.shape[1])
            for antenna in range(X.shape[0])
        ]
        self._write_csv("frame.csv", ["slot", "antenna", "re", "im"], rows)

    # ---------------------------------------------------------------- commands

    def cmd_design(self) -> None:
        exp = self.experiment
        shared, X, report = self._design()
        self._write_frame(X)

        users = received_constellation(X, shared.symbols, exp.system, exp.qos, side="user", channels=shared.channels)
        eves = received_constellation(
            X, shared.symbols, exp.system, exp.qos, side="eve", priors=exp.priors, di_case=report.chosen_case
        )
        rows = []
        for table in (users, eves):
            for i in range(table.points.size):
                rows.append(
                    [
                        table.side,
                        fmt(table.entity[i]),
                        fmt(table.slot[i]),
                        fmt(table.points[i].real),
                        fmt(table.points[i].imag),
                        fmt(table.margin[i]),
                        str(table.label[i]),
                    ]
                )
        self._write_csv("constellation.csv", ["side", "entity", "slot", "re", "im", "margin", "label"], rows)

        snr = frame_snr(X, shared.channels, exp.system.noise_cu_mw)
        summary = report.to_dict()
        summary.update(
            {
                "user_inside_fraction": users.inside_fraction,
                "eve_inside_fraction": eves.inside_fraction,
                "frame_snr_db": (10 * np.log10(np.maximum(snr, 1e-300))).tolist(),
                "eavesdrop_sinr": eavesdrop_sinr(X, exp.priors, shared.symbols, exp.system.noise_eve_mw).tolist(),
                "power_used_mw": float(np.linalg.norm(X) ** 2 / exp.system.n_slots),
            }
        )
        self._write_json("report.json", summary)
        self.logger.info(
            "Design done: case %s, BCRB %.6g, %.1f%% user points constructive.",
            report.chosen_case,
            report.final_bcrb,
            100 * users.inside_fraction,
        )

    def cmd_beampattern(self) -> None:
        exp = self.experiment
        shared, X, report = self._design()
        table = beampattern_table(sample_covariance(X), exp.beampattern_step_deg)
        rows = [[fmt(theta), fmt(power)] for theta, power in zip(table.theta_deg, table.power_db)]
        self._write_csv("beampattern.csv", ["theta_deg", "power_db"], rows)

        lobes = main_lobe_metrics(table, np.rad2deg(exp.priors.mu))
        lobe_header = ["target_deg", "peak_deg", "peak_gain", "peak_gain_db", "width_3db_deg"]
        self._write_csv("lobes.csv", lobe_header, [[fmt(lobe.to_dict()[key]) for key in lobe_header] for lobe in lobes])
        self.logger.info("Beampattern done: %d angles, BCRB %.6g.", table.theta_deg.size, report.final_bcrb)

    def cmd_sweep(self) -> None:
        exp = self.experiment
        points = sweep_tradeoff(
            exp.system,
            exp.priors,
            exp.gamma_grid_db,
            exp.power_list_dbm,
            exp.sweep_seeds,
            self.inputs_for,
            tau_db=exp.qos.tau_db,
            options=exp.solver,
            workers=exp.solver.workers,
            logger=self.logger,
        )
        header = ["seed", "power_budget_dbm", "gamma_db", "bcrb_ci", "bcrb_block", "ci_case", "status"]
        rows = [
            [
                fmt(p.seed),
                fmt(p.power_budget_dbm),
                fmt(p.gamma_db),
                fmt(p.bcrb_ci),
                fmt(p.bcrb_block),
                fmt(p.ci_case),
                p.status,
            ]
            for p in points
        ]
        self._write_csv("tradeoff.csv", header, rows)

    def cmd_ser(self) -> None:
        exp = self.experiment
        points = sweep_ser(
            exp.system,
            exp.priors,
            exp.gamma_grid_db,
            exp.power_list_dbm,
            exp.sweep_seeds,
            self.inputs_for,
            lambda seed, index: exp.rng(NOISE_STREAM, index, seed=seed),
            tau_db=exp.qos.tau_db,
            decisions=exp.ser_decisions,
            options=exp.solver,
            workers=exp.solver.workers,
            logger=self.logger,
        )
        header = ["seed", "power_budget_dbm", "gamma_db", "role", "index", "ser", "ci95_half_width", "decisions", "status"]
        rows = []
        for p in points:
            prefix = [fmt(p.seed), fmt(p.power_budget_dbm), fmt(p.gamma_db)]
            if p.result is None:
                rows.append(prefix + ["", "", "", "", "", p.status])
                continue
            r = p.result
            entries = [("user", r.user_ser), ("eve", r.eve_ser), ("eve_reference", r.eve_reference_ser)]
            for role, values in entries:
                widths = r.half_width(values)
                for index, (value, width) in enumerate(zip(values, widths)):
                    rows.append(prefix + [role, fmt(index), fmt(value), fmt(width), fmt(r.decisions), p.status])
        self._write_csv("ser.csv", header, rows)

    def cmd_factors(self) -> None:
        exp = self.experiment
        factors = self.factors_for(exp.seed)
        rows = []
        for block, eigenvalues, rank in (
            ("first", factors.eigenvalues_first, factors.rank_first),
            ("second", factors.eigenvalues_second, factors.rank_second),
        ):
            for index, value in enumerate(eigenvalues):
                rows.append([block, fmt(index), fmt(value), "1" if index < rank else "0"])
        self._write_csv("factors.csv", ["block", "index", "eigenvalue", "kept"], rows)

        # the assembled data term must match the direct formula on the same prior samples
        cfg = exp.system
        R = np.eye(cfg.n_tx) * cfg.power_budget_mw / cfg.n_tx
        etas = sample_eta_batch(exp.priors, exp.n_samples, exp.rng(PRIOR_STREAM, seed=exp.seed))
        direct = conditional_fim_direct(R, etas, cfg)
        J_P = prior_fim(exp.priors)
        assembled = BcrbObjective(factors, J_P, cfg).bundle_from_covariance(R).J - J_P
        rel_err = float(np.linalg.norm(assembled - direct) / np.linalg.norm(direct))
        self._write_json(
            "factors.json",
            {
                "sample_count": factors.sample_count,
                "rank_first": factors.rank_first,
                "rank_second": factors.rank_second,
                "oracle_relative_error": rel_err,
                "cache_file": self.factor_cache.path_for(self.factor_key_for(exp.seed)).name,
            },
        )
        self.logger.info("Factors: r1=%d, r2=%d, oracle rel. error %.3e.", factors.rank_first, factors.rank_second, rel_err)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="secure-isac", description="Secure ISAC symbol-level frame design.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="Experiment JSON file.")
        cmd.add_argument("--seed", type=int, default=None, help="Master seed; overrides seed and sweep.seeds from the config.")
        cmd.add_argument("--out", default=None, help="Output directory (overrides the config).")
        cmd.add_argument("--workers", type=int, default=None, help="Worker threads for cases and sweep points.")
        cmd.add_argument("--settings", default="config.yml", help="Application settings file.")
        cmd.add_argument("--log-level", default=None, help="Console/file log level.")
    runs = sub.add_parser("runs", help="List the recorded run history.")
    runs.add_argument("--only", choices=COMMANDS, default=None, help="Show runs of one command.")
    runs.add_argument("--settings", default="config.yml", help="Application settings file.")
    runs.add_argument("--log-level", default=None, help="Console/file log level.")
    return parser


@contextlib.contextmanager
def _run_history(settings: Mapping[str, Any], logger) -> Iterator[RunManager]:
    """RunManager over the configured database, or over runs.json when none is set or reachable."""
    db: Optional[Database] = None
    session_factory = None
    if settings.get("database", {}).get("url"):
        db = Database(dict(settings))
        if db.test_connection():
            db.create_tables()
            session_factory = db.get_session_factory()
        else:
            logger.warning("Run-history database unreachable; using runs.json instead.")
    try:
        yield RunManager(config=settings, db_session_factory=session_factory, logger=logger)
    finally:
        if db is not None:
            db.dispose()


def list_history(settings: Mapping[str, Any], logger, command: Optional[str] = None) -> int:
    with _run_history(settings, logger) as manager:
        runs = manager.list_runs(command)
    print("\t".join(HISTORY_COLUMNS))
    for run in runs:
        print("\t".join(str(run.get(column, "")) for column in HISTORY_COLUMNS))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = load_config(args.settings)
    log_dir = Path(settings["paths"]["log_dir"])
    logger = setup_logger("SecureIsac", log_dir=log_dir, level=args.log_level or settings["logging"]["level"])
    if args.command == "runs":
        return list_history(settings, logger, args.only)

    started = time.perf_counter()
    runner: Optional[ExperimentRunner] = None
    status, code = "ok", EXIT_OK
    try:
        experiment = ExperimentConfig.load(args.config).with_overrides(
            seed=args.seed, output_dir=args.out, workers=args.workers
        )
        runner = ExperimentRunner(experiment, settings, logger=logger)
        logger.info("Running %s for %s (config hash %s).", args.command, args.config, experiment.config_hash[:12])
        runner.run(args.command)
    except ConfigurationError as exc:
        status, code = "config-error", exc.exit_code
        logger.error("Invalid configuration: %s", exc)
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
    except InfeasibleDesignError as exc:
        status, code = "infeasible", exc.exit_code
        logger.error("Design infeasible: %s", exc)
        print(f"error: design infeasible: {exc}", file=sys.stderr)
    except NumericalError as exc:
        status, code = "numerical-failure", exc.exit_code
        logger.error("Numerical failure: %s", exc)
        print(f"error: numerical failure: {exc}", file=sys.stderr)
    except SecureIsacError as exc:
        status, code = "error", exc.exit_code
        logger.error("Run failed: %s", exc)
        print(f"error: {exc}", file=sys.stderr)

    if runner is not None:
        exp = runner.experiment
        seeds = list(exp.sweep_seeds) if args.command in ("sweep", "ser") else [exp.seed]
        manifest = RunManifest(
            command=args.command,
            config_hash=exp.config_hash,
            seeds=seeds,
            output_dir=str(runner.out_dir),
            outputs=list(runner.outputs),
            status=status,
            wall_clock_s=round(time.perf_counter() - started, 3),
        )
        manifest.write(runner.storage)
        try:
            with _run_history(settings, logger) as history:
                history.record_run(manifest)
        except Exception as exc:  # run history never changes the exit code
            logger.warning("Could not record run history: %s", exc)
    return code


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
