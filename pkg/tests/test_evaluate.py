import math
import unittest
from unittest import mock

import numpy as np

from core.array_model import CommChannelSet, db_to_linear, steering_vector
from core.bfim import BcrbObjective, expectation_factors
from core.errors import NumericalError
from core.evaluate import (
    DesignInputs,
    SerResult,
    achieved_sinr,
    angle_grid_deg,
    beampattern_table,
    eavesdrop_sinr,
    frame_snr,
    main_lobe_metrics,
    received_constellation,
    simulate_ser,
    sweep_ser,
    sweep_tradeoff,
    trials_for_decisions,
)
from core.precoder.constraints import SymbolFrame, build_ci_constraints, random_symbol_frame
from core.precoder.sca import QosTargets, ScaOptions, sca_design, sca_iterate
from core.precoder.subproblem import LinearSubproblemSolver, phase1_feasible
from core.priors import TargetPriorSet, prior_fim
from tests.helpers import TEST_LOGGER, design_inputs, small_priors, small_system

BROADSIDE_EVE = TargetPriorSet(sigma0_sq=1.0, mu=[0.0], sigma_theta=[0.1], beta=[1.0])


class TestDesignedConstellation(unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        cls.cfg = small_system()
        cls.priors = small_priors()
        cls.channels, cls.symbols, cls.factors = design_inputs(cls.cfg, cls.priors)
        cls.qos = QosTargets.broadcast(5.0, -5.0, cls.cfg)
        cls.X, cls.report = sca_design(
            cls.cfg, cls.channels, cls.symbols, cls.priors, cls.factors, cls.qos, ScaOptions(max_iter=8),
            logger=TEST_LOGGER,
        )

    def test_user_points_are_constructive(self) -> None:
        points = received_constellation(self.X, self.symbols, self.cfg, self.qos, channels=self.channels)
        self.assertEqual(self.cfg.n_users * self.cfg.n_slots, points.points.size)
        self.assertEqual(1.0, points.inside_fraction)
        self.assertTrue(np.all(points.label == "constructive"))

    def test_eve_points_satisfy_the_chosen_case(self) -> None:
        points = received_constellation(
            self.X, self.symbols, self.cfg, self.qos, side="eve", priors=self.priors, di_case=self.report.chosen_case
        )
        self.assertEqual(1.0, points.inside_fraction)
        self.assertTrue(np.all(points.label == f"case-{self.report.chosen_case}"))

    def test_frame_snr_meets_the_ci_target(self) -> None:
        snr = frame_snr(self.X, self.channels, self.cfg.noise_cu_mw)
        self.assertTrue(np.all(snr >= db_to_linear(5.0) * (1 - 1e-6)))

    def test_unknown_side_is_rejected(self) -> None:
        with self.assertRaises(ValueError):
            received_constellation(self.X, self.symbols, self.cfg, self.qos, side="radar")


class TestLinkMetrics(unittest.TestCase):
    def setUp(self) -> None:
        self.cfg = small_system(n_tx=2, n_slots=8, n_users=1, noise_eve_dbm=-3.0)
        self.channels = CommChannelSet(np.array([[1.0, 0.0]]))
        self.symbols = random_symbol_frame(self.cfg, np.random.default_rng(1))

    def test_silent_frame_gives_zero(self) -> None:
        X = np.zeros((self.cfg.n_tx, self.cfg.n_slots))
        np.testing.assert_array_equal([0.0], frame_snr(X, self.channels, self.cfg.noise_cu_mw))
        np.testing.assert_array_equal([[0.0]], eavesdrop_sinr(X, BROADSIDE_EVE, self.symbols, self.cfg.noise_eve_mw))

    def test_snr_scales_with_amplitude_squared(self) -> None:
        rng = np.random.default_rng(2)
        X = rng.standard_normal((self.cfg.n_tx, self.cfg.n_slots)) + 1j * rng.standard_normal((self.cfg.n_tx, self.cfg.n_slots))
        base = frame_snr(X, self.channels, self.cfg.noise_cu_mw)
        np.testing.assert_allclose(4 * base, frame_snr(2 * X, self.channels, self.cfg.noise_cu_mw))

    def test_eve_receiving_the_exact_symbols(self) -> None:
        X = np.vstack([self.symbols.symbols[0], np.zeros(self.cfg.n_slots)])
        sinr = eavesdrop_sinr(X, BROADSIDE_EVE, self.symbols, self.cfg.noise_eve_mw)
        self.assertAlmostEqual(1.0 / self.cfg.noise_eve_mw[0], float(sinr[0, 0]), places=10)

    def test_block_sinr_of_orthogonal_users(self) -> None:
        channels = CommChannelSet(np.eye(2))
        sinr = achieved_sinr(np.diag([2.0, 3.0]), channels, [1.0, 0.5])
        np.testing.assert_allclose([4.0, 18.0], sinr)

class TestEavesdropperLeakage(unittest.TestCase):
    """A user at broadside and an Eve 10° off it, so the user's constructive beam also reaches the Eve."""

    @classmethod
    def setUpClass(cls) -> None:
        cls.cfg = small_system(n_users=1, psk_order=2, power_budget_dbm=30.0)
        cls.priors = TargetPriorSet(sigma0_sq=1.0, mu=[np.deg2rad(10.0)], sigma_theta=[np.deg2rad(2.0)], beta=[1.0])
        rng = np.random.default_rng(11)
        cls.channels = CommChannelSet(steering_vector(0.0, cls.cfg.n_tx)[None, :])
        cls.symbols = random_symbol_frame(cls.cfg, rng)
        cls.factors = expectation_factors(cls.priors, cls.cfg, 40, rng)
        cls.qos = QosTargets.broadcast(20.0, -10.0, cls.cfg)
        cls.options = ScaOptions(max_iter=15)

    def ci_only_design(self) -> np.ndarray:
        cfg = self.cfg
        ci = build_ci_constraints(self.channels, self.symbols, self.qos.gamma_db, cfg.noise_cu_mw, cfg.half_angle, cfg)
        objective = BcrbObjective(self.factors, prior_fim(self.priors), cfg)
        solver = LinearSubproblemSolver(ci)
        start = phase1_feasible(ci)
        self.assertTrue(start.feasible)
        result = sca_iterate(
            objective, objective.gradient, start.X, lambda G: solver.solve(G).X_star, self.options, TEST_LOGGER
        )
        return result.X

    def test_destructive_interference_lowers_eve_sinr(self) -> None:
        X_di, report = sca_design(
            self.cfg, self.channels, self.symbols, self.priors, self.factors, self.qos, self.options,
            logger=TEST_LOGGER,
        )
        X_ci = self.ci_only_design()
        radius_sq = self.cfg.n_slots * self.cfg.power_budget_mw
        self.assertLessEqual(np.linalg.norm(X_di) ** 2, radius_sq * (1 + 1e-9))
        self.assertLessEqual(np.linalg.norm(X_ci) ** 2, radius_sq * (1 + 1e-9))

        sinr_di = eavesdrop_sinr(X_di, self.priors, self.symbols, self.cfg.noise_eve_mw)[0, 0]
        sinr_ci = eavesdrop_sinr(X_ci, self.priors, self.symbols, self.cfg.noise_eve_mw)[0, 0]
        # Re(u) ≤ τ < 1 on every slot caps the reference-stream SINR below one
        self.assertEqual(1, report.chosen_case)
        self.assertLess(sinr_di, 1.0)
        self.assertGreater(sinr_ci, 1.0)



class TestSymbolErrorRate(unittest.TestCase):
    def setUp(self) -> None:
        self.cfg = small_system(n_tx=2, n_slots=50, n_users=1)
        self.channels = CommChannelSet(np.array([[1.0, 0.0]]))
        self.symbols = random_symbol_frame(self.cfg, np.random.default_rng(5))

    def test_pure_noise_errs_at_chance(self) -> None:
        X = np.zeros((self.cfg.n_tx, self.cfg.n_slots))
        result = simulate_ser(
            X, self.symbols, self.cfg, channels=self.channels, priors=BROADSIDE_EVE, trials=400,
            rng=np.random.default_rng(0),
        )
        self.assertEqual(20_000, result.decisions)
        chance = 3 / 4
        self.assertLess(abs(result.user_ser[0] - chance), 4 * result.half_width(chance))
        self.assertLess(abs(result.eve_ser[0] - chance), 4 * result.half_width(chance))

    def test_quiet_channel_decodes_every_symbol(self) -> None:
        cfg = small_system(n_tx=2, n_slots=50, n_users=1, noise_cu_dbm=-100.0)
        X = np.vstack([3.0 * self.symbols.symbols[0], np.zeros(cfg.n_slots)])
        result = simulate_ser(
            X, self.symbols, cfg, channels=self.channels, priors=BROADSIDE_EVE, trials=20, rng=np.random.default_rng(0)
        )
        self.assertEqual(0.0, result.user_ser[0])
        self.assertEqual(0.0, float(result.user_half_width[0]))

    def test_estimates_are_reproducible(self) -> None:
        X = np.vstack([self.symbols.symbols[0], np.zeros(self.cfg.n_slots)])
        runs = [
            simulate_ser(
                X, self.symbols, self.cfg, channels=self.channels, priors=BROADSIDE_EVE, trials=10,
                rng=np.random.default_rng(9),
            )
            for _ in range(2)
        ]
        np.testing.assert_array_equal(runs[0].user_ser, runs[1].user_ser)
        np.testing.assert_array_equal(runs[0].eve_pair_ser, runs[1].eve_pair_ser)

    def test_trials_are_validated(self) -> None:
        with self.assertRaises(ValueError):
            simulate_ser(
                np.zeros((2, 50)), self.symbols, self.cfg, channels=self.channels, priors=BROADSIDE_EVE, trials=0,
                rng=np.random.default_rng(0),
            )

    def test_eve_summaries(self) -> None:
        result = SerResult(np.array([0.1]), np.array([[0.9, 0.5], [0.7, 0.3]]), 10, 100)
        np.testing.assert_allclose([0.7, 0.5], result.eve_ser)
        np.testing.assert_allclose([0.9, 0.7], result.eve_reference_ser)
        self.assertAlmostEqual(0.6, result.mean_eve_ser)
        self.assertAlmostEqual(1.96 * math.sqrt(0.09 / 100), float(result.user_half_width[0]))

    def test_trials_cover_requested_decisions(self) -> None:
        self.assertEqual(1000, trials_for_decisions(100_000, 100))
        self.assertEqual(4, trials_for_decisions(10, 3))


class TestBeampattern(unittest.TestCase):
    def test_grid_has_tenth_degree_resolution(self) -> None:
        grid = angle_grid_deg(0.1)
        self.assertEqual(1801, grid.size)
        self.assertEqual(-90.0, grid[0])
        self.assertEqual(90.0, grid[-1])
        with self.assertRaises(ValueError):
            angle_grid_deg(0.7)

    def test_table_is_normalized_to_its_peak(self) -> None:
        a = steering_vector(np.deg2rad(30.0), 8)
        table = beampattern_table(np.outer(a, a.conj()))
        self.assertAlmostEqual(0.0, float(table.power_db.max()), places=12)
        self.assertAlmostEqual(64.0, table.peak, places=9)

    def test_lobes_land_on_both_targets(self) -> None:
        n = 12
        R = sum(np.outer(a, a.conj()) for a in (steering_vector(np.deg2rad(t), n) for t in (-50.0, -20.0)))
        metrics = main_lobe_metrics(beampattern_table(R), [-50.0, -20.0])
        for metric, target in zip(metrics, (-50.0, -20.0)):
            self.assertLess(abs(metric.peak_deg - target), 2.0)
            self.assertGreater(metric.width_3db_deg, 0.0)
        self.assertEqual(-20.0, metrics[1].to_dict()["target_deg"])

    def test_larger_arrays_give_narrower_lobes(self) -> None:
        widths = []
        for n in (8, 16):
            a = steering_vector(0.0, n)
            widths.append(main_lobe_metrics(beampattern_table(np.outer(a, a.conj())), [0.0])[0].width_3db_deg)
        self.assertLess(widths[1], widths[0])
        # half-power width of a broadside ULA with half-wavelength spacing is about 101.5°/n
        self.assertAlmostEqual(101.5 / 8, widths[0], delta=1.0)


class TestSweeps(unittest.TestCase):
    def setUp(self) -> None:
        self.cfg = small_system(n_slots=4, n_users=1)
        self.priors = small_priors()
        self.options = ScaOptions(max_iter=3)

    def inputs_for(self, seed: int) -> DesignInputs:
        return DesignInputs(*design_inputs(self.cfg, self.priors, seed=seed, n_samples=20))

    def test_tradeoff_points_follow_grid_order(self) -> None:
        points = sweep_tradeoff(
            self.cfg, self.priors, [0.0, 5.0], [20.0], [0], self.inputs_for,
            tau_db=-5.0, options=self.options, logger=TEST_LOGGER,
        )
        self.assertEqual([0.0, 5.0], [point.gamma_db for point in points])
        for point in points:
            self.assertEqual("ok", point.status)
            self.assertTrue(np.isfinite(point.bcrb_ci))
            self.assertTrue(np.isfinite(point.bcrb_block))

    def test_infeasible_points_leave_gaps(self) -> None:
        points = sweep_tradeoff(
            self.cfg, self.priors, [60.0], [0.0], [0], self.inputs_for,
            tau_db=-5.0, options=self.options, logger=TEST_LOGGER,
        )
        self.assertTrue(math.isnan(points[0].bcrb_ci))
        self.assertTrue(math.isnan(points[0].bcrb_block))
        self.assertEqual("ci-infeasible,block-infeasible", points[0].status)

    def test_numerical_failures_leave_gaps(self) -> None:
        with mock.patch("core.evaluate.sca_design", side_effect=NumericalError("solver failed")):
            points = sweep_tradeoff(
                self.cfg, self.priors, [0.0], [20.0], [0], self.inputs_for,
                tau_db=-5.0, options=self.options, logger=TEST_LOGGER,
            )
        self.assertTrue(math.isnan(points[0].bcrb_ci))
        self.assertIsNone(points[0].ci_case)
        self.assertTrue(np.isfinite(points[0].bcrb_block))
        self.assertEqual("ci-numerical-failure", points[0].status)

    def test_ser_sweep_continues_past_numerical_failures(self) -> None:
        def noise_rng(seed: int, index: int) -> np.random.Generator:
            return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3, index)))

        with mock.patch("core.evaluate.sca_design", side_effect=NumericalError("solver failed")):
            points = sweep_ser(
                self.cfg, self.priors, [0.0, 5.0], [20.0], [0], self.inputs_for, noise_rng,
                tau_db=-5.0, decisions=40, options=self.options, logger=TEST_LOGGER,
            )
        self.assertEqual(["numerical-failure"] * 2, [point.status for point in points])
        self.assertTrue(all(point.result is None for point in points))

    def test_ser_sweep_does_not_depend_on_workers(self) -> None:
        def noise_rng(seed: int, index: int) -> np.random.Generator:
            return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3, index)))

        runs = [
            sweep_ser(
                self.cfg, self.priors, [0.0, 5.0], [20.0], [0], self.inputs_for, noise_rng,
                tau_db=-5.0, decisions=40, options=self.options, workers=workers, logger=TEST_LOGGER,
            )
            for workers in (1, 2)
        ]
        for serial, threaded in zip(*runs):
            self.assertEqual(serial.status, threaded.status)
            np.testing.assert_array_equal(serial.result.user_ser, threaded.result.user_ser)
            self.assertEqual(40, serial.result.decisions)


if __name__ == "__main__":
    unittest.main()
