import unittest

import numpy as np
from scipy.optimize import minimize

from core.array_model import generate_rayleigh_channels
from core.precoder.constraints import ConstraintSet, build_ci_constraints, build_di_constraints, random_symbol_frame
from core.precoder.subproblem import (
    FEASIBILITY_SLACK,
    LinearSubproblemSolver,
    phase1_feasible,
    solve_subproblem,
)
from core.priors import TargetPriorSet
from tests.helpers import small_system

OFFSET_EVE = TargetPriorSet(sigma0_sq=1.0, mu=[0.5], sigma_theta=[0.1], beta=[1.0])


def tiny_instance(seed: int, gamma_db: float = 0.0, power_dbm: float = 10.0, di_case: int = 1, n_tx: int = 2):
    cfg = small_system(n_tx=n_tx, n_slots=2, n_users=1, power_budget_dbm=power_dbm)
    rng = np.random.default_rng(seed)
    channels = generate_rayleigh_channels(cfg, rng)
    symbols = random_symbol_frame(cfg, rng)
    ci = build_ci_constraints(channels, symbols, [gamma_db], cfg.noise_cu_mw, cfg.half_angle, cfg)
    di = build_di_constraints(di_case, OFFSET_EVE, symbols, 0.0, cfg.noise_eve_mw, cfg.half_angle, cfg)
    return cfg, ci.stack(di), rng


def slsqp_oracle(g: np.ndarray, constraints: ConstraintSet, start: np.ndarray) -> float:
    A = constraints.A.toarray()
    b = constraints.b
    radius_sq = constraints.radius**2
    result = minimize(
        lambda z: g @ z,
        start,
        jac=lambda z: g,
        method="SLSQP",
        constraints=[
            {"type": "ineq", "fun": lambda z: b - A @ z, "jac": lambda z: -A},
            {"type": "ineq", "fun": lambda z: radius_sq - z @ z, "jac": lambda z: -2 * z},
        ],
        options={"ftol": 1e-14, "maxiter": 1000},
    )
    return float(result.fun)


class TestLinearSubproblem(unittest.TestCase):
    def test_ball_only_solution_is_analytic(self) -> None:
        cfg = small_system()
        constraints = ConstraintSet.empty(cfg)
        rng = np.random.default_rng(0)
        G = rng.standard_normal((cfg.n_tx, cfg.n_slots)) + 1j * rng.standard_normal((cfg.n_tx, cfg.n_slots))
        solution = solve_subproblem(G, constraints)
        expected = -constraints.radius * G / np.linalg.norm(G)
        np.testing.assert_allclose(expected, solution.X_star, atol=1e-10)
        self.assertAlmostEqual(-constraints.radius * np.linalg.norm(G), solution.objective, places=9)

    def test_zero_direction_on_the_ball_returns_origin(self) -> None:
        cfg = small_system()
        solution = solve_subproblem(np.zeros((cfg.n_tx, cfg.n_slots)), ConstraintSet.empty(cfg))
        np.testing.assert_array_equal(np.zeros((cfg.n_tx, cfg.n_slots)), solution.X_star)

    def test_zero_direction_returns_a_feasible_frame(self) -> None:
        cfg, constraints, _ = tiny_instance(1)
        solution = solve_subproblem(np.zeros((cfg.n_tx, cfg.n_slots)), constraints)
        self.assertTrue(solution.ok)
        self.assertTrue(constraints.is_feasible(solution.X_star))

    def test_matches_slsqp_on_small_instances(self) -> None:
        checked = 0
        for seed in range(10):
            cfg, constraints, rng = tiny_instance(seed)
            start = phase1_feasible(constraints)
            if not start.feasible:
                continue
            G = rng.standard_normal((cfg.n_tx, cfg.n_slots)) + 1j * rng.standard_normal((cfg.n_tx, cfg.n_slots))
            solution = LinearSubproblemSolver(constraints).solve(G)
            g = constraints.frame_to_coords(G)
            oracle = slsqp_oracle(g, constraints, constraints.frame_to_coords(start.X))

            self.assertTrue(solution.ok, f"seed={seed}")
            self.assertLess(abs(solution.objective - oracle), 1e-6 * (1.0 + abs(oracle)), f"seed={seed}")
            self.assertLessEqual(solution.primal_residual, 1e-8 * (1.0 + np.linalg.norm(constraints.b)))
            self.assertLessEqual(solution.dual_gap, 1e-8)
            checked += 1
        self.assertGreaterEqual(checked, 5)

    def test_high_power_instances_stay_accurate(self) -> None:
        for seed in range(4):
            cfg, constraints, rng = tiny_instance(seed, gamma_db=25.0, power_dbm=45.0)
            start = phase1_feasible(constraints)
            self.assertTrue(start.feasible, f"seed={seed}")
            G = rng.standard_normal((cfg.n_tx, cfg.n_slots)) + 1j * rng.standard_normal((cfg.n_tx, cfg.n_slots))
            solution = LinearSubproblemSolver(constraints).solve(G * 1e-6)
            self.assertTrue(solution.ok, f"seed={seed}")
            self.assertLessEqual(solution.primal_residual, 1e-8 * (1.0 + np.linalg.norm(constraints.b)))
            self.assertLessEqual(solution.dual_gap, 1e-8)
            self.assertLessEqual(np.linalg.norm(solution.X_star), constraints.radius * (1 + 1e-12))

    def test_solver_is_reusable_across_directions(self) -> None:
        cfg, constraints, rng = tiny_instance(3)
        solver = LinearSubproblemSolver(constraints)
        for _ in range(3):
            G = rng.standard_normal((cfg.n_tx, cfg.n_slots)) + 1j * rng.standard_normal((cfg.n_tx, cfg.n_slots))
            first = solver.solve(G)
            again = solve_subproblem(G, constraints)
            self.assertAlmostEqual(first.objective, again.objective, places=7)


class TestPhaseOne(unittest.TestCase):
    def test_loose_targets_are_strictly_feasible(self) -> None:
        _, constraints, _ = tiny_instance(0, gamma_db=-30.0)
        result = phase1_feasible(constraints)
        self.assertTrue(result.feasible)
        self.assertGreater(result.max_slack, 0)
        self.assertGreaterEqual(float(np.min(constraints.slack(result.X))), FEASIBILITY_SLACK)
        self.assertTrue(constraints.is_feasible(result.X))

    def test_unreachable_targets_are_infeasible(self) -> None:
        _, constraints, _ = tiny_instance(0, gamma_db=60.0, power_dbm=0.0, n_tx=4)
        result = phase1_feasible(constraints)
        self.assertFalse(result.feasible)
        self.assertLess(result.max_slack, 0)
        self.assertIsNone(result.X)

    def test_empty_set_starts_at_origin(self) -> None:
        cfg = small_system()
        result = phase1_feasible(ConstraintSet.empty(cfg))
        self.assertTrue(result.feasible)
        np.testing.assert_array_equal(np.zeros((cfg.n_tx, cfg.n_slots)), result.X)


if __name__ == "__main__":
    unittest.main()
