import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from core.bfim import BcrbObjective, expectation_factors
from core.database import Database
from core.errors import ConfigurationError
from core.priors import prior_fim
from core.run_manager import MANIFEST_NAME, RunManager, RunManifest
from storage.factor_cache import FACTOR_CACHE_VERSION, FactorCache, factor_key
from storage.file_storage import FileStorage
from tests.helpers import TEST_LOGGER, small_priors, small_system
from utils.config_loader import dump_config


class TestFileStorage(unittest.TestCase):
    def setUp(self) -> None:
        self.tmpdir = tempfile.TemporaryDirectory()
        self.storage = FileStorage()
        self.data_path = Path(self.tmpdir.name) / "data.json"

    def tearDown(self) -> None:
        self.tmpdir.cleanup()

    def test_load_missing_returns_empty_list(self) -> None:
        self.assertEqual([], self.storage.load_json(self.data_path))

    def test_save_creates_backup_on_overwrite(self) -> None:
        self.assertTrue(self.storage.save_json(self.data_path, [{"id": 1}]))
        self.assertEqual(0, len(list(self.data_path.parent.glob("data.json.*.bak"))))

        self.assertTrue(self.storage.save_json(self.data_path, [{"id": 2}]))
        backups = list(self.data_path.parent.glob("data.json.*.bak"))
        self.assertEqual(1, len(backups))

    def test_corrupt_file_is_quarantined(self) -> None:
        self.data_path.write_text("{bad json", encoding="utf-8")
        result = self.storage.load_json(self.data_path)
        self.assertEqual([], result)
        self.assertFalse(self.data_path.exists())
        quarantined = list(self.data_path.parent.glob("data.json.*.corrupt"))
        self.assertEqual(1, len(quarantined))

    def test_json_is_canonical(self) -> None:
        self.assertTrue(self.storage.save_json(self.data_path, {"b": 1, "a": [1.5, 2]}, backup=False))
        self.assertEqual('{\n  "a": [\n    1.5,\n    2\n  ],\n  "b": 1\n}\n', self.data_path.read_text(encoding="utf-8"))

    def test_non_finite_numbers_are_refused(self) -> None:
        self.assertFalse(self.storage.save_json(self.data_path, {"value": float("nan")}))
        self.assertFalse(self.data_path.exists())

    def test_csv_carries_comment_line(self) -> None:
        path = Path(self.tmpdir.name) / "out" / "table.csv"
        self.assertTrue(self.storage.write_csv(path, ["a", "b"], [["1", "x"], ["2", "y"]], comment="config_hash=abc"))
        self.assertEqual("# config_hash=abc\na,b\n1,x\n2,y\n", path.read_text(encoding="utf-8"))
        self.assertFalse(path.with_suffix(".csv.tmp").exists())

    def test_backups_are_trimmed(self) -> None:
        for index in range(6):
            self.assertTrue(self.storage.save_json(self.data_path, [{"id": index}]))
        self.assertEqual(3, len(list(self.data_path.parent.glob("data.json.*.bak"))))
        self.assertEqual([{"id": 5}], self.storage.load_json(self.data_path))


class TestRunManager(unittest.TestCase):
    def setUp(self) -> None:
        self.tmpdir = tempfile.TemporaryDirectory()
        tmp_path = Path(self.tmpdir.name)
        config = {
            "paths": {
                "data_dir": str(tmp_path / "data"),
                "log_dir": str(tmp_path / "logs"),
            }
        }
        self.config_path = tmp_path / "config.yml"
        dump_config(self.config_path, config)
        self.manager = RunManager(str(self.config_path))
        self.out_dir = tmp_path / "run"

    def tearDown(self) -> None:
        if hasattr(self, "manager"):
            for handler in list(self.manager.logger.handlers):
                handler.close()
                self.manager.logger.removeHandler(handler)
        self.tmpdir.cleanup()

    def _manifest(self, command: str, **overrides) -> RunManifest:
        values = dict(command=command, config_hash="f" * 64, seeds=[0], output_dir=str(self.out_dir))
        values.update(overrides)
        return RunManifest(**values)

    def test_manifest_is_written_next_to_outputs(self) -> None:
        manifest = self._manifest("design", outputs=["frame.csv"])
        path = manifest.write(self.manager.storage)
        self.assertEqual(self.out_dir / MANIFEST_NAME, path)
        data = json.loads(path.read_text(encoding="utf-8"))
        self.assertEqual("design", data["command"])
        self.assertEqual(["frame.csv"], data["outputs"])
        self.assertIn("numpy", data["versions"])

    def test_history_is_kept_in_data_dir(self) -> None:
        self.manager.record_run(self._manifest("design"))
        self.manager.record_run(self._manifest("sweep", status="infeasible"))
        self.assertTrue((Path(self.tmpdir.name) / "data" / "runs.json").exists())

        self.assertEqual(2, len(self.manager.list_runs()))
        sweeps = self.manager.list_runs("sweep")
        self.assertEqual(1, len(sweeps))
        self.assertEqual("infeasible", sweeps[0]["status"])
        self.assertNotIn("versions", sweeps[0])


class TestRunManagerDatabase(unittest.TestCase):
    def setUp(self) -> None:
        self.tmpdir = tempfile.TemporaryDirectory()
        tmp_path = Path(self.tmpdir.name)
        self.db_path = tmp_path / "runs.sqlite"
        self.config = {
            "paths": {
                "data_dir": str(tmp_path / "data"),
                "log_dir": str(tmp_path / "logs"),
            },
            "database": {"url": f"sqlite:///{self.db_path}"},
        }
        self.config_path = tmp_path / "config.yml"
        dump_config(self.config_path, self.config)
        self.database = Database(self.config)
        self.database.create_tables()
        self.manager = RunManager(
            str(self.config_path),
            config=self.config,
            db_session_factory=self.database.get_session_factory(),
        )

    def tearDown(self) -> None:
        if hasattr(self, "manager"):
            for handler in list(self.manager.logger.handlers):
                handler.close()
                self.manager.logger.removeHandler(handler)
        self.database.dispose()
        self.tmpdir.cleanup()

    def test_runs_round_trip_through_the_table(self) -> None:
        manifest = RunManifest(
            command="ser", config_hash="a" * 64, seeds=[0, 1], output_dir="out", outputs=["ser.csv"], wall_clock_s=1.5
        )
        self.manager.record_run(manifest)
        self.manager.record_run(RunManifest(command="design", config_hash="b" * 64, seeds=[0], output_dir="out"))

        self.assertTrue(self.database.test_connection())
        self.assertEqual(2, len(self.manager.list_runs()))
        stored = self.manager.list_runs("ser")
        self.assertEqual(1, len(stored))
        self.assertEqual([0, 1], stored[0]["seeds"])
        self.assertEqual(["ser.csv"], stored[0]["outputs"])
        self.assertEqual(1.5, stored[0]["wall_clock_s"])
        self.assertFalse((Path(self.tmpdir.name) / "data" / "runs.json").exists())

    def test_missing_url_is_a_configuration_error(self) -> None:
        with self.assertRaises(ConfigurationError):
            Database({"database": {"url": ""}}).get_engine()


class TestFactorCache(unittest.TestCase):
    def setUp(self) -> None:
        self.tmpdir = tempfile.TemporaryDirectory()
        self.cache = FactorCache(Path(self.tmpdir.name) / "cache", logger=TEST_LOGGER)
        cfg = small_system()
        self.factors = expectation_factors(small_priors(), cfg, 15, np.random.default_rng(0))
        self.key = factor_key({"n_tx": cfg.n_tx, "n_samples": 15, "seed": 0})

    def tearDown(self) -> None:
        self.tmpdir.cleanup()

    def test_miss_then_exact_hit(self) -> None:
        self.assertIsNone(self.cache.load(self.key))
        self.cache.save(self.key, self.factors)
        loaded = self.cache.load(self.key)
        np.testing.assert_array_equal(self.factors.F_tilde, loaded.F_tilde)
        np.testing.assert_array_equal(self.factors.G_tilde, loaded.G_tilde)
        self.assertEqual(15, loaded.sample_count)

    def test_cached_factors_reproduce_fresh_gradients_exactly(self) -> None:
        self.assertTrue(self.factors.F_tilde.flags.c_contiguous)
        self.cache.save(self.key, self.factors)
        loaded = self.cache.load(self.key)
        cfg = small_system()
        J_P = prior_fim(small_priors())
        rng = np.random.default_rng(4)
        X = rng.standard_normal((cfg.n_tx, cfg.n_slots)) + 1j * rng.standard_normal((cfg.n_tx, cfg.n_slots))
        fresh = BcrbObjective(self.factors, J_P, cfg)
        cached = BcrbObjective(loaded, J_P, cfg)
        np.testing.assert_array_equal(fresh.gradient(X), cached.gradient(X))
        self.assertEqual(fresh(X), cached(X))

    def test_key_depends_on_every_field(self) -> None:
        self.assertEqual(32, len(self.key))
        self.assertEqual(self.key, factor_key({"seed": 0, "n_samples": 15, "n_tx": 4}))
        self.assertNotEqual(self.key, factor_key({"n_tx": 4, "n_samples": 15, "seed": 1}))

    def test_stale_or_corrupt_files_are_misses(self) -> None:
        path = self.cache.save(self.key, self.factors)
        with np.load(path) as data:
            contents = dict(data)
        contents["version"] = np.int64(FACTOR_CACHE_VERSION + 1)
        np.savez(path, **contents)
        self.assertIsNone(self.cache.load(self.key))

        path.write_bytes(b"not an archive")
        self.assertIsNone(self.cache.load(self.key))


if __name__ == "__main__":
    unittest.main()
