import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from lifting.exceptions import ConfigurationError
from lifting.geometry import GridKind
from lifting.runconfig import RunConfig, parse_config_text


class ParseConfigTextTests(SimpleTestCase):
    def test_comments_and_blank_lines(self):
        text = "# настройки\n\nseed = 4   # зерно\nclasses=Car, Cyclist\n"
        self.assertEqual(parse_config_text(text), {"seed": "4", "classes": "Car, Cyclist"})

    def test_duplicate_key(self):
        with self.assertRaisesMessage(ConfigurationError, "строка 2"):
            parse_config_text("seed = 1\nseed = 2\n")

    def test_line_without_equals(self):
        with self.assertRaises(ConfigurationError):
            parse_config_text("seed 1\n")


class RunConfigTests(SimpleTestCase):
    def test_defaults(self):
        cfg = RunConfig.load()
        self.assertEqual(cfg.classes, ("Car", "Pedestrian"))
        self.assertEqual(cfg["bins"], 2)
        self.assertEqual(cfg.grid_kind, GridKind.DEPTH)
        self.assertEqual(cfg.net_config().stage_channels, (16, 32, 64))
        self.assertEqual(cfg.train_config().augment.jitter_fraction, 0.25)

    def test_unknown_key_rejected(self):
        with self.assertRaisesMessage(ConfigurationError, "learning_rat"):
            RunConfig.from_mapping({"learning_rat": "0.1"})

    def test_invalid_values(self):
        for raw in ({"bins": "1"}, {"classes": "Car,Truck"}, {"classes": "Car,Car"},
                    {"stage_channels": "16,x"}, {"objects_min": "5", "objects_max": "2"},
                    {"dims_car": "1.5,1.6"}, {"eval_mode": "r12"}):
            with self.subTest(raw=raw), self.assertRaises(ConfigurationError):
                RunConfig.from_mapping(raw)

    def test_file_with_overrides(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run.cfg"
            path.write_text("seed = 5\nepochs = 3\naugment = false\n", encoding="utf-8")
            cfg = RunConfig.load(path, {"seed": 9, "epochs": None})
        self.assertEqual(cfg["seed"], 9)
        self.assertEqual(cfg["epochs"], 3)
        self.assertIsNone(cfg.augment_config())

    def test_file_error_names_path(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.cfg"
            path.write_text("seed = 1\nseed = 2\n", encoding="utf-8")
            with self.assertRaisesMessage(ConfigurationError, str(path)):
                RunConfig.load(path)

    def test_data_round_trip(self):
        cfg = RunConfig.load(overrides={"stage_channels": "4,8", "classes": "Car"})
        again = RunConfig.from_mapping(cfg.to_data())
        self.assertEqual(dict(again.values), dict(cfg.values))
        self.assertEqual(again.config_hash(), cfg.config_hash())

    def test_hash_ignores_paths_and_schedule(self):
        base = RunConfig.load()
        self.assertEqual(base.config_hash(), base.with_overrides(seed=3, epochs=50, dataset_dir="/data").config_hash())
        self.assertNotEqual(base.config_hash(), base.with_overrides(bins=4).config_hash())
        self.assertNotEqual(base.config_hash(), base.with_overrides(learning_rate=0.01).config_hash())
        self.assertEqual(len(base.config_hash()), 64)

    def test_module_configs(self):
        cfg = RunConfig.load(overrides={"classes": "Car,Pedestrian,Cyclist", "grid_kind": "disparity", "iou_car": "0.5"})
        self.assertEqual(cfg.net_config().num_classes, 3)
        self.assertEqual(cfg.grid_kind, GridKind.DISPARITY)
        self.assertEqual(cfg.eval_config().iou_thresholds["Car"], 0.5)
        self.assertEqual(cfg.scene_config().dimensions["Cyclist"][0], (1.74, 0.60, 1.76))
        self.assertEqual(cfg.orientation_bins().count, 2)
        self.assertEqual(cfg.loss_weights().bin_cls, 1.0)
        self.assertEqual(cfg.train_config(workers=4).workers, 4)
