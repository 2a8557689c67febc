import shutil
import tempfile
import xml.etree.ElementTree as ET
from dataclasses import replace
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase

from lifting import storage
from lifting.models import EvaluationRun, TrainingRun
from lifting.services import TrainingService

from .fixtures import TINY_CONFIG_TEXT


def run(*args, **options):
    out = StringIO()
    call_command(*args, stdout=out, stderr=StringIO(), **options)
    return out.getvalue()


class CommandTests(TestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = Path(tempfile.mkdtemp())
        cls.config = cls.tmp / "tiny.cfg"
        cls.config.write_text(TINY_CONFIG_TEXT, encoding="utf-8")
        cls.data = cls.tmp / "data"
        run("synth_gen", "3", str(cls.data), "--config", str(cls.config))
        cls.checkpoint = cls.tmp / "model.lfn"
        run("train", str(cls.data), str(cls.checkpoint), "--config", str(cls.config))

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp)
        super().tearDownClass()

    def path(self, name):
        return str(self.tmp / name)

    # --- synth_gen ---

    def test_synth_gen_layout(self):
        for sub in ("depth", "semantic", "label"):
            self.assertEqual(len(list((self.data / sub).iterdir())), 3)
        self.assertTrue((self.data / "calib.txt").exists())
        self.assertTrue((self.data / "priors.txt").exists())

    def test_synth_gen_is_reproducible(self):
        again = self.tmp / "again"
        run("synth_gen", "3", str(again), "--config", str(self.config))
        for path in sorted(p for p in self.data.rglob("*") if p.is_file()):
            self.assertEqual(path.read_bytes(), (again / path.relative_to(self.data)).read_bytes(), str(path))

    def test_synth_gen_offset_continues_numbering(self):
        out = self.tmp / "offset"
        run("synth_gen", "1", str(out), "--offset", "2", "--config", str(self.config))
        self.assertEqual(
            (out / "depth" / "000002.lfd").read_bytes(), (self.data / "depth" / "000002.lfd").read_bytes()
        )

    def test_other_seed_other_scenes(self):
        out = self.tmp / "seed7"
        run("synth_gen", "1", str(out), "--config", str(self.config), "--seed", "7")
        self.assertNotEqual(
            (out / "depth" / "000000.lfd").read_bytes(), (self.data / "depth" / "000000.lfd").read_bytes()
        )

    def test_malformed_config(self):
        bad = self.tmp / "bad.cfg"
        bad.write_text("bins = 1\nfoo = 2\n", encoding="utf-8")
        with self.assertRaises(CommandError):
            run("synth_gen", "1", self.path("never"), "--config", str(bad))

    # --- train ---

    def test_train_records_run(self):
        checkpoint = self.path("recorded.lfn")
        output = run("train", str(self.data), checkpoint, "--config", str(self.config), "--no-augment")
        self.assertIn("Обучение завершено", output)
        record = TrainingRun.objects.get(checkpoint_path=checkpoint)
        self.assertEqual(record.status, "completed")
        self.assertFalse(record.augment)
        self.assertEqual([h["epoch"] for h in record.loss_history], [1])
        self.assertIsNotNone(record.final_loss)

    def test_train_resume(self):
        checkpoint = self.tmp / "resume.lfn"
        shutil.copy(self.checkpoint, checkpoint)
        shutil.copy(TrainingService.loss_log_path(self.checkpoint), TrainingService.loss_log_path(checkpoint))
        run("train", str(self.data), str(checkpoint), "--config", str(self.config), "--resume", "--epochs", "2")
        log = TrainingService.loss_log_path(checkpoint).read_text(encoding="utf-8").splitlines()
        self.assertEqual([line.split()[0] for line in log], ["epoch=1", "epoch=2", "epoch=3"])

    def test_train_resume_with_changed_config_fails(self):
        checkpoint = self.tmp / "mismatch.lfn"
        shutil.copy(self.checkpoint, checkpoint)
        with self.assertRaises(CommandError):
            run("train", str(self.data), str(checkpoint), "--config", str(self.config), "--resume", "--precision", "f64")
        self.assertEqual(TrainingRun.objects.get(checkpoint_path=str(checkpoint)).status, "failed")

    # --- lift / eval / sweep ---

    def test_lift_writes_detection_files(self):
        out = self.tmp / "lifted"
        run("lift", str(self.checkpoint), str(self.data), str(out))
        for index in range(3):
            name = f"{index:06d}.txt"
            lines = (out / name).read_text(encoding="utf-8").splitlines()
            self.assertEqual(len(lines), len(storage.read_labels(self.data / "label" / name)))
            for line in lines:
                self.assertEqual(len(line.split()), 16)

    def test_lift_with_empty_detections(self):
        det = self.tmp / "det2d_empty"
        det.mkdir(exist_ok=True)
        out = self.tmp / "lifted_empty"
        run("lift", str(self.checkpoint), str(self.data), str(out), "--detections", str(det))
        self.assertEqual((out / "000000.txt").read_text(encoding="utf-8"), "")

    def test_lift_missing_checkpoint(self):
        with self.assertRaises(CommandError):
            run("lift", self.path("absent.lfn"), str(self.data), self.path("none"))

    def write_ground_truth_detections(self, name):
        det = self.tmp / name
        for path in (self.data / "label").glob("*.txt"):
            records = [replace(rec, score=1.0) for rec in storage.read_labels(path)]
            storage.write_labels(det / path.name, records)
        return det

    def test_eval_ground_truth_is_perfect(self):
        det = self.write_ground_truth_detections("gt_as_det")
        report_dir = self.tmp / "report"
        output = run("eval", str(self.data), str(det), "--out", str(report_dir), "--config", str(self.config))
        self.assertIn("AP_3D", output)
        metrics = EvaluationRun.objects.latest("created_at").metrics
        checked = 0
        for key, value in metrics.items():
            if key.endswith(".ap_3d") and metrics[key.replace(".ap_3d", ".num_gt")] > 0:
                self.assertAlmostEqual(value, 100.0)
                checked += 1
        self.assertGreater(checked, 0)
        lines = (report_dir / "metrics.txt").read_text(encoding="utf-8").splitlines()
        self.assertEqual(lines[0], "mode=r40")
        self.assertTrue((report_dir / "report.txt").exists())

    def test_eval_mode_flag(self):
        det = self.write_ground_truth_detections("gt_as_det_r11")
        output = run("eval", str(self.data), str(det), "--mode", "r11", "--config", str(self.config))
        self.assertIn("mode=r11", output)

    def test_sweep_rows(self):
        det = self.write_ground_truth_detections("gt_as_det_sweep")
        out = self.tmp / "sweep.txt"
        output = run("sweep", str(self.data), str(det), "--class-name", "Car", "--difficulty", "hard",
                     "--metric", "bev", "--out", str(out))
        rows = out.read_text(encoding="utf-8").splitlines()
        self.assertEqual(rows[0], "# Car hard AP_BEV r40")
        self.assertEqual([row.split()[0] for row in rows[1:]], ["0.30", "0.40", "0.50", "0.60", "0.70"])
        self.assertEqual(output, out.read_text(encoding="utf-8"))

    def test_eval_missing_directory(self):
        with self.assertRaises(CommandError):
            run("eval", str(self.data), self.path("nowhere"))

    # --- plot_bev / shift_probe ---

    def test_plot_bev(self):
        out = self.tmp / "frame.svg"
        run("plot_bev", str(self.data), "0", str(out))
        root = ET.parse(out).getroot()
        polygons = root.findall(".//{http://www.w3.org/2000/svg}polygon")
        self.assertEqual(len(polygons), len(storage.read_labels(self.data / "label" / "000000.txt")))

    def test_shift_probe(self):
        output = run("shift_probe", str(self.checkpoint), str(self.data), "--copies", "2", "--config", str(self.config))
        self.assertRegex(output.strip(), r"^objects=\d+ copies=2 mean_iou_3d=\d\.\d{4}$")
