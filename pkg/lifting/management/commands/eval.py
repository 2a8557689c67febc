"""
Команда `eval`: оценка каталога детекций по эталонной разметке.

Пример:
    python manage.py eval data/val out/det --mode r11 --out out/report
"""
from __future__ import annotations

from pathlib import Path
from typing import Any, Dict

from django.core.management.base import CommandParser

from ... import storage
from ...evalkit import MODES
from ...models import EvaluationRun
from ...services import EvaluationService
from ..base import LiftCommand

TABLE_FILE = "report.txt"
METRICS_FILE = "metrics.txt"


class Command(LiftCommand):
    help = "Считает AP_BEV, AP_3D, AP_2D и AOS по классам и уровням сложности"

    def add_command_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("gt_dir", help="Датасет или каталог эталонной разметки")
        parser.add_argument("det_dir", help="Каталог KITTI-файлов детекций")
        parser.add_argument("--mode", choices=MODES, default=None, help="Интерполяция AP (перекрывает eval_mode)")
        parser.add_argument("--out", default=None, help=f"Каталог для {TABLE_FILE} и {METRICS_FILE}")

    def config_overrides(self, options: Dict[str, Any]) -> Dict[str, Any]:
        overrides = super().config_overrides(options)
        overrides["eval_mode"] = options.get("mode")
        return overrides

    def run(self, options: Dict[str, Any]) -> None:
        config = self.load_config(options)
        report = EvaluationService.evaluate(options["gt_dir"], options["det_dir"], config.eval_config())
        table, lines = report.to_table(), report.to_lines()

        if options["out"]:
            out_dir = Path(options["out"])
            storage.atomic_write_text(out_dir / TABLE_FILE, table)
            storage.atomic_write_text(out_dir / METRICS_FILE, lines)

        self.record(
            EvaluationRun,
            gt_dir=options["gt_dir"],
            det_dir=options["det_dir"],
            mode=report.mode,
            metrics=report.to_key_values(),
            report_text=table,
        )
        self.stdout.write(table)
        self.stdout.write(lines)
