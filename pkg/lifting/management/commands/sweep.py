"""
Команда `sweep`: AP в зависимости от порога IoU.

Пример:
    python manage.py sweep data/val out/det --class-name Car --metric 3d
"""
from __future__ import annotations

from pathlib import Path
from typing import Any, Dict

from django.core.management.base import CommandParser

from ... import storage
from ...evalkit import DIFFICULTIES, METRICS, MODES
from ...services import EvaluationService
from ..base import LiftCommand


class Command(LiftCommand):
    help = "Таблица «порог IoU → AP» для одного класса и уровня сложности"

    def add_command_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("gt_dir", help="Датасет или каталог эталонной разметки")
        parser.add_argument("det_dir", help="Каталог KITTI-файлов детекций")
        parser.add_argument("--class-name", default="Car", help="Класс объектов")
        parser.add_argument("--difficulty", choices=DIFFICULTIES, default="moderate")
        parser.add_argument("--metric", choices=[m for m in METRICS if m != "aos"], default="3d")
        parser.add_argument("--mode", choices=MODES, default=None, help="Интерполяция AP (перекрывает eval_mode)")
        parser.add_argument("--out", default=None, help="Файл для таблицы")

    def config_overrides(self, options: Dict[str, Any]) -> Dict[str, Any]:
        overrides = super().config_overrides(options)
        overrides["eval_mode"] = options.get("mode")
        return overrides

    def run(self, options: Dict[str, Any]) -> None:
        config = self.load_config(options)
        curve = EvaluationService.sweep(
            options["gt_dir"],
            options["det_dir"],
            config["sweep_thresholds"],
            options["class_name"],
            options["difficulty"],
            options["metric"],
            config["eval_mode"],
        )
        header = f"# {options['class_name']} {options['difficulty']} AP_{options['metric'].upper()} {config['eval_mode']}"
        table = "\n".join([header] + [f"{threshold:.2f} {ap:.4f}" for threshold, ap in curve]) + "\n"
        if options["out"]:
            storage.atomic_write_text(Path(options["out"]), table)
        self.stdout.write(table)
