"""
Команда `plot_bev`: SVG-схема рамок кадра в виде сверху.

Пример:
    python manage.py plot_bev data/val 7 frame7.svg --detections out/det
"""
from __future__ import annotations

from typing import Any, Dict

from django.core.management.base import CommandParser

from ...services import PlotService
from ..base import LiftCommand


class Command(LiftCommand):
    help = "Рисует эталонные и поднятые рамки кадра в виде сверху; курс — красная линия"

    def add_command_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("dataset_dir", help="Датасет или каталог эталонной разметки")
        parser.add_argument("index", type=int, help="Номер кадра")
        parser.add_argument("out_path", help="Файл SVG")
        parser.add_argument("--detections", default=None, help="Каталог KITTI-файлов детекций")

    def run(self, options: Dict[str, Any]) -> None:
        path = PlotService.plot_frame(options["dataset_dir"], options["index"], options["out_path"], options["detections"])
        self.stdout.write(self.style.SUCCESS(f"Схема записана в {path}"))
