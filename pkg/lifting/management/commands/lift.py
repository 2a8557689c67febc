"""
Команда `lift`: подъём 2D-детекций датасета в 3D-рамки.

Пример:
    python manage.py lift model.lfn data/val out/det --detections det2d/
"""
from __future__ import annotations

from pathlib import Path
from typing import Any, Dict

from django.core.management.base import CommandParser

from ...services import DatasetService, LiftingService
from ...tasks import lift_frame
from ..base import LiftCommand


class Command(LiftCommand):
    help = "Поднимает 2D-детекции (или эталонные 2D-рамки) в 3D и пишет KITTI-файлы детекций"

    def add_command_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("checkpoint", help="Чекпойнт сети")
        parser.add_argument("dataset_dir", help="Каталог датасета")
        parser.add_argument("out_dir", help="Каталог для файлов детекций")
        parser.add_argument(
            "--detections", default=None, help="Каталог 2D-детекций KITTI; по умолчанию эталонные 2D-рамки"
        )

    def run(self, options: Dict[str, Any]) -> None:
        config = self.load_config(options)
        LiftingService.load_model(options["checkpoint"], options.get("precision"))
        Path(options["out_dir"]).mkdir(parents=True, exist_ok=True)

        data = config.to_data()
        data["precision"] = options.get("precision")
        signatures = [
            lift_frame.s(
                index, options["dataset_dir"], options["checkpoint"], data, options["out_dir"], options["detections"]
            )
            for index in DatasetService.list_frames(options["dataset_dir"])
        ]
        results = self.run_tasks(signatures, "Подъём детекций")
        total = sum(r["detections"] for r in results)
        self.stdout.write(self.style.SUCCESS(f"Кадров: {len(results)}, 3D-рамок: {total}, каталог {options['out_dir']}"))
