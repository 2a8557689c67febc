"""
Команда `shift_probe`: устойчивость подъёма к сдвигу 2D-рамок.

Пример:
    python manage.py shift_probe model.lfn data/val --copies 10
"""
from __future__ import annotations

from typing import Any, Dict

from django.core.management.base import CommandParser

from ...services import LiftingService, ShiftProbeService
from ..base import LiftCommand


class Command(LiftCommand):
    help = "Средний 3D IoU между подъёмами по сдвинутым и по точным 2D-рамкам"

    def add_command_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("checkpoint", help="Чекпойнт сети")
        parser.add_argument("dataset_dir", help="Каталог датасета")
        parser.add_argument("--copies", type=int, default=None, help="Сдвинутых копий на объект (перекрывает shift_probe_copies)")

    def config_overrides(self, options: Dict[str, Any]) -> Dict[str, Any]:
        overrides = super().config_overrides(options)
        overrides["shift_probe_copies"] = options.get("copies")
        return overrides

    def run(self, options: Dict[str, Any]) -> None:
        config = self.load_config(options)
        model = LiftingService.load_model(options["checkpoint"], options.get("precision"))
        result = ShiftProbeService.run(
            model,
            options["dataset_dir"],
            copies=config["shift_probe_copies"],
            jitter_fraction=config["jitter_fraction"],
            seed=config["seed"],
        )
        self.stdout.write(f"objects={result.objects} copies={result.copies} mean_iou_3d={result.mean_iou:.4f}")
