"""
Команда `synth_gen`: генерация синтетического датасета.

Пример:
    python manage.py synth_gen 100 data/train --config run.cfg --seed 1
"""
from __future__ import annotations

from pathlib import Path
from typing import Any, Dict

from django.core.management.base import CommandError, CommandParser

from ...services import DatasetService
from ...tasks import generate_scene
from ..base import LiftCommand


class Command(LiftCommand):
    help = "Генерирует N синтетических сцен в раскладке depth/semantic/label + calib.txt и priors.txt"

    def add_command_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("n_scenes", type=int, help="Число сцен")
        parser.add_argument("out_dir", help="Каталог датасета")
        parser.add_argument("--offset", type=int, default=0, help="Номер первой сцены")

    def run(self, options: Dict[str, Any]) -> None:
        config = self.load_config(options)
        n_scenes, offset = options["n_scenes"], options["offset"]
        if n_scenes < 0 or offset < 0:
            raise CommandError("Число сцен и смещение должны быть неотрицательными")
        out_dir = Path(options["out_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        scene_cfg = config.scene_config()

        data = config.to_data()
        results = self.run_tasks(
            [generate_scene.s(i, data, str(out_dir), int(config.grid_kind)) for i in range(offset, offset + n_scenes)],
            "Генерация сцен",
        )
        DatasetService.write_calib(out_dir, scene_cfg.rig)
        fallback = {name: mean for name, (mean, _) in scene_cfg.dimensions.items()}
        priors = DatasetService.compute_priors(out_dir, config.classes, fallback)
        DatasetService.write_priors(out_dir, priors)

        visible = sum(r["visible"] for r in results)
        self.stdout.write(
            self.style.SUCCESS(f"Сгенерировано сцен: {len(results)}, видимых объектов: {visible}, каталог {out_dir}")
        )
