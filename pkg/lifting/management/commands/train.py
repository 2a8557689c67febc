"""
Команда `train`: обучение сети подъёма по датасету.

Пример:
    python manage.py train data/train model.lfn --config run.cfg
    python manage.py train data/train model.lfn --resume --epochs 5
"""
from __future__ import annotations

from typing import Any, Dict

from django.core.management.base import CommandParser

from ...models import TrainingRun
from ...services import TrainingService
from ..base import LiftCommand


class Command(LiftCommand):
    help = "Обучает сеть и пишет чекпойнт и журнал потерь <checkpoint>.loss.txt"

    def add_command_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("dataset_dir", help="Каталог обучающего датасета")
        parser.add_argument("checkpoint", help="Путь к чекпойнту")
        parser.add_argument("--no-augment", action="store_true", help="Отключить сдвиг 2D-рамок")
        parser.add_argument("--epochs", type=int, default=None, help="Число эпох (перекрывает epochs)")
        parser.add_argument("--resume", action="store_true", help="Продолжить обучение из чекпойнта")

    def config_overrides(self, options: Dict[str, Any]) -> Dict[str, Any]:
        overrides = super().config_overrides(options)
        overrides["epochs"] = options.get("epochs")
        if options.get("no_augment"):
            overrides["augment"] = False
        return overrides

    def run(self, options: Dict[str, Any]) -> None:
        config = self.load_config(options)
        run = self.record(
            TrainingRun,
            dataset_dir=options["dataset_dir"],
            checkpoint_path=options["checkpoint"],
            config_hash=config.config_hash(),
            epochs=config["epochs"],
            augment=config["augment"],
        )
        try:
            result, model = TrainingService.train(
                config,
                options["dataset_dir"],
                options["checkpoint"],
                resume=options["resume"],
                workers=self.workers,
            )
        except Exception as exc:
            self.update_record(run, status="failed", error_message=str(exc))
            raise

        history = [{"epoch": e.epoch, "total": e.total, **e.terms} for e in result.history]
        final_loss = result.history[-1].total if result.history else None
        self.update_record(run, status="completed", loss_history=history, final_loss=final_loss)

        loss_text = f"{final_loss:.6f}" if final_loss is not None else "—"
        self.stdout.write(
            self.style.SUCCESS(
                f"Обучение завершено: эпох {model.epochs}, шагов {result.steps}, потеря {loss_text}, "
                f"чекпойнт {options['checkpoint']}"
            )
        )
