"""
Общая основа management-команд приложения `lifting`.

Команда читает конфигурацию запуска (`--config`, переопределения флагами),
переводит ошибки конвейера и ввода-вывода в `CommandError` и
записывает историю запуска без риска сорвать основную работу.
"""
from __future__ import annotations

import logging
from typing import Any, Dict, List

from celery import group
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError, CommandParser
from django.db import DatabaseError

from ..exceptions import Lift3DError
from ..nettrain import PRECISIONS
from ..runconfig import RunConfig

logger = logging.getLogger(__name__)


class LiftCommand(BaseCommand):
    """Базовая команда: флаги --config, --seed, --precision и обработка ошибок."""

    def add_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("--config", default=None, help="Файл конфигурации key = value")
        parser.add_argument("--seed", type=int, default=None, help="Зерно генераторов (перекрывает seed)")
        parser.add_argument(
            "--precision", choices=sorted(PRECISIONS), default=None, help="Точность вычислений сети"
        )
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser: CommandParser) -> None:
        """Аргументы конкретной команды."""

    def config_overrides(self, options: Dict[str, Any]) -> Dict[str, Any]:
        return {"seed": options.get("seed"), "precision": options.get("precision")}

    def load_config(self, options: Dict[str, Any]) -> RunConfig:
        return RunConfig.load(options.get("config"), self.config_overrides(options))

    @property
    def workers(self) -> int:
        return settings.LIFT3D_THREADS

    def handle(self, *args: Any, **options: Any) -> None:
        try:
            self.run(options)
        except (Lift3DError, OSError) as exc:
            logger.debug("Команда завершилась ошибкой", exc_info=True)
            raise CommandError(str(exc)) from exc

    def run(self, options: Dict[str, Any]) -> None:
        raise NotImplementedError

    def run_tasks(self, signatures: List[Any], what: str) -> List[Dict[str, Any]]:
        """
        Запускает группу задач Celery и возвращает результаты в порядке
        подписей; любая неуспешная задача делает команду неуспешной.
        """
        if not signatures:
            return []
        results = group(signatures).apply_async().get()
        failed = [r for r in results if not r.get("success")]
        if failed:
            first = failed[0]
            raise CommandError(f"{what}: ошибок {len(failed)}, первая (кадр {first.get('index')}): {first.get('error')}")
        return results

    def record(self, model: Any, **fields: Any) -> Any:
        """Создаёт запись истории; ошибка базы данных только логируется."""
        try:
            return model.objects.create(**fields)
        except DatabaseError as exc:
            logger.warning("История запуска не сохранена: %s", exc)
            return None

    def update_record(self, instance: Any, **fields: Any) -> None:
        if instance is None:
            return
        for name, value in fields.items():
            setattr(instance, name, value)
        try:
            instance.save()
        except DatabaseError as exc:
            logger.warning("История запуска не обновлена: %s", exc)
