#!/usr/bin/env python
"""
Точка входа для управления Django-проектом.
"""
import os
import sys


def main() -> None:
    """Запуск management-команд: synth_gen, train, lift, eval, sweep, plot_bev, shift_probe."""
    # Указываем модуль настроек Django-проекта
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "lift3d_project.settings")
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Не удалось импортировать Django. Убедитесь, что оно установлено "
            "и что виртуальное окружение активировано."
        ) from exc
    # Передаём аргументы командной строки Django
    execute_from_command_line(sys.argv)


if __name__ == "__main__":
    main()


