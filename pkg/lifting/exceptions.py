"""
Типизированные ошибки приложения `lifting`.

Каждое исключение наследует и общий базовый класс `Lift3DError`,
и ближайшее встроенное исключение, поэтому вызывающий код может
перехватывать любое из них.
"""
from __future__ import annotations


class Lift3DError(Exception):
    """Базовая ошибка конвейера подъёма 2D-детекций в 3D."""


class ConfigurationError(Lift3DError, ValueError):
    """Несовпадение размеров, неверные параметры камеры или конфигурации."""


class BehindCameraError(Lift3DError, ValueError):
    """Точка лежит за камерой (z ≤ 0) и не может быть спроецирована."""


class EmptyRoiError(Lift3DError, ValueError):
    """ROI пуст после обрезки или не содержит валидных точек."""


class UnknownClassError(Lift3DError, KeyError):
    """Класс отсутствует в таблице априорных размеров."""

    def __str__(self) -> str:
        # KeyError по умолчанию оборачивает сообщение в кавычки
        return str(self.args[0]) if self.args else ""


class BinIndexError(Lift3DError, IndexError):
    """Индекс бина ориентации или one-hot вектора вне диапазона."""


class ForwardStateError(Lift3DError, RuntimeError):
    """Обратный проход вызван без сохранённого прямого прохода."""


class TrainingDivergedError(Lift3DError, RuntimeError):
    """Функция потерь стала NaN/inf во время обучения."""


class LabelFormatError(Lift3DError, ValueError):
    """Строка KITTI-разметки не разбирается."""

    def __init__(self, message: str, line_number: int | None = None) -> None:
        self.line_number = line_number
        if line_number is not None:
            message = f"строка {line_number}: {message}"
        super().__init__(message)


class GridFormatError(Lift3DError, ValueError):
    """Повреждённый или неподдерживаемый файл сетки, маски или чекпойнта."""
