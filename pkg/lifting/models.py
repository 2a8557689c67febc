"""
Модели приложения `lifting`.

История запусков (файлы на диске остаются основным результатом):
- `TrainingRun` — обучение сети подъёма;
- `EvaluationRun` — оценка детекций по эталонной разметке.
"""
from django.db import models


class TrainingRun(models.Model):
    """
    Запуск обучения.

    Содержит:
    - пути к датасету и чекпойнту;
    - хеш конфигурации и параметры;
    - историю функции потерь по эпохам.
    """

    STATUSES = (
        ("processing", "В обработке"),
        ("completed", "Завершено"),
        ("failed", "Ошибка"),
    )

    created_at = models.DateTimeField(
        auto_now_add=True,
        verbose_name="Дата запуска",
    )
    dataset_dir = models.CharField(
        max_length=1000,
        verbose_name="Каталог датасета",
    )
    checkpoint_path = models.CharField(
        max_length=1000,
        verbose_name="Чекпойнт",
    )
    config_hash = models.CharField(
        max_length=64,
        verbose_name="Хеш конфигурации",
    )
    epochs = models.PositiveIntegerField(
        default=0,
        verbose_name="Число эпох",
    )
    augment = models.BooleanField(
        default=True,
        verbose_name="Аугментация сдвигом рамок",
    )
    final_loss = models.FloatField(
        blank=True,
        null=True,
        verbose_name="Итоговая потеря",
    )
    loss_history = models.JSONField(
        default=list,
        verbose_name="История потерь",
        help_text="Список словарей по эпохам: epoch, total и слагаемые",
    )
    status = models.CharField(
        max_length=50,
        default="processing",
        choices=STATUSES,
        verbose_name="Статус",
    )
    error_message = models.TextField(
        blank=True,
        null=True,
        verbose_name="Сообщение об ошибке",
    )

    class Meta:
        verbose_name = "Запуск обучения"
        verbose_name_plural = "Запуски обучения"
        ordering = ["-created_at"]

    def __str__(self) -> str:
        return f"Обучение {self.checkpoint_path} ({self.status})"


class EvaluationRun(models.Model):
    """Запуск оценки: каталоги эталона и детекций, метрики и текст отчёта."""

    created_at = models.DateTimeField(
        auto_now_add=True,
        verbose_name="Дата запуска",
    )
    gt_dir = models.CharField(
        max_length=1000,
        verbose_name="Каталог эталонной разметки",
    )
    det_dir = models.CharField(
        max_length=1000,
        verbose_name="Каталог детекций",
    )
    mode = models.CharField(
        max_length=10,
        choices=(("r11", "R11"), ("r40", "R40")),
        default="r40",
        verbose_name="Интерполяция AP",
    )
    metrics = models.JSONField(
        default=dict,
        verbose_name="Метрики",
        help_text="Плоский словарь класс.уровень.метрика → значение",
    )
    report_text = models.TextField(
        blank=True,
        default="",
        verbose_name="Текст отчёта",
    )

    class Meta:
        verbose_name = "Запуск оценки"
        verbose_name_plural = "Запуски оценки"
        ordering = ["-created_at"]

    def __str__(self) -> str:
        return f"Оценка {self.det_dir} от {self.created_at.date()}"
