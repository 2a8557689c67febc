"""
Конфигурация приложения `lifting`.
"""
from django.apps import AppConfig


class LiftingConfig(AppConfig):
    """Класс конфигурации приложения подъёма детекций."""

    default_auto_field = "django.db.models.BigAutoField"
    name = "lifting"
    verbose_name = "Подъём 2D-детекций в 3D"
