"""
Конфигурация Celery для проекта.

Celery используется для раздачи по воркерам:
- генерации синтетических сцен;
- подъёма детекций по кадрам.

При LIFT3D_CELERY_EAGER=1 (по умолчанию) задачи выполняются в процессе команды.
"""
import os

from celery import Celery

# Указываем настройки Django для Celery
os.environ.setdefault("DJANGO_SETTINGS_MODULE", "lift3d_project.settings")

app = Celery("lift3d_project")

# Загружаем конфигурацию Celery из Django-настроек с префиксом CELERY_
app.config_from_object("django.conf:settings", namespace="CELERY")

# Автоматически находим задачи (tasks.py) во всех установленных приложениях
app.autodiscover_tasks()
