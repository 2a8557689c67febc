"""
Настройки Django-проекта подъёма 2D-детекций в 3D.

Проект не обслуживает HTTP: Django даёт management-команды, ORM для
истории запусков, шаблоны для SVG и тестовый раннер, Celery — фоновые задачи.
Значения берутся из переменных окружения с умолчаниями для разработки.
"""
from pathlib import Path
import os


# -----------------------------
# БАЗОВЫЕ ПУТИ И НАСТРОЙКИ
# -----------------------------

BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.environ.get(
    "DJANGO_SECRET_KEY",
    "dev-secret-key-change-me",  # только для разработки
)

DEBUG = os.environ.get("DJANGO_DEBUG", "0") == "1"

ALLOWED_HOSTS: list[str] = []


# -----------------------------
# УСТАНОВЛЕННЫЕ ПРИЛОЖЕНИЯ
# -----------------------------

INSTALLED_APPS = [
    "django.contrib.contenttypes",
    "django.contrib.auth",

    # Сторонние приложения
    "rest_framework",
    "django_celery_results",

    "lifting",
]

TEMPLATES = [
    {
        "BACKEND": "django.template.backends.django.DjangoTemplates",
        "DIRS": [],
        "APP_DIRS": True,
        "OPTIONS": {
            "autoescape": True,
        },
    },
]


# -----------------------------
# БАЗА ДАННЫХ
# -----------------------------

# История запусков; файлы на диске остаются основным результатом
DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": os.environ.get("LIFT3D_DB_PATH", str(BASE_DIR / "lift3d.sqlite3")),
    }
}


# -----------------------------
# ЛОКАЛИЗАЦИЯ
# -----------------------------

LANGUAGE_CODE = "ru-ru"

TIME_ZONE = "UTC"

USE_I18N = True

USE_TZ = True


# -----------------------------
# ВЫЧИСЛЕНИЯ
# -----------------------------

# Ограничение числа потоков сборки батчей и воркеров Celery
LIFT3D_THREADS = max(1, int(os.environ.get("LIFT3D_THREADS", os.cpu_count() or 1)))


# -----------------------------
# ЛОГИРОВАНИЕ
# -----------------------------

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "simple": {
            "format": "%(asctime)s %(levelname)s %(name)s: %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "simple",
        },
    },
    "loggers": {
        "lifting": {
            "handlers": ["console"],
            "level": os.environ.get("LIFT3D_LOG_LEVEL", "INFO"),
            "propagate": False,
        },
        "celery": {
            "handlers": ["console"],
            "level": "INFO",
            "propagate": False,
        },
    },
}


# -----------------------------
# CELERY
# -----------------------------

CELERY_BROKER_URL = os.environ.get("CELERY_BROKER_URL", "redis://localhost:6379/0")
CELERY_RESULT_BACKEND = "django-db"
CELERY_ACCEPT_CONTENT = ["json"]
CELERY_TASK_SERIALIZER = "json"
CELERY_RESULT_SERIALIZER = "json"
CELERY_TIMEZONE = TIME_ZONE

# По умолчанию задачи выполняются в процессе команды, без брокера
CELERY_TASK_ALWAYS_EAGER = os.environ.get("LIFT3D_CELERY_EAGER", "1") == "1"
CELERY_TASK_EAGER_PROPAGATES = True
CELERY_WORKER_CONCURRENCY = LIFT3D_THREADS


# -----------------------------
# ПРОЧЕЕ
# -----------------------------

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"
