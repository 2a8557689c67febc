"""
Celery-задачи приложения `lifting`.

Задачи:
- генерация и запись одной синтетической сцены;
- подъём 2D-детекций одного кадра в 3D.

Аргументы задач JSON-сериализуемы; конфигурация передаётся словарём
`RunConfig.to_data()`.
"""
from __future__ import annotations

import logging
from typing import Any, Dict

from celery import shared_task

from .geometry import GridKind
from .runconfig import RunConfig
from .services import LiftingService
from .synthdata import export_kitti, generate_scene as render_scene

logger = logging.getLogger(__name__)


@shared_task
def generate_scene(index: int, config_data: Dict[str, Any], out_dir: str, grid_kind: int = int(GridKind.DEPTH)) -> Dict[str, Any]:
    """
    Генерирует сцену с номером `index` и пишет её кадр в датасет.

    Генератор сцены зависит только от (seed, index), поэтому результат
    не зависит от числа воркеров и порядка выполнения.
    """
    try:
        config = RunConfig.from_mapping(config_data)
        scene_cfg = config.scene_config()
        scene, output = render_scene(scene_cfg, index)
        export_kitti(scene, output, scene_cfg, out_dir, index, GridKind(grid_kind))
        visible = sum(1 for box in output.boxes if box is not None)
        logger.debug("Сцена %06d: объектов %d, видимых %d", index, len(scene.objects), visible)
        return {
            "success": True,
            "index": index,
            "objects": len(scene.objects),
            "visible": visible,
        }
    except Exception as exc:
        logger.exception("Ошибка генерации сцены %06d: %s", index, exc)
        return {
            "success": False,
            "error": str(exc),
            "index": index,
        }


@shared_task
def lift_frame(
    index: int,
    dataset_dir: str,
    checkpoint_path: str,
    config_data: Dict[str, Any],
    out_dir: str,
    detections_dir: str | None = None,
) -> Dict[str, Any]:
    """
    Поднимает 2D-детекции кадра `index` в 3D и пишет KITTI-файл детекций.

    Модель кэшируется по пути и времени изменения чекпойнта.
    """
    try:
        precision = config_data.get("precision")
        model = LiftingService.load_model(checkpoint_path, precision)
        path, count = LiftingService.lift_frame_to_file(model, dataset_dir, index, out_dir, detections_dir)
        return {
            "success": True,
            "index": index,
            "path": str(path),
            "detections": count,
        }
    except Exception as exc:
        logger.exception("Ошибка подъёма кадра %06d: %s", index, exc)
        return {
            "success": False,
            "error": str(exc),
            "index": index,
        }
