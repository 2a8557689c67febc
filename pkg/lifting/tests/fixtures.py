"""Маленькие датасеты и сети для тестов сервисов и команд."""
from pathlib import Path

from lifting.runconfig import RunConfig
from lifting.services import DatasetService
from lifting.synthdata import export_kitti, generate_scene

# Сеть и обучение, которые укладываются в секунды
TINY_OVERRIDES = {
    "stage_channels": "4,8",
    "blocks_per_stage": 1,
    "mlp_hidden": 8,
    "epochs": 1,
    "batch_size": 8,
    "objects_min": 2,
    "objects_max": 3,
    # объекты ближе 12 м выше 25 px и попадают в уровни сложности
    "depth_max": 12.0,
}

TINY_CONFIG_TEXT = "".join(f"{key} = {value}\n" for key, value in TINY_OVERRIDES.items())


def tiny_config(**overrides) -> RunConfig:
    return RunConfig.load(overrides={**TINY_OVERRIDES, **overrides})


def make_dataset(root, scenes: int = 3, config: RunConfig | None = None, offset: int = 0) -> Path:
    """Синтетический датасет в раскладке команды synth_gen (без Celery)."""
    config = config or tiny_config()
    root = Path(root)
    scene_cfg = config.scene_config()
    for index in range(offset, offset + scenes):
        scene, output = generate_scene(scene_cfg, index)
        export_kitti(scene, output, scene_cfg, root, index, config.grid_kind)
    DatasetService.write_calib(root, scene_cfg.rig)
    fallback = {name: mean for name, (mean, _) in scene_cfg.dimensions.items()}
    DatasetService.write_priors(root, DatasetService.compute_priors(root, config.classes, fallback))
    return root
