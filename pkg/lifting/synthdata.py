"""
Генератор синтетических сцен с ориентированными параллелепипедами.

Сцена рендерится в карту глубины (или диспаратности), семантическую маску,
2D-рамки по видимым пикселям и KITTI-разметку.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from shapely.geometry import Polygon

from .boxes import Box2D, Box3D, Detection2D, bev_corners, box3d_corners, wrap_angle
from .evalkit import LabelRecord
from .exceptions import ConfigurationError
from .geometry import (
    CameraIntrinsics,
    DepthMap,
    GridKind,
    StereoRig,
    depth_to_disparity,
    project_points,
)
from .roipipe import SemanticMask
from . import storage

logger = logging.getLogger(__name__)

# Средние размеры (h, w, l) и разброс по классам, м
CLASS_DIMENSIONS: Dict[str, Tuple[Tuple[float, float, float], Tuple[float, float, float]]] = {
    "Car": ((1.53, 1.63, 3.88), (0.10, 0.10, 0.40)),
    "Pedestrian": ((1.76, 0.66, 0.84), (0.10, 0.08, 0.10)),
    "Cyclist": ((1.74, 0.60, 1.76), (0.10, 0.08, 0.15)),
}

MAX_PLACEMENT_ATTEMPTS = 100
# Зазор между объектами в плане, м
PLACEMENT_GAP = 0.1
MIN_SAMPLED_DIM = 0.2


@dataclass(frozen=True)
class SceneConfig:
    intrinsics: CameraIntrinsics = field(
        default_factory=lambda: CameraIntrinsics(fx=200.0, fy=200.0, cx=160.0, cy=40.0, width=320, height=96)
    )
    baseline: float = 0.54
    classes: Tuple[str, ...] = ("Car", "Pedestrian")
    dimensions: Dict[str, Tuple[Tuple[float, float, float], Tuple[float, float, float]]] = field(
        default_factory=lambda: dict(CLASS_DIMENSIONS)
    )
    objects_min: int = 1
    objects_max: int = 4
    lateral_range: float = 12.0
    depth_min: float = 5.0
    depth_max: float = 40.0
    ground_y: float = 1.65
    render_ground: bool = True
    depth_noise: float = 0.0
    label_flip_rate: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1.0 < self.depth_min < self.depth_max < 100.0:
            raise ConfigurationError(
                f"Диапазон глубин должен лежать в (1, 100) м: [{self.depth_min}, {self.depth_max}]"
            )
        if self.depth_noise < 0 or not 0.0 <= self.label_flip_rate <= 1.0:
            raise ConfigurationError("Шум глубины должен быть ≥ 0, доля перевёрнутых меток — в [0, 1]")
        if not 0 <= self.objects_min <= self.objects_max:
            raise ConfigurationError(f"Неверный диапазон числа объектов [{self.objects_min}, {self.objects_max}]")
        if not self.classes:
            raise ConfigurationError("Список классов пуст")
        for name in self.classes:
            if name not in self.dimensions:
                raise ConfigurationError(f"Для класса {name} не заданы размеры")
            mean, std = self.dimensions[name]
            if min(mean) <= 0 or min(std) < 0:
                raise ConfigurationError(f"Размеры класса {name}: среднее > 0, разброс ≥ 0")

    @property
    def rig(self) -> StereoRig:
        return StereoRig(self.intrinsics, self.baseline)


@dataclass(frozen=True)
class SceneObject:
    class_id: int
    box: Box3D


@dataclass(frozen=True)
class SyntheticScene:
    intrinsics: CameraIntrinsics
    objects: Tuple[SceneObject, ...]


@dataclass(frozen=True)
class RenderOutput:
    """
    Результат рендеринга. Для каждого объекта: 2D-рамка по видимым пикселям
    (None, если объект полностью закрыт), доля видимых пикселей и усечение кадром.
    """

    depth: DepthMap
    semantic: SemanticMask
    boxes: Tuple[Box2D | None, ...]
    visible_fraction: Tuple[float, ...]
    truncation: Tuple[float, ...]

    def detections(self, scene: SyntheticScene) -> List[Tuple[int, Detection2D]]:
        """Эталонные 2D-детекции (уверенность 1.0) с индексами видимых объектов."""
        return [
            (index, Detection2D(obj.class_id, 1.0, box))
            for index, (obj, box) in enumerate(zip(scene.objects, self.boxes))
            if box is not None
        ]


# -----------------------------
# СЭМПЛИРОВАНИЕ
# -----------------------------

def _footprint(box: Box3D) -> Polygon:
    return Polygon(bev_corners(box))


def sample_scene(cfg: SceneConfig, rng: np.random.Generator) -> SyntheticScene:
    """
    Объекты стоят на плоскости земли и не пересекаются в плане.

    Если за `MAX_PLACEMENT_ATTEMPTS` попыток место не нашлось, объект
    пропускается: сцена получается с меньшим числом объектов.
    """
    k = cfg.intrinsics
    count = int(rng.integers(cfg.objects_min, cfg.objects_max + 1))
    placed: List[SceneObject] = []
    footprints: List[Polygon] = []
    for _ in range(count):
        class_id = int(rng.integers(len(cfg.classes)))
        mean, std = cfg.dimensions[cfg.classes[class_id]]
        dims = np.maximum(np.array(mean) + np.array(std) * rng.standard_normal(3), MIN_SAMPLED_DIM)
        for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
            z = rng.uniform(cfg.depth_min, cfg.depth_max)
            # центр объекта попадает в горизонтальное поле зрения
            half_fov = min(cfg.lateral_range, z * min(k.cx, k.width - k.cx) / k.fx)
            x = rng.uniform(-half_fov, half_fov)
            yaw = rng.uniform(-math.pi, math.pi)
            box = Box3D((x, cfg.ground_y, z), tuple(dims), yaw)
            if min(c[1] for c in bev_corners(box)) < cfg.depth_min:
                continue
            footprint = _footprint(box)
            if any(not footprint.buffer(PLACEMENT_GAP).disjoint(other) for other in footprints):
                continue
            placed.append(SceneObject(class_id, box))
            footprints.append(footprint)
            break
        else:
            logger.debug("Не удалось разместить объект класса %s", cfg.classes[class_id])
    return SyntheticScene(k, tuple(placed))


# -----------------------------
# РЕНДЕРИНГ
# -----------------------------

def pixel_rays(k: CameraIntrinsics) -> np.ndarray:
    """Направления лучей через центры пикселей: ((u − cx)/fx, (v − cy)/fy, 1), H×W×3."""
    vs, us = np.meshgrid(np.arange(k.height, dtype=np.float64), np.arange(k.width, dtype=np.float64), indexing="ij")
    return np.stack([(us - k.cx) / k.fx, (vs - k.cy) / k.fy, np.ones_like(us)], axis=-1)


def ray_box_depth(rays: np.ndarray, box: Box3D) -> np.ndarray:
    """
    Пересечение лучей из начала координат с ориентированной рамкой (метод слэбов
    в собственной системе рамки). Возвращает параметр t входа (= глубина, так как
    z-компонента луча равна 1) или inf, если луч рамку не задевает.
    """
    gx, gy, gz = box.geometric_center
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    # поворот в систему рамки: lx = x·c − z·s, lz = x·s + z·c
    origin = np.array([-gx * c + gz * s, -gy, -gx * s - gz * c])
    dirs = np.stack(
        [rays[..., 0] * c - rays[..., 2] * s, rays[..., 1], rays[..., 0] * s + rays[..., 2] * c], axis=-1
    )
    half = np.array([box.w / 2.0, box.h / 2.0, box.l / 2.0])

    t_near = np.full(rays.shape[:-1], -np.inf)
    t_far = np.full(rays.shape[:-1], np.inf)
    for axis in range(3):
        d = dirs[..., axis]
        o = origin[axis]
        parallel = d == 0.0
        safe = np.where(parallel, 1.0, d)
        t1 = (-half[axis] - o) / safe
        t2 = (half[axis] - o) / safe
        lo = np.where(parallel, np.where(abs(o) <= half[axis], -np.inf, np.inf), np.minimum(t1, t2))
        hi = np.where(parallel, np.where(abs(o) <= half[axis], np.inf, -np.inf), np.maximum(t1, t2))
        t_near = np.maximum(t_near, lo)
        t_far = np.minimum(t_far, hi)
    hit = (t_near <= t_far) & (t_near > 0.0)
    return np.where(hit, t_near, np.inf)


def _truncation(box: Box3D, k: CameraIntrinsics) -> float:
    """1 − доля площади рамки спроецированных углов, попавшая в кадр."""
    uv = project_points(box3d_corners(box), k)
    u1, v1 = uv.min(axis=0)
    u2, v2 = uv.max(axis=0)
    area = (u2 - u1) * (v2 - v1)
    if area <= 0:
        return 0.0
    inside_w = max(0.0, min(u2, k.width) - max(u1, 0.0))
    inside_h = max(0.0, min(v2, k.height) - max(v1, 0.0))
    return float(min(1.0, max(0.0, 1.0 - inside_w * inside_h / area)))


def _tight_box(mask: np.ndarray) -> Box2D | None:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return None
    return Box2D(float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))


def render(scene: SyntheticScene, cfg: SceneConfig, rng: np.random.Generator | None = None) -> RenderOutput:
    """
    Ближайшее пересечение определяет глубину и класс пикселя; земля
    (y = ground_y, в пределах [depth_min, depth_max]) — фон. Шум глубины
    и сброс меток в фон накладываются после рендеринга.
    """
    k = scene.intrinsics
    rays = pixel_rays(k)
    depth = np.full(k.shape, np.inf)
    owner = np.full(k.shape, -1, dtype=np.int64)

    if cfg.render_ground:
        dy = rays[..., 1]
        t_ground = np.where(dy > 0, cfg.ground_y / np.where(dy > 0, dy, 1.0), np.inf)
        in_range = (t_ground >= cfg.depth_min) & (t_ground <= cfg.depth_max)
        depth = np.where(in_range, t_ground, np.inf)

    own_hits: List[int] = []
    for index, obj in enumerate(scene.objects):
        t = ray_box_depth(rays, obj.box)
        own_hits.append(int(np.isfinite(t).sum()))
        nearer = t < depth
        depth = np.where(nearer, t, depth)
        owner = np.where(nearer, index, owner)

    labels = np.zeros(k.shape, dtype=np.int64)
    boxes: List[Box2D | None] = []
    visible: List[float] = []
    truncation: List[float] = []
    for index, obj in enumerate(scene.objects):
        mask = owner == index
        labels[mask] = obj.class_id + 1
        boxes.append(_tight_box(mask))
        visible.append(float(mask.sum()) / own_hits[index] if own_hits[index] else 0.0)
        truncation.append(_truncation(obj.box, k))

    validity = np.isfinite(depth)
    values = np.where(validity, depth, 0.0)
    if rng is not None and cfg.depth_noise > 0:
        values = values + np.where(validity, rng.normal(0.0, cfg.depth_noise, k.shape), 0.0)
        validity = validity & (values > 0)
        values = np.where(validity, values, 0.0)
    if rng is not None and cfg.label_flip_rate > 0:
        flips = rng.random(k.shape) < cfg.label_flip_rate
        labels = np.where(flips & (labels > 0), 0, labels)

    return RenderOutput(
        depth=DepthMap(values, validity),
        semantic=SemanticMask(labels, len(cfg.classes)),
        boxes=tuple(boxes),
        visible_fraction=tuple(visible),
        truncation=tuple(truncation),
    )


def occlusion_level(visible_fraction: float) -> int:
    """0 — виден почти полностью, 1 — частично, 2 — в основном закрыт."""
    if visible_fraction >= 0.9:
        return 0
    if visible_fraction >= 0.5:
        return 1
    return 2


def generate_scene(cfg: SceneConfig, index: int) -> Tuple[SyntheticScene, RenderOutput]:
    """Сцена с номером index; генератор зависит только от (seed, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    scene = sample_scene(cfg, rng)
    return scene, render(scene, cfg, rng)


# -----------------------------
# ЭКСПОРТ
# -----------------------------

def scene_labels(scene: SyntheticScene, output: RenderOutput, classes: Sequence[str]) -> List[LabelRecord]:
    """KITTI-записи для видимых объектов; alpha = wrap(ry − atan2(x, z))."""
    records = []
    for index, obj in enumerate(scene.objects):
        bbox = output.boxes[index]
        if bbox is None:
            continue
        x, _, z = obj.box.center
        records.append(
            LabelRecord(
                type=classes[obj.class_id],
                truncated=output.truncation[index],
                occluded=occlusion_level(output.visible_fraction[index]),
                alpha=wrap_angle(obj.box.yaw - math.atan2(x, z)),
                bbox=bbox,
                dims=obj.box.dims,
                location=obj.box.center,
                rotation_y=obj.box.yaw,
            )
        )
    return records


def frame_name(index: int) -> str:
    return f"{index:06d}"


def export_kitti(
    scene: SyntheticScene,
    output: RenderOutput,
    cfg: SceneConfig,
    out_dir: str | Path,
    index: int,
    grid_kind: GridKind = GridKind.DEPTH,
) -> List[Path]:
    """
    Пишет depth/NNNNNN.lfd, semantic/NNNNNN.pgm и label/NNNNNN.txt.

    При grid_kind = DISPARITY в файл сетки записывается диспаратность.
    """
    out_dir = Path(out_dir)
    name = frame_name(index)
    if grid_kind == GridKind.DISPARITY:
        grid = depth_to_disparity(output.depth, cfg.rig)
    else:
        grid = output.depth
    try:
        return [
            storage.write_grid(out_dir / "depth" / f"{name}.lfd", grid.values, grid.validity, grid_kind),
            storage.write_pgm(out_dir / "semantic" / f"{name}.pgm", output.semantic.labels),
            storage.write_labels(out_dir / "label" / f"{name}.txt", scene_labels(scene, output, cfg.classes)),
        ]
    except OSError as exc:
        raise OSError(exc.errno, f"Не удалось записать кадр {name} в {out_dir}: {exc.strerror}") from exc
