"""
Сборка входа сети для одного ROI.

Семантические one-hot каналы объединяются с каналами координат (x, y, z),
результат приводится к размеру 64×64 методом ближайшего соседа.
Здесь же — аугментация сдвигом 2D-рамки.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .boxes import Box2D, Box3D, Detection2D
from .encoding import (
    CentralPrior,
    ClassPriors,
    OrientationBins,
    TargetVector,
    central_pixel_prior,
    class_one_hot,
    encode_targets,
)
from .exceptions import ConfigurationError, EmptyRoiError
from .geometry import CameraIntrinsics, DepthMap, OrganizedPointCloud, backproject

ROI_SIZE = 64

# Сколько раз пересэмплировать вырожденную рамку прежде чем вернуть исходную
MAX_JITTER_ATTEMPTS = 100


@dataclass(frozen=True)
class SemanticMask:
    """Метки классов H×W: 0 — фон, 1..C — классы переднего плана."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        if self.labels.ndim != 2:
            raise ConfigurationError(f"SemanticMask: ожидается H×W, получено {self.labels.shape}")
        if self.num_classes < 1:
            raise ConfigurationError("SemanticMask: число классов должно быть ≥ 1")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > self.num_classes):
            raise ConfigurationError(
                f"SemanticMask: метки должны лежать в [0, {self.num_classes}]"
            )

    @property
    def shape(self) -> Tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class RoiStack:
    """Вырезанный ROI до ресайза: данные H'×W'×(C+3) и маска координат."""

    data: np.ndarray
    validity: np.ndarray


@dataclass(frozen=True)
class RoiTensor:
    """
    Вход сети 64×64×(C+3): [C семантических каналов, x, y, z].

    Маска валидности координат — вспомогательная информация, в сеть не подаётся.
    """

    data: np.ndarray
    validity: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.data.shape[2] - 3


@dataclass(frozen=True)
class AugmentConfig:
    """Параметры аугментации сдвигом рамки (по умолчанию 0.25 от высоты/ширины)."""

    jitter_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.jitter_fraction < 0.5:
            raise ConfigurationError(f"jitter_fraction должен лежать в [0, 0.5): {self.jitter_fraction}")


@dataclass(frozen=True)
class LiftSample:
    """Четыре входа сети (ROI, p_m, one-hot класса, d_prior) и, при наличии, цели."""

    roi: RoiTensor
    prior: CentralPrior
    class_onehot: np.ndarray
    d_prior: np.ndarray
    class_id: int
    target: TargetVector | None = None


# -----------------------------
# ОПЕРАЦИИ
# -----------------------------

def crop_concat(cloud: OrganizedPointCloud, sem: SemanticMask, roi: Box2D) -> RoiStack:
    """
    Вырезает ROI и объединяет one-hot семантику (фон — нулевой вектор)
    с координатами x, y, z. Невалидные точки получают значение 0.
    """
    if cloud.shape != sem.shape:
        raise ConfigurationError(
            f"Размер облака {cloud.shape} не совпадает с семантической маской {sem.shape}"
        )
    height, width = cloud.shape
    slices = roi.pixel_slices(width, height)
    if slices is None:
        raise EmptyRoiError(f"ROI {roi.as_tuple()} пуст после обрезки по кадру {width}x{height}")
    rows, cols = slices

    labels = sem.labels[rows, cols]
    classes = np.arange(1, sem.num_classes + 1)
    semantic = (labels[..., None] == classes).astype(np.float64)

    validity = cloud.validity[rows, cols]
    xyz = np.where(validity[..., None], cloud.points[rows, cols], 0.0)
    return RoiStack(np.concatenate([semantic, xyz], axis=-1), validity.copy())


def nearest_indices(source: int, target: int = ROI_SIZE) -> np.ndarray:
    """Индексы источника для ресайза ближайшим соседом: floor((i + 0.5)·source/target)."""
    idx = np.floor((np.arange(target) + 0.5) * source / target).astype(np.int64)
    return np.clip(idx, 0, source - 1)


def resize_to_64(stack: RoiStack, size: int = ROI_SIZE) -> RoiTensor:
    """Ресайз ближайшим соседом для всех каналов и маски — значения никогда не смешиваются."""
    height, width = stack.validity.shape
    if height == 0 or width == 0:
        raise EmptyRoiError("Пустой ROI не может быть приведён к 64×64")
    rows = nearest_indices(height, size)
    cols = nearest_indices(width, size)
    return RoiTensor(
        data=stack.data[np.ix_(rows, cols)],
        validity=stack.validity[np.ix_(rows, cols)],
    )


def jitter_box(
    roi: Box2D,
    cfg: AugmentConfig,
    rng: np.random.Generator,
    image_size: Tuple[int, int] | None = None,
) -> Box2D:
    """
    Случайный сдвиг углов рамки: Δh1, Δh2 ∈ [−f·h, f·h], Δw1, Δw2 ∈ [−f·w, f·w].

    Результат обрезается по кадру `image_size` = (width, height); вырожденная
    рамка пересэмплируется, после `MAX_JITTER_ATTEMPTS` попыток возвращается исходная.
    """
    if cfg.jitter_fraction == 0.0:
        return roi
    max_dw = cfg.jitter_fraction * roi.width
    max_dh = cfg.jitter_fraction * roi.height
    for _ in range(MAX_JITTER_ATTEMPTS):
        dw1, dw2 = rng.uniform(-max_dw, max_dw, size=2)
        dh1, dh2 = rng.uniform(-max_dh, max_dh, size=2)
        u1, v1 = roi.u1 + dw1, roi.v1 + dh1
        u2, v2 = roi.u2 + dw2, roi.v2 + dh2
        if image_size is not None:
            width, height = image_size
            u1, u2 = min(max(u1, 0.0), width), min(max(u2, 0.0), width)
            v1, v2 = min(max(v1, 0.0), height), min(max(v2, 0.0), height)
        if u2 > u1 and v2 > v1:
            return Box2D(u1, v1, u2, v2)
    return roi


def build_sample(
    cloud: OrganizedPointCloud,
    sem: SemanticMask,
    det: Detection2D,
    priors: ClassPriors,
    bins: OrientationBins,
    gt: Box3D | None = None,
) -> LiftSample:
    """
    Собирает четыре входа сети: ROI 64×64×(C+3), p_m,
    one-hot класса и d_prior; при наличии gt — ещё и цели обучения.
    """
    stack = crop_concat(cloud, sem, det.box)
    roi_tensor = resize_to_64(stack)
    prior = central_pixel_prior(cloud, det.box)
    d_prior = priors.prior(det.class_id)
    target = None
    if gt is not None:
        target = encode_targets(gt, prior, det.class_id, priors, bins)
    return LiftSample(
        roi=roi_tensor,
        prior=prior,
        class_onehot=class_one_hot(det.class_id, priors.num_classes),
        d_prior=d_prior,
        class_id=det.class_id,
        target=target,
    )


# -----------------------------
# ОБУЧАЮЩИЕ ЗАПИСИ
# -----------------------------

@dataclass(frozen=True)
class TrainingFrame:
    """
    Кадр датасета: глубина и семантика.

    Облако точек строится при первом обращении и дальше берётся из кадра,
    так что все объекты кадра во всех эпохах используют одно облако.
    """

    depth: DepthMap
    semantic: SemanticMask
    intrinsics: CameraIntrinsics
    _cloud: OrganizedPointCloud | None = field(default=None, init=False, repr=False, compare=False)

    def cloud(self) -> OrganizedPointCloud:
        if self._cloud is None:
            object.__setattr__(self, "_cloud", backproject(self.depth, self.intrinsics))
        return self._cloud


@dataclass(frozen=True)
class TrainingRecord:
    """Один объект обучающей выборки: кадр, 2D-рамка и эталонная 3D-рамка."""

    frame: TrainingFrame
    detection: Detection2D
    gt: Box3D
    priors: ClassPriors
    bins: OrientationBins

    def to_sample(self, augment: AugmentConfig | None, rng: np.random.Generator) -> LiftSample:
        """
        Собирает пример; при включённой аугментации рамка сдвигается.

        Если сдвинутая рамка не содержит валидных точек, используется исходная.
        """
        cloud = self.frame.cloud()
        sem = self.frame.semantic
        if augment is not None:
            k = self.frame.intrinsics
            box = jitter_box(self.detection.box, augment, rng, (k.width, k.height))
            jittered = Detection2D(self.detection.class_id, self.detection.score, box)
            try:
                return build_sample(cloud, sem, jittered, self.priors, self.bins, self.gt)
            except EmptyRoiError:
                pass
        return build_sample(cloud, sem, self.detection, self.priors, self.bins, self.gt)
