"""
Модели камеры и преобразования между картами диспаратности, глубины,
организованными облаками точек и проекциями на плоскость изображения.

Система координат камеры — как в KITTI: x вправо, y вниз, z вперёд.
Невалидные пиксели хранятся явной маской, а не служебными значениями.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Tuple

import numpy as np

from .exceptions import BehindCameraError, ConfigurationError, GridFormatError


@dataclass(frozen=True)
class CameraIntrinsics:
    """
    Внутренние параметры камеры-обскуры.

    fx, fy — фокусные расстояния в пикселях, (cx, cy) — главная точка,
    width, height — размер изображения в пикселях.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError(f"Фокусные расстояния должны быть > 0: fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ConfigurationError(f"Неверный размер изображения {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigurationError(
                f"Главная точка ({self.cx}, {self.cy}) вне изображения {self.width}x{self.height}"
            )

    @property
    def shape(self) -> Tuple[int, int]:
        """Размер сетки в порядке numpy: (height, width)."""
        return self.height, self.width


@dataclass(frozen=True)
class StereoRig:
    """Стереопара: левая ректифицированная камера и база в метрах."""

    intrinsics: CameraIntrinsics
    baseline: float

    def __post_init__(self) -> None:
        if self.baseline <= 0:
            raise ConfigurationError(f"База стереопары должна быть > 0, получено {self.baseline}")


def _check_grid(values: np.ndarray, validity: np.ndarray, what: str) -> None:
    if values.ndim != 2:
        raise ConfigurationError(f"{what}: ожидается двумерная сетка, получено shape={values.shape}")
    if validity.shape != values.shape or validity.dtype != np.bool_:
        raise ConfigurationError(f"{what}: маска валидности должна быть bool той же формы")


@dataclass(frozen=True)
class DepthMap:
    """Глубина вдоль оптической оси (м) и маска валидности."""

    values: np.ndarray
    validity: np.ndarray

    def __post_init__(self) -> None:
        _check_grid(self.values, self.validity, "DepthMap")
        valid = self.values[self.validity]
        if valid.size and not (np.all(np.isfinite(valid)) and np.all(valid > 0)):
            raise ConfigurationError("DepthMap: валидные значения глубины должны быть конечными и > 0")

    @classmethod
    def from_array(cls, values: np.ndarray) -> "DepthMap":
        """Строит карту из массива, где NaN и значения ≤ 0 означают отсутствие глубины."""
        values = np.asarray(values, dtype=np.float64)
        validity = np.isfinite(values) & (values > 0)
        return cls(np.where(validity, values, 0.0), validity)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class DisparityMap:
    """Диспаратность в пикселях и маска валидности."""

    values: np.ndarray
    validity: np.ndarray

    def __post_init__(self) -> None:
        _check_grid(self.values, self.validity, "DisparityMap")
        valid = self.values[self.validity]
        if valid.size and not np.all(valid > 0):
            raise ConfigurationError("DisparityMap: валидные значения диспаратности должны быть > 0")

    @classmethod
    def from_array(cls, values: np.ndarray) -> "DisparityMap":
        values = np.asarray(values, dtype=np.float64)
        validity = np.isfinite(values) & (values > 0)
        return cls(np.where(validity, values, 0.0), validity)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class OrganizedPointCloud:
    """
    Облако точек «в формате изображения»: сетка H×W×3 координат (x, y, z)
    в системе камеры и маска валидности H×W.

    У невалидных пикселей координаты равны 0.
    """

    points: np.ndarray
    validity: np.ndarray

    def __post_init__(self) -> None:
        if self.points.ndim != 3 or self.points.shape[2] != 3:
            raise ConfigurationError(f"OrganizedPointCloud: ожидается H×W×3, получено {self.points.shape}")
        if self.validity.shape != self.points.shape[:2] or self.validity.dtype != np.bool_:
            raise ConfigurationError("OrganizedPointCloud: маска валидности должна быть bool формы H×W")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.points.shape[:2]


# -----------------------------
# ПРЕОБРАЗОВАНИЯ
# -----------------------------

def _check_dims(shape: Tuple[int, int], k: CameraIntrinsics, what: str) -> None:
    if tuple(shape) != k.shape:
        raise ConfigurationError(
            f"{what}: размер {shape[1]}x{shape[0]} не совпадает с камерой {k.width}x{k.height}"
        )


def disparity_to_depth(disp: DisparityMap, rig: StereoRig) -> DepthMap:
    """
    Переводит диспаратность в глубину: z = fx·baseline / d.

    Ячейки с невалидной или неположительной диспаратностью становятся
    невалидными ячейками глубины.
    """
    _check_dims(disp.shape, rig.intrinsics, "disparity_to_depth")
    values = np.asarray(disp.values, dtype=np.float64)
    valid = disp.validity & np.isfinite(values) & (values > 0)
    focal_baseline = rig.intrinsics.fx * rig.baseline
    safe = np.where(valid, values, 1.0)
    depth = np.where(valid, focal_baseline / safe, 0.0)
    return DepthMap(depth, valid)


def depth_to_disparity(depth: DepthMap, rig: StereoRig) -> DisparityMap:
    """Обратное преобразование, используется генератором стерео-датасетов."""
    _check_dims(depth.shape, rig.intrinsics, "depth_to_disparity")
    values = np.asarray(depth.values, dtype=np.float64)
    safe = np.where(depth.validity, values, 1.0)
    disparity = np.where(depth.validity, rig.intrinsics.fx * rig.baseline / safe, 0.0)
    return DisparityMap(disparity, depth.validity.copy())


def backproject(depth: DepthMap, k: CameraIntrinsics) -> OrganizedPointCloud:
    """
    Обратная проекция карты глубины в организованное облако точек.

    Пиксель (u, v) с глубиной z переходит в
    x = (u − cx)·z / fx, y = (v − cy)·z / fy; маска валидности сохраняется.
    """
    _check_dims(depth.shape, k, "backproject")
    z = np.where(depth.validity, np.asarray(depth.values, dtype=np.float64), 0.0)
    vs, us = np.meshgrid(
        np.arange(k.height, dtype=np.float64),
        np.arange(k.width, dtype=np.float64),
        indexing="ij",
    )
    x = (us - k.cx) * z / k.fx
    y = (vs - k.cy) * z / k.fy
    points = np.stack([x, y, z], axis=-1)
    points[~depth.validity] = 0.0
    return OrganizedPointCloud(points, depth.validity.copy())


def project(point, k: CameraIntrinsics) -> Tuple[float, float]:
    """
    Проекция точки камеры на плоскость изображения: u = fx·x/z + cx, v = fy·y/z + cy.

    Результат может лежать за пределами кадра — обрезку делает вызывающий код.
    """
    x, y, z = (float(c) for c in point)
    if not z > 0:
        raise BehindCameraError(f"Точка ({x}, {y}, {z}) находится за камерой")
    return k.fx * x / z + k.cx, k.fy * y / z + k.cy


def project_points(points: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Векторная версия `project` для массива N×3, возвращает N×2."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if np.any(points[:, 2] <= 0):
        raise BehindCameraError("Часть точек находится за камерой")
    u = k.fx * points[:, 0] / points[:, 2] + k.cx
    v = k.fy * points[:, 1] / points[:, 2] + k.cy
    return np.stack([u, v], axis=1)


# -----------------------------
# ФАЙЛ СЕТКИ LFD1
# -----------------------------

class GridKind(IntEnum):
    """Тип значений в файле сетки."""

    DEPTH = 0
    DISPARITY = 1


GRID_MAGIC = b"LFD1"

# Заголовок: magic, u32 height, u32 width, u8 kind (little-endian, без выравнивания)
_GRID_HEADER = np.dtype([("magic", "S4"), ("height", "<u4"), ("width", "<u4"), ("kind", "u1")])


def encode_grid(values: np.ndarray, validity: np.ndarray, kind: GridKind) -> bytes:
    """Сериализует сетку в формат LFD1; невалидные ячейки кодируются как NaN."""
    height, width = values.shape
    header = np.array([(GRID_MAGIC, height, width, int(kind))], dtype=_GRID_HEADER)
    data = np.where(validity, values, np.nan).astype("<f4")
    return header.tobytes() + data.tobytes()


def decode_grid(raw: bytes) -> DepthMap | DisparityMap:
    """
    Разбирает содержимое файла LFD1.

    Возвращает `DepthMap` или `DisparityMap` в зависимости от поля kind.
    """
    if len(raw) < _GRID_HEADER.itemsize:
        raise GridFormatError("Файл сетки короче заголовка")
    header = np.frombuffer(raw, dtype=_GRID_HEADER, count=1)[0]
    if bytes(header["magic"]) != GRID_MAGIC:
        raise GridFormatError(f"Неверная сигнатура файла сетки: {bytes(header['magic'])!r}")
    height, width, kind = int(header["height"]), int(header["width"]), int(header["kind"])
    expected = _GRID_HEADER.itemsize + height * width * 4
    if len(raw) != expected:
        raise GridFormatError(f"Размер файла {len(raw)} байт, ожидалось {expected}")
    if kind not in (GridKind.DEPTH, GridKind.DISPARITY):
        raise GridFormatError(f"Неизвестный тип сетки kind={kind}")

    values = np.frombuffer(raw, dtype="<f4", count=height * width, offset=_GRID_HEADER.itemsize)
    values = values.reshape(height, width).astype(np.float64)
    if kind == GridKind.DEPTH:
        return DepthMap.from_array(values)
    return DisparityMap.from_array(values)
