"""
2D/3D рамки объектов, повёрнутый IoU в виде сверху (BEV) и в 3D,
сходство ориентаций.

Соглашения:
- `Box3D.center` хранит точку KITTI-разметки — центр нижней грани;
  по вертикали рамка занимает y ∈ [y − h, y] (ось y направлена вниз);
- в собственной системе рамки ширина идёт вдоль x, длина — вдоль z
  (при yaw = 0), поворот yaw выполняется вокруг оси y камеры.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .exceptions import ConfigurationError

Point2 = Tuple[float, float]


def wrap_angle(theta):
    """
    Приводит угол (или массив углов) к полуинтервалу (−π, π].
    """
    wrapped = np.mod(np.asarray(theta, dtype=np.float64) + math.pi, 2.0 * math.pi) - math.pi
    wrapped = np.where(wrapped <= -math.pi, wrapped + 2.0 * math.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Box2D:
    """Прямоугольник на изображении: q1 = (u1, v1) — левый верхний угол, q2 = (u2, v2) — правый нижний."""

    u1: float
    v1: float
    u2: float
    v2: float

    def __post_init__(self) -> None:
        if not (self.u2 > self.u1 and self.v2 > self.v1):
            raise ConfigurationError(
                f"Вырожденная 2D-рамка ({self.u1}, {self.v1}, {self.u2}, {self.v2})"
            )

    @property
    def width(self) -> float:
        return self.u2 - self.u1

    @property
    def height(self) -> float:
        return self.v2 - self.v1

    @property
    def area(self) -> float:
        return self.width * self.height

    def center_pixel(self) -> Tuple[int, int]:
        """Целочисленный центральный пиксель (u, v)."""
        return int(math.floor((self.u1 + self.u2) / 2.0)), int(math.floor((self.v1 + self.v2) / 2.0))

    def pixel_slices(self, width: int, height: int) -> Tuple[slice, slice] | None:
        """
        Срезы (строки, столбцы) пикселей, покрытых рамкой, обрезанные по сетке width×height.

        Возвращает None, если после обрезки не осталось ни одного пикселя.
        """
        u_lo = max(0, int(math.floor(self.u1)))
        u_hi = min(width, int(math.ceil(self.u2)))
        v_lo = max(0, int(math.floor(self.v1)))
        v_hi = min(height, int(math.ceil(self.v2)))
        if u_hi <= u_lo or v_hi <= v_lo:
            return None
        return slice(v_lo, v_hi), slice(u_lo, u_hi)

    def clipped(self, width: float, height: float) -> "Box2D | None":
        """Рамка, обрезанная по границам изображения; None, если она вырождается."""
        u1, u2 = min(max(self.u1, 0.0), width), min(max(self.u2, 0.0), width)
        v1, v2 = min(max(self.v1, 0.0), height), min(max(self.v2, 0.0), height)
        if u2 <= u1 or v2 <= v1:
            return None
        return Box2D(u1, v1, u2, v2)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return self.u1, self.v1, self.u2, self.v2


@dataclass(frozen=True)
class Box3D:
    """
    3D-рамка: center — центр нижней грани (x, y, z) в метрах,
    dims — (h, w, l) в метрах, yaw — поворот вокруг оси y в (−π, π].
    """

    center: Tuple[float, float, float]
    dims: Tuple[float, float, float]
    yaw: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "dims", tuple(float(d) for d in self.dims))
        if len(self.center) != 3 or len(self.dims) != 3:
            raise ConfigurationError("Box3D: center и dims должны содержать по 3 компоненты")
        if not all(d > 0 for d in self.dims):
            raise ConfigurationError(f"Box3D: размеры должны быть > 0, получено {self.dims}")
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def h(self) -> float:
        return self.dims[0]

    @property
    def w(self) -> float:
        return self.dims[1]

    @property
    def l(self) -> float:  # noqa: E743
        return self.dims[2]

    @property
    def volume(self) -> float:
        return self.h * self.w * self.l

    @property
    def y_extent(self) -> Tuple[float, float]:
        """Вертикальный интервал [y − h, y] (нижняя грань — опорная)."""
        return self.center[1] - self.h, self.center[1]

    @property
    def geometric_center(self) -> Tuple[float, float, float]:
        x, y, z = self.center
        return x, y - self.h / 2.0, z

    def heading(self) -> Point2:
        """Единичный вектор курса (x, z): локальная ось +z, повёрнутая на yaw."""
        return math.sin(self.yaw), math.cos(self.yaw)

    def translated(self, dx: float, dy: float, dz: float) -> "Box3D":
        x, y, z = self.center
        return Box3D((x + dx, y + dy, z + dz), self.dims, self.yaw)


@dataclass(frozen=True)
class Detection2D:
    """2D-детекция: номер класса, уверенность и рамка."""

    class_id: int
    score: float
    box: Box2D

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ConfigurationError(f"Уверенность детекции вне [0, 1]: {self.score}")


@dataclass(frozen=True)
class LiftedDetection:
    """Результат подъёма 2D-детекции в 3D."""

    class_id: int
    score: float
    box3d: Box3D


# -----------------------------
# УГЛЫ РАМОК
# -----------------------------

def _rotate_xz(local_x: np.ndarray, local_z: np.ndarray, yaw: float) -> Tuple[np.ndarray, np.ndarray]:
    c, s = math.cos(yaw), math.sin(yaw)
    return local_x * c + local_z * s, -local_x * s + local_z * c


def bev_corners(b: Box3D) -> List[Point2]:
    """
    Четыре угла рамки в плоскости (x, z), упорядоченные против часовой стрелки
    (положительная ориентированная площадь).
    """
    hw, hl = b.w / 2.0, b.l / 2.0
    local_x = np.array([hw, hw, -hw, -hw])
    local_z = np.array([-hl, hl, hl, -hl])
    xs, zs = _rotate_xz(local_x, local_z, b.yaw)
    cx, _, cz = b.center
    return [(float(x + cx), float(z + cz)) for x, z in zip(xs, zs)]


def box3d_corners(b: Box3D) -> np.ndarray:
    """Восемь углов рамки в системе камеры (8×3): сначала нижняя грань, затем верхняя."""
    bottom = np.array(bev_corners(b))
    y_top, y_bottom = b.y_extent
    lower = np.column_stack([bottom[:, 0], np.full(4, y_bottom), bottom[:, 1]])
    upper = np.column_stack([bottom[:, 0], np.full(4, y_top), bottom[:, 1]])
    return np.vstack([lower, upper])


# -----------------------------
# ПЕРЕСЕЧЕНИЕ ВЫПУКЛЫХ МНОГОУГОЛЬНИКОВ
# -----------------------------

def polygon_area(polygon: Sequence[Point2]) -> float:
    """Площадь многоугольника по формуле шнурования (модуль)."""
    if len(polygon) < 3:
        return 0.0
    pts = np.asarray(polygon, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    return abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))) / 2.0


def clip_convex(subject: Sequence[Point2], clip: Sequence[Point2]) -> List[Point2]:
    """
    Отсечение многоугольника `subject` выпуклым многоугольником `clip`
    (Сазерленд — Ходжман). Оба многоугольника ориентированы против часовой стрелки;
    точки, лежащие на ребре отсечения, сохраняются.
    """
    output = list(subject)
    cp1 = clip[-1]
    for cp2 in clip:
        if not output:
            return []
        edge_x, edge_y = cp2[0] - cp1[0], cp2[1] - cp1[1]

        def side(p: Point2) -> float:
            return edge_x * (p[1] - cp1[1]) - edge_y * (p[0] - cp1[0])

        candidates, output = output, []
        s = candidates[-1]
        s_side = side(s)
        for e in candidates:
            e_side = side(e)
            if e_side >= 0:
                if s_side < 0:
                    output.append(_segment_cross(s, e, s_side, e_side))
                output.append(e)
            elif s_side >= 0:
                output.append(_segment_cross(s, e, s_side, e_side))
            s, s_side = e, e_side
        cp1 = cp2
    return output


def _segment_cross(s: Point2, e: Point2, s_side: float, e_side: float) -> Point2:
    # s_side и e_side разных знаков, поэтому знаменатель ненулевой
    t = s_side / (s_side - e_side)
    return s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1])


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    return polygon_area(clip_convex(bev_corners(a), bev_corners(b)))


def iou_bev(a: Box3D, b: Box3D) -> float:
    """IoU повёрнутых прямоугольников в плоскости (x, z)."""
    inter = bev_intersection_area(a, b)
    union = a.w * a.l + b.w * b.l - inter
    if inter <= 0.0 or union <= 0.0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def iou_3d(a: Box3D, b: Box3D) -> float:
    """
    3D IoU: площадь пересечения в BEV × длина перекрытия по вертикали,
    делённые на объём объединения.
    """
    a_top, a_bottom = a.y_extent
    b_top, b_bottom = b.y_extent
    overlap_h = min(a_bottom, b_bottom) - max(a_top, b_top)
    if overlap_h <= 0.0:
        return 0.0
    inter = bev_intersection_area(a, b) * overlap_h
    union = a.volume + b.volume - inter
    if inter <= 0.0 or union <= 0.0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def iou_2d(a: Box2D, b: Box2D) -> float:
    """IoU двух осевых прямоугольников изображения."""
    inter_w = min(a.u2, b.u2) - max(a.u1, b.u1)
    inter_h = min(a.v2, b.v2) - max(a.v1, b.v1)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    return inter / (a.area + b.area - inter)


def overlap_fraction(a: Box2D, region: Box2D) -> float:
    """Доля площади `a`, покрытая областью `region` (используется для DontCare)."""
    inter_w = min(a.u2, region.u2) - max(a.u1, region.u1)
    inter_h = min(a.v2, region.v2) - max(a.v1, region.v1)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    return inter_w * inter_h / a.area


def orientation_similarity(delta_yaw: float) -> float:
    """Сходство ориентаций (1 + cos Δ) / 2."""
    return (1.0 + math.cos(delta_yaw)) / 2.0
