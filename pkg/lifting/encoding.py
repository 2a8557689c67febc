"""
Кодирование 3D-рамок в цели обучения сети и обратное декодирование.

- положение: отклонение Δp от точки центрального пикселя ROI;
- размеры: отклонение Δd от априорных размеров класса;
- ориентация: бин (one-hot) + поправочный угол внутри бина;
- класс: one-hot вектор.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np

from .boxes import Box2D, Box3D, wrap_angle
from .exceptions import BinIndexError, ConfigurationError, EmptyRoiError, UnknownClassError
from .geometry import OrganizedPointCloud

# Минимальный размер рамки после декодирования, м
MIN_DECODED_DIM = 0.1

Vec3 = Tuple[float, float, float]


@dataclass(frozen=True)
class ClassPriors:
    """
    Априорные размеры (h, w, l) для каждого класса.

    По умолчанию считаются как средние размеры класса по обучающей разметке.
    """

    dims: Mapping[int, Vec3]

    def __post_init__(self) -> None:
        normalized: Dict[int, Vec3] = {}
        for class_id, dims in self.dims.items():
            dims = tuple(float(d) for d in dims)
            if len(dims) != 3 or not all(d > 0 for d in dims):
                raise ConfigurationError(f"Априорные размеры класса {class_id} должны быть > 0: {dims}")
            normalized[int(class_id)] = dims
        if not normalized:
            raise ConfigurationError("Таблица априорных размеров пуста")
        object.__setattr__(self, "dims", dict(sorted(normalized.items())))

    @property
    def num_classes(self) -> int:
        return len(self.dims)

    def prior(self, class_id: int) -> np.ndarray:
        try:
            return np.array(self.dims[int(class_id)], dtype=np.float64)
        except KeyError as exc:
            raise UnknownClassError(f"Класс {class_id} отсутствует в априорных размерах") from exc

    @classmethod
    def from_boxes(cls, labelled: Iterable[Tuple[int, Box3D]]) -> "ClassPriors":
        """Средние размеры по списку пар (class_id, Box3D)."""
        sums: Dict[int, np.ndarray] = {}
        counts: Dict[int, int] = {}
        for class_id, box in labelled:
            sums[class_id] = sums.get(class_id, np.zeros(3)) + np.array(box.dims)
            counts[class_id] = counts.get(class_id, 0) + 1
        return cls({k: tuple(sums[k] / counts[k]) for k in sums})

    def to_text(self) -> str:
        """Текстовая таблица «class_id h w l», по строке на класс."""
        return "".join(f"{k} {h:.6f} {w:.6f} {l:.6f}\n" for k, (h, w, l) in self.dims.items())

    @classmethod
    def from_text(cls, text: str) -> "ClassPriors":
        dims: Dict[int, Vec3] = {}
        for number, line in enumerate(text.splitlines(), start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 4:
                raise ConfigurationError(f"Таблица априорных размеров, строка {number}: ожидалось 4 поля")
            try:
                dims[int(parts[0])] = (float(parts[1]), float(parts[2]), float(parts[3]))
            except ValueError as exc:
                raise ConfigurationError(f"Таблица априорных размеров, строка {number}: {exc}") from exc
        return cls(dims)


@dataclass(frozen=True)
class OrientationBins:
    """B бинов ориентации; центр бина k равен wrap(2πk / B)."""

    count: int = 2
    centers: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.count < 2:
            raise ConfigurationError(f"Число бинов ориентации должно быть ≥ 2, получено {self.count}")
        centers = wrap_angle(2.0 * math.pi * np.arange(self.count) / self.count)
        object.__setattr__(self, "centers", np.atleast_1d(centers))

    @property
    def step(self) -> float:
        return 2.0 * math.pi / self.count

    @property
    def half_width(self) -> float:
        return math.pi / self.count


@dataclass(frozen=True)
class CentralPrior:
    """Точка центрального пикселя ROI p_m = (x_m, y_m, z_m)."""

    p_m: Vec3

    def __post_init__(self) -> None:
        object.__setattr__(self, "p_m", tuple(float(c) for c in self.p_m))
        if not self.p_m[2] > 0:
            raise ConfigurationError(f"Центральная точка должна быть перед камерой: {self.p_m}")

    def as_array(self) -> np.ndarray:
        return np.array(self.p_m, dtype=np.float64)


@dataclass(frozen=True)
class HeadPrediction:
    """Выходы трёх ветвей сети для одного объекта."""

    delta_p: np.ndarray
    delta_d: np.ndarray
    bin_logits: np.ndarray
    theta_reg: np.ndarray  # по одной поправке на бин


@dataclass(frozen=True)
class TargetVector:
    """Цели обучения: Δp, Δd, one-hot бина и поправочный угол."""

    delta_p: np.ndarray
    delta_d: np.ndarray
    bin_onehot: np.ndarray
    theta_reg: float

    @property
    def bin_index(self) -> int:
        return int(np.argmax(self.bin_onehot))

    def to_prediction(self) -> HeadPrediction:
        """Идеальный выход сети, соответствующий этим целям."""
        theta = np.zeros(self.bin_onehot.shape[0])
        theta[self.bin_index] = self.theta_reg
        return HeadPrediction(
            delta_p=self.delta_p.copy(),
            delta_d=self.delta_d.copy(),
            bin_logits=self.bin_onehot.astype(np.float64),
            theta_reg=theta,
        )


# -----------------------------
# ОПЕРАЦИИ
# -----------------------------

def central_pixel_prior(cloud: OrganizedPointCloud, roi: Box2D) -> CentralPrior:
    """
    Точка центрального пикселя ROI.

    Если центральный пиксель невалиден (дыра в карте глубины), берётся
    покоординатная медиана валидных точек ROI.
    """
    height, width = cloud.shape
    slices = roi.pixel_slices(width, height)
    if slices is None:
        raise EmptyRoiError(f"ROI {roi.as_tuple()} не пересекается с сеткой {width}x{height}")

    u, v = roi.center_pixel()
    if 0 <= u < width and 0 <= v < height and cloud.validity[v, u]:
        return CentralPrior(tuple(cloud.points[v, u]))

    rows, cols = slices
    valid = cloud.validity[rows, cols]
    if not valid.any():
        raise EmptyRoiError(f"ROI {roi.as_tuple()} не содержит валидных точек")
    points = cloud.points[rows, cols][valid]
    return CentralPrior(tuple(np.median(points, axis=0)))


def encode_orientation(theta: float, bins: OrientationBins) -> Tuple[int, float]:
    """
    Бин с ближайшим (по окружности) центром и остаток в (−π/B, π/B].
    """
    k = int(math.ceil(theta / bins.step - 0.5)) % bins.count
    residual = wrap_angle(theta - bins.centers[k])
    # поправка на погрешность округления у границы бина
    if residual <= -bins.half_width:
        k = (k - 1) % bins.count
        residual = wrap_angle(theta - bins.centers[k])
    elif residual > bins.half_width:
        k = (k + 1) % bins.count
        residual = wrap_angle(theta - bins.centers[k])
    return k, residual


def decode_orientation(bin_index: int, residual: float, bins: OrientationBins) -> float:
    """theta = wrap(center_bin + residual)."""
    if not 0 <= int(bin_index) < bins.count:
        raise BinIndexError(f"Бин {bin_index} вне диапазона [0, {bins.count})")
    return wrap_angle(bins.centers[int(bin_index)] + residual)


def class_one_hot(class_id: int, num_classes: int) -> np.ndarray:
    if not 0 <= class_id < num_classes:
        raise BinIndexError(f"Класс {class_id} вне диапазона [0, {num_classes})")
    vector = np.zeros(num_classes, dtype=np.float64)
    vector[class_id] = 1.0
    return vector


def encode_targets(
    gt: Box3D,
    prior: CentralPrior,
    class_id: int,
    priors: ClassPriors,
    bins: OrientationBins,
) -> TargetVector:
    """Δp = p_g − p_m; Δd = d_g − d_prior; (бин, поправка) = encode_orientation(yaw)."""
    d_prior = priors.prior(class_id)
    bin_index, residual = encode_orientation(gt.yaw, bins)
    onehot = np.zeros(bins.count, dtype=np.float64)
    onehot[bin_index] = 1.0
    return TargetVector(
        delta_p=np.array(gt.center) - prior.as_array(),
        delta_d=np.array(gt.dims) - d_prior,
        bin_onehot=onehot,
        theta_reg=residual,
    )


def decode_prediction(
    out: HeadPrediction,
    prior: CentralPrior,
    class_id: int,
    priors: ClassPriors,
    bins: OrientationBins,
) -> Box3D:
    """
    Обратное преобразование выходов сети в 3D-рамку.

    Бин выбирается как argmax логитов, поправка — из выхода этого бина;
    размеры ограничиваются снизу `MIN_DECODED_DIM`.
    """
    d_prior = priors.prior(class_id)
    center = prior.as_array() + np.asarray(out.delta_p, dtype=np.float64)
    dims = np.maximum(d_prior + np.asarray(out.delta_d, dtype=np.float64), MIN_DECODED_DIM)
    bin_index = int(np.argmax(out.bin_logits))
    yaw = decode_orientation(bin_index, float(np.asarray(out.theta_reg)[bin_index]), bins)
    return Box3D(tuple(center), tuple(dims), yaw)
