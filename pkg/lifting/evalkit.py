"""
Оценка качества 3D-детекций в формате KITTI.

- разбор и сериализация строк разметки (15 полей у эталона, 16 у детекций);
- уровни сложности easy / moderate / hard;
- жадное сопоставление детекций с эталоном;
- AP в BEV и в 3D, AOS, интерполяция по 11 или 40 точкам;
- кривые AP в зависимости от порога IoU.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Sequence, Tuple

import numpy as np

from .boxes import Box2D, Box3D, iou_2d, iou_3d, iou_bev, orientation_similarity, overlap_fraction
from .exceptions import ConfigurationError, LabelFormatError

logger = logging.getLogger(__name__)

DIFFICULTIES = ("easy", "moderate", "hard")

# (мин. высота рамки, px; макс. уровень перекрытия; макс. усечение)
DIFFICULTY_LIMITS: Dict[str, Tuple[float, int, float]] = {
    "easy": (40.0, 0, 0.15),
    "moderate": (25.0, 1, 0.30),
    "hard": (25.0, 2, 0.50),
}

# Соседние классы не считаются ни попаданием, ни пропуском
NEIGHBOUR_CLASSES = {"Car": "Van", "Pedestrian": "Person_sitting"}

DONT_CARE = "DontCare"
DONT_CARE_OVERLAP = 0.5

METRICS = ("bev", "3d", "2d", "aos")
MODES = ("r11", "r40")


@dataclass(frozen=True)
class LabelRecord:
    """
    Одна строка KITTI-разметки. score задан только у детекций.

    В выходных детекциях truncated = −1 и occluded = −1, как в формате
    KITTI для результатов: эти поля известны только для эталона, а
    детекции при оценке отбираются лишь по высоте рамки.
    """

    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox: Box2D
    dims: Tuple[float, float, float]
    location: Tuple[float, float, float]
    rotation_y: float
    score: float | None = None

    @property
    def box3d(self) -> Box3D:
        return Box3D(self.location, self.dims, self.rotation_y)

    @property
    def height(self) -> float:
        return self.bbox.height


# -----------------------------
# ФОРМАТ KITTI
# -----------------------------

def parse_kitti_label(line: str, line_number: int | None = None) -> LabelRecord:
    """
    Разбор строки вида
    `type truncated occluded alpha u1 v1 u2 v2 h w l x y z ry [score]`.
    """
    fields = line.split()
    if len(fields) not in (15, 16):
        raise LabelFormatError(f"ожидалось 15 или 16 полей, получено {len(fields)}", line_number)
    try:
        numbers = [float(value) for value in fields[1:]]
        occluded = int(float(fields[2]))
        bbox = Box2D(*numbers[3:7])
        return LabelRecord(
            type=fields[0],
            truncated=numbers[0],
            occluded=occluded,
            alpha=numbers[2],
            bbox=bbox,
            dims=tuple(numbers[7:10]),
            location=tuple(numbers[10:13]),
            rotation_y=numbers[13],
            score=numbers[14] if len(fields) == 16 else None,
        )
    except (ValueError, ConfigurationError) as exc:
        raise LabelFormatError(str(exc), line_number) from exc


def serialize_kitti_label(rec: LabelRecord) -> str:
    """Строка разметки: все геометрические поля "%.2f", уверенность "%.4f"."""
    values = [rec.truncated, rec.alpha, *rec.bbox.as_tuple(), *rec.dims, *rec.location, rec.rotation_y]
    parts = [rec.type, f"{values[0]:.2f}", str(int(rec.occluded))]
    parts += [f"{v:.2f}" for v in values[1:]]
    if rec.score is not None:
        parts.append(f"{rec.score:.4f}")
    return " ".join(parts)


def parse_label_text(text: str) -> List[LabelRecord]:
    """Разбор содержимого файла разметки; пустые строки пропускаются."""
    return [
        parse_kitti_label(line, number)
        for number, line in enumerate(text.splitlines(), start=1)
        if line.strip()
    ]


def serialize_labels(records: Iterable[LabelRecord]) -> str:
    return "".join(serialize_kitti_label(rec) + "\n" for rec in records)


# -----------------------------
# СЛОЖНОСТЬ И СОПОСТАВЛЕНИЕ
# -----------------------------

def assign_difficulty(rec: LabelRecord) -> FrozenSet[str]:
    """Уровни сложности, в которые попадает объект (накопительно: easy ⊂ moderate ⊂ hard)."""
    return frozenset(
        level
        for level, (min_height, max_occluded, max_truncated) in DIFFICULTY_LIMITS.items()
        if rec.height >= min_height and rec.occluded <= max_occluded and rec.truncated <= max_truncated
    )


@dataclass
class MatchResult:
    """Пары (детекция, эталон), ложные срабатывания, пропуски и игнорируемые детекции."""

    matches: List[Tuple[int, int]] = field(default_factory=list)
    false_positives: List[int] = field(default_factory=list)
    false_negatives: List[int] = field(default_factory=list)
    ignored: List[int] = field(default_factory=list)


def match_detections(
    dets: Sequence[LabelRecord],
    gts: Sequence[LabelRecord],
    iou_fn: Callable[[LabelRecord, LabelRecord], float],
    threshold: float,
    ignored_gts: Sequence[bool] | None = None,
    ignorable_dets: Sequence[bool] | None = None,
) -> MatchResult:
    """
    Жадное сопоставление по убыванию уверенности.

    Детекция забирает несопоставленный валидный эталон с наибольшим IoU ≥ threshold
    (при равенстве — с меньшим индексом). Если такого нет, но есть игнорируемый
    эталон, детекция забирает из них эталон с наибольшим IoU по тому же правилу
    и сама игнорируется. Иначе это ложное срабатывание, если только детекция
    не помечена в `ignorable_dets` (DontCare, слишком маленькая рамка).
    """
    ignored_gts = list(ignored_gts) if ignored_gts is not None else [False] * len(gts)
    ignorable_dets = list(ignorable_dets) if ignorable_dets is not None else [False] * len(dets)
    iou = np.array([[iou_fn(d, g) for g in gts] for d in dets], dtype=np.float64).reshape(len(dets), len(gts))

    # устойчивая сортировка: при равной уверенности раньше идёт меньший индекс
    order = sorted(range(len(dets)), key=lambda i: -(dets[i].score if dets[i].score is not None else 1.0))
    taken = [False] * len(gts)
    result = MatchResult()
    for d in order:
        best, best_iou = -1, -math.inf
        fallback, fallback_iou = -1, -math.inf
        for g in range(len(gts)):
            if taken[g] or iou[d, g] < threshold:
                continue
            if ignored_gts[g]:
                if iou[d, g] > fallback_iou:
                    fallback, fallback_iou = g, iou[d, g]
                continue
            if iou[d, g] > best_iou:
                best, best_iou = g, iou[d, g]
        if best >= 0:
            taken[best] = True
            result.matches.append((d, best))
        elif fallback >= 0:
            taken[fallback] = True
            result.ignored.append(d)
        elif ignorable_dets[d]:
            result.ignored.append(d)
        else:
            result.false_positives.append(d)
    result.false_negatives = [g for g in range(len(gts)) if not taken[g] and not ignored_gts[g]]
    return result


# -----------------------------
# PR-КРИВАЯ И AP
# -----------------------------

@dataclass(frozen=True)
class PRCurve:
    """
    Точки (recall, precision) по детекциям в порядке убывания уверенности.

    `similarity` — точность, взвешенная сходством ориентаций (для AOS).
    """

    recall: np.ndarray
    precision: np.ndarray
    scores: np.ndarray
    similarity: np.ndarray
    num_gt: int

    @classmethod
    def from_entries(cls, entries: Sequence[Tuple[float, bool, float]], num_gt: int) -> "PRCurve":
        """entries — (уверенность, попадание, сходство ориентаций) по всем кадрам."""
        order = sorted(range(len(entries)), key=lambda i: -entries[i][0])
        scores = np.array([entries[i][0] for i in order], dtype=np.float64)
        hits = np.array([entries[i][1] for i in order], dtype=bool)
        sims = np.array([entries[i][2] if entries[i][1] else 0.0 for i in order], dtype=np.float64)
        tp = np.cumsum(hits)
        seen = np.arange(1, len(order) + 1)
        recall = tp / num_gt if num_gt > 0 else np.zeros(len(order))
        return cls(
            recall=recall.astype(np.float64),
            precision=tp / seen if len(order) else np.zeros(0),
            scores=scores,
            similarity=np.cumsum(sims) / seen if len(order) else np.zeros(0),
            num_gt=num_gt,
        )


def recall_points(mode: str) -> np.ndarray:
    """R11: {0, 0.1, …, 1}; R40: {1/40, …, 1}."""
    if mode == "r11":
        return np.arange(11) / 10.0
    if mode == "r40":
        return np.arange(1, 41) / 40.0
    raise ConfigurationError(f"Неизвестный режим интерполяции {mode!r}, допустимо: r11, r40")


def interpolated_mean(recall: np.ndarray, precision: np.ndarray, mode: str) -> float:
    """Среднее по точкам recall максимальной точности правее точки, в процентах."""
    points = recall_points(mode)
    if len(recall) == 0:
        return 0.0
    # огибающая: максимум точности для всех точек с recall не меньше текущего
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    values = []
    for r in points:
        idx = np.flatnonzero(recall >= r)
        values.append(envelope[idx[0]] if idx.size else 0.0)
    return 100.0 * float(np.mean(values))


def average_precision(curve: PRCurve, mode: str = "r40") -> float:
    if curve.num_gt == 0:
        return 0.0
    return interpolated_mean(curve.recall, curve.precision, mode)


def average_orientation_similarity(curve: PRCurve, mode: str = "r40") -> float:
    """AOS: вместо 1 каждое попадание даёт (1 + cos Δ) / 2."""
    if curve.num_gt == 0:
        return 0.0
    return interpolated_mean(curve.recall, curve.similarity, mode)


# -----------------------------
# ОЦЕНКА ПО КЛАССАМ И УРОВНЯМ
# -----------------------------

@dataclass(frozen=True)
class EvalConfig:
    """Пороги IoU по классам (AP_BEV/AP_3D и 2D-порог для AOS), режим интерполяции."""

    classes: Tuple[str, ...] = ("Car", "Pedestrian", "Cyclist")
    mode: str = "r40"
    iou_thresholds: Dict[str, float] = field(
        default_factory=lambda: {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5}
    )
    aos_thresholds: Dict[str, float] = field(
        default_factory=lambda: {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5}
    )

    def __post_init__(self) -> None:
        recall_points(self.mode)
        for name in self.classes:
            if name not in self.iou_thresholds or name not in self.aos_thresholds:
                raise ConfigurationError(f"Для класса {name} не задан порог IoU")


def _iou_function(metric: str) -> Callable[[LabelRecord, LabelRecord], float]:
    if metric == "bev":
        return lambda d, g: iou_bev(d.box3d, g.box3d)
    if metric == "3d":
        return lambda d, g: iou_3d(d.box3d, g.box3d)
    if metric in ("2d", "aos"):
        return lambda d, g: iou_2d(d.bbox, g.bbox)
    raise ConfigurationError(f"Неизвестная метрика {metric!r}, допустимо: {METRICS}")


@dataclass(frozen=True)
class CurveCounts:
    curve: PRCurve
    tp: int
    fp: int
    fn: int


def class_curve(
    gt_frames: Sequence[Sequence[LabelRecord]],
    det_frames: Sequence[Sequence[LabelRecord]],
    class_name: str,
    difficulty: str,
    metric: str,
    threshold: float,
) -> CurveCounts:
    """
    Сопоставление во всех кадрах и общая PR-кривая для пары (класс, уровень).

    Кадры обрабатываются по порядку индексов.
    """
    if len(gt_frames) != len(det_frames):
        raise ConfigurationError(f"Число кадров эталона {len(gt_frames)} ≠ числу кадров детекций {len(det_frames)}")
    iou_fn = _iou_function(metric)
    min_height = DIFFICULTY_LIMITS[difficulty][0]
    neighbour = NEIGHBOUR_CLASSES.get(class_name)
    entries: List[Tuple[float, bool, float]] = []
    num_gt = tp = fp = fn = 0

    for gt_frame, det_frame in zip(gt_frames, det_frames):
        gts = [g for g in gt_frame if g.type in (class_name, neighbour)]
        ignored = [g.type != class_name or difficulty not in assign_difficulty(g) for g in gts]
        dont_care = [g.bbox for g in gt_frame if g.type == DONT_CARE]
        dets = [d for d in det_frame if d.type == class_name]
        ignorable = [
            d.height < min_height or any(overlap_fraction(d.bbox, region) > DONT_CARE_OVERLAP for region in dont_care)
            for d in dets
        ]
        result = match_detections(dets, gts, iou_fn, threshold, ignored, ignorable)
        num_gt += ignored.count(False)
        for d, g in result.matches:
            similarity = orientation_similarity(dets[d].rotation_y - gts[g].rotation_y)
            entries.append((_score(dets[d]), True, similarity))
        for d in result.false_positives:
            entries.append((_score(dets[d]), False, 0.0))
        tp += len(result.matches)
        fp += len(result.false_positives)
        fn += len(result.false_negatives)
    return CurveCounts(PRCurve.from_entries(entries, num_gt), tp, fp, fn)


def _score(rec: LabelRecord) -> float:
    return rec.score if rec.score is not None else 1.0


@dataclass(frozen=True)
class BucketResult:
    """Метрики для пары (класс, уровень сложности), проценты."""

    ap_bev: float
    ap_3d: float
    ap_2d: float
    aos: float
    tp: int
    fp: int
    fn: int
    num_gt: int


@dataclass(frozen=True)
class EvalReport:
    mode: str
    results: Dict[Tuple[str, str], BucketResult]

    def to_key_values(self) -> Dict[str, float]:
        """Плоский словарь `класс.уровень.метрика` → значение."""
        flat: Dict[str, float] = {}
        for (class_name, difficulty), bucket in self.results.items():
            for metric in ("ap_bev", "ap_3d", "ap_2d", "aos", "tp", "fp", "fn", "num_gt"):
                flat[f"{class_name}.{difficulty}.{metric}"] = getattr(bucket, metric)
        return flat

    def to_lines(self) -> str:
        lines = [f"mode={self.mode}"]
        for key, value in self.to_key_values().items():
            lines.append(f"{key}={value:.4f}" if isinstance(value, float) else f"{key}={value}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        header = f"{'class':<12}{'difficulty':<10}{'AP_BEV':>9}{'AP_3D':>9}{'AP_2D':>9}{'AOS':>9}{'TP':>6}{'FP':>6}{'FN':>6}"
        rows = [f"Оценка ({self.mode.upper()})", header, "-" * len(header)]
        for (class_name, difficulty), b in self.results.items():
            rows.append(
                f"{class_name:<12}{difficulty:<10}{b.ap_bev:>9.2f}{b.ap_3d:>9.2f}{b.ap_2d:>9.2f}"
                f"{b.aos:>9.2f}{b.tp:>6}{b.fp:>6}{b.fn:>6}"
            )
        return "\n".join(rows) + "\n"


def evaluate(
    gt_frames: Sequence[Sequence[LabelRecord]],
    det_frames: Sequence[Sequence[LabelRecord]],
    config: EvalConfig = EvalConfig(),
) -> EvalReport:
    """AP_BEV, AP_3D, AP_2D и AOS для каждого класса и уровня сложности."""
    results: Dict[Tuple[str, str], BucketResult] = {}
    for class_name in config.classes:
        threshold = config.iou_thresholds[class_name]
        aos_threshold = config.aos_thresholds[class_name]
        for difficulty in DIFFICULTIES:
            bev = class_curve(gt_frames, det_frames, class_name, difficulty, "bev", threshold)
            full = class_curve(gt_frames, det_frames, class_name, difficulty, "3d", threshold)
            flat = class_curve(gt_frames, det_frames, class_name, difficulty, "2d", aos_threshold)
            results[(class_name, difficulty)] = BucketResult(
                ap_bev=average_precision(bev.curve, config.mode),
                ap_3d=average_precision(full.curve, config.mode),
                ap_2d=average_precision(flat.curve, config.mode),
                aos=average_orientation_similarity(flat.curve, config.mode),
                tp=full.tp,
                fp=full.fp,
                fn=full.fn,
                num_gt=full.curve.num_gt,
            )
            if full.curve.num_gt == 0:
                logger.info("Нет эталонных объектов для %s/%s, AP = 0", class_name, difficulty)
    return EvalReport(mode=config.mode, results=results)


def iou_sweep(
    gt_frames: Sequence[Sequence[LabelRecord]],
    det_frames: Sequence[Sequence[LabelRecord]],
    thresholds: Sequence[float],
    class_name: str = "Car",
    difficulty: str = "moderate",
    metric: str = "3d",
    mode: str = "r40",
) -> List[Tuple[float, float]]:
    """Кривая (порог IoU, AP) — AP пересчитывается для каждого порога."""
    if not thresholds:
        raise ConfigurationError("Список порогов IoU пуст")
    curve = []
    for threshold in thresholds:
        counts = class_curve(gt_frames, det_frames, class_name, difficulty, metric, float(threshold))
        curve.append((float(threshold), average_precision(counts.curve, mode)))
    return curve
