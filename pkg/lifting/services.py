"""
Сервисы приложения `lifting`.

В этом модуле размещены классы:
- `DatasetService` — чтение кадров датасета, калибровки и априорных размеров;
- `TrainingService` — обучение сети по датасету и запись чекпойнта;
- `LiftingService` — подъём 2D-детекций в 3D по чекпойнту;
- `EvaluationService` — оценка каталогов разметки и детекций;
- `PlotService` — SVG-схема рамок в виде сверху;
- `ShiftProbeService` — проба устойчивости подъёма к сдвигу 2D-рамки.
"""
from __future__ import annotations

import copy
import dataclasses
import functools
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence, Tuple

import numpy as np
from django.template.loader import render_to_string

from . import storage
from .boxes import Box3D, Detection2D, LiftedDetection, bev_corners, iou_3d, wrap_angle
from .encoding import ClassPriors, OrientationBins, central_pixel_prior, decode_prediction
from .evalkit import EvalConfig, EvalReport, LabelRecord, evaluate, iou_sweep
from .exceptions import ConfigurationError, EmptyRoiError
from .geometry import CameraIntrinsics, DepthMap, DisparityMap, OrganizedPointCloud, StereoRig, disparity_to_depth
from .nettrain import LiftNet, TrainResult, decode_checkpoint, encode_checkpoint, infer, train
from .roipipe import AugmentConfig, SemanticMask, TrainingFrame, TrainingRecord, build_sample, jitter_box
from .runconfig import RunConfig

logger = logging.getLogger(__name__)

PRIORS_FILE = "priors.txt"
CALIB_FILE = "calib.txt"


@dataclass(frozen=True)
class DatasetFrame:
    """Кадр датасета: глубина (уже переведённая из диспаратности), маска и разметка."""

    index: int
    depth: DepthMap
    semantic: SemanticMask
    labels: List[LabelRecord]
    intrinsics: CameraIntrinsics
    _frame: TrainingFrame | None = field(default=None, init=False, repr=False, compare=False)

    def training_frame(self) -> TrainingFrame:
        if self._frame is None:
            object.__setattr__(self, "_frame", TrainingFrame(self.depth, self.semantic, self.intrinsics))
        return self._frame

    def cloud(self) -> OrganizedPointCloud:
        """Облако точек кадра; строится один раз на кадр."""
        return self.training_frame().cloud()


@dataclass(frozen=True)
class LoadedModel:
    net: LiftNet
    classes: Tuple[str, ...]
    priors: ClassPriors
    bins: OrientationBins
    config_hash: str
    epochs: int = 0


class DatasetService:
    """
    Сервис чтения датасета в раскладке
    depth/NNNNNN.lfd, semantic/NNNNNN.pgm, label/NNNNNN.txt, calib.txt.
    """

    @staticmethod
    def list_frames(dataset_dir: str | Path) -> List[int]:
        depth_dir = Path(dataset_dir) / "depth"
        if not depth_dir.is_dir():
            raise ConfigurationError(f"В {dataset_dir} нет каталога depth/")
        return sorted(int(path.stem) for path in depth_dir.glob("*.lfd") if path.stem.isdigit())

    @staticmethod
    def write_calib(dataset_dir: str | Path, rig: StereoRig) -> Path:
        k = rig.intrinsics
        return storage.write_calib(Path(dataset_dir) / CALIB_FILE, k.fx, k.fy, k.cx, k.cy, rig.baseline)

    @staticmethod
    def read_rig(dataset_dir: str | Path, shape: Tuple[int, int]) -> StereoRig:
        """Калибровка из calib.txt; размер изображения берётся из сетки."""
        fx, fy, cx, cy, baseline = storage.read_calib(Path(dataset_dir) / CALIB_FILE)
        height, width = shape
        return StereoRig(CameraIntrinsics(fx, fy, cx, cy, width, height), baseline)

    @staticmethod
    def load_frame(dataset_dir: str | Path, index: int, num_classes: int, with_labels: bool = True) -> DatasetFrame:
        """
        Загружает кадр. Сетка диспаратности переводится в глубину
        с базой и фокусным расстоянием из calib.txt.
        """
        root = Path(dataset_dir)
        name = f"{index:06d}"
        grid = storage.read_grid(root / "depth" / f"{name}.lfd")
        rig = DatasetService.read_rig(root, grid.shape)
        if isinstance(grid, DisparityMap):
            depth = disparity_to_depth(grid, rig)
        else:
            depth = grid
        semantic = storage.read_pgm(root / "semantic" / f"{name}.pgm", num_classes)
        if semantic.shape != depth.shape:
            raise ConfigurationError(f"Кадр {name}: размер маски {semantic.shape} ≠ размеру сетки {depth.shape}")
        label_path = root / "label" / f"{name}.txt"
        labels = storage.read_labels(label_path) if with_labels and label_path.exists() else []
        return DatasetFrame(index, depth, semantic, labels, rig.intrinsics)

    @staticmethod
    def compute_priors(
        dataset_dir: str | Path,
        classes: Sequence[str],
        fallback: Mapping[str, Tuple[float, float, float]] | None = None,
    ) -> ClassPriors:
        """
        Средние размеры классов по всей разметке датасета.

        Для классов без единого объекта берутся размеры из `fallback`,
        а если его нет — ошибка конфигурации.
        """
        labelled = []
        for path in sorted((Path(dataset_dir) / "label").glob("*.txt")):
            for rec in storage.read_labels(path):
                if rec.type in classes:
                    labelled.append((list(classes).index(rec.type), rec.box3d))
        missing = set(range(len(classes))) - {class_id for class_id, _ in labelled}
        if missing and fallback is not None:
            for class_id in sorted(missing):
                logger.warning("Класса %s нет в разметке, априорные размеры взяты по умолчанию", classes[class_id])
                h, w, l = fallback[classes[class_id]]
                labelled.append((class_id, Box3D((0.0, 0.0, 1.0), (h, w, l), 0.0)))
            missing = set()
        if missing:
            names = ", ".join(classes[i] for i in sorted(missing))
            raise ConfigurationError(f"В разметке {dataset_dir} нет объектов классов: {names}")
        return ClassPriors.from_boxes(labelled)

    @staticmethod
    def write_priors(dataset_dir: str | Path, priors: ClassPriors) -> Path:
        return storage.atomic_write_text(Path(dataset_dir) / PRIORS_FILE, priors.to_text())

    @staticmethod
    def read_priors(dataset_dir: str | Path, classes: Sequence[str]) -> ClassPriors:
        """priors.txt из корня датасета; если файла нет — считается по разметке."""
        path = Path(dataset_dir) / PRIORS_FILE
        if path.exists():
            return ClassPriors.from_text(path.read_text(encoding="utf-8"))
        logger.warning("Файл %s не найден, априорные размеры считаются по разметке", path)
        return DatasetService.compute_priors(dataset_dir, classes)

    @staticmethod
    def training_records(
        dataset_dir: str | Path,
        classes: Sequence[str],
        priors: ClassPriors,
        bins: OrientationBins,
    ) -> List[TrainingRecord]:
        """
        Обучающие записи по всем объектам известных классов.

        Объекты, в рамке которых нет ни одной валидной точки, пропускаются.
        """
        records: List[TrainingRecord] = []
        skipped = 0
        for index in DatasetService.list_frames(dataset_dir):
            frame = DatasetService.load_frame(dataset_dir, index, len(classes))
            training_frame = frame.training_frame()
            cloud = training_frame.cloud()
            for rec in frame.labels:
                if rec.type not in classes:
                    continue
                detection = Detection2D(list(classes).index(rec.type), 1.0, rec.bbox)
                try:
                    central_pixel_prior(cloud, rec.bbox)
                except EmptyRoiError:
                    skipped += 1
                    continue
                records.append(TrainingRecord(training_frame, detection, rec.box3d, priors, bins))
        if skipped:
            logger.warning("Пропущено объектов без валидных точек: %d", skipped)
        logger.info("Обучающих объектов: %d", len(records))
        return records

    @staticmethod
    def read_label_dir(label_dir: str | Path, indices: Sequence[int]) -> List[List[LabelRecord]]:
        """Разметка по номерам кадров; отсутствующий файл — пустой кадр."""
        label_dir = Path(label_dir)
        frames = []
        for index in indices:
            path = label_dir / f"{index:06d}.txt"
            frames.append(storage.read_labels(path) if path.exists() else [])
        return frames


class TrainingService:
    """Обучение сети подъёма по датасету."""

    @staticmethod
    def loss_log_path(checkpoint_path: str | Path) -> Path:
        return Path(f"{checkpoint_path}.loss.txt")

    @staticmethod
    def train(
        config: RunConfig,
        dataset_dir: str | Path,
        checkpoint_path: str | Path,
        resume: bool = False,
        workers: int = 1,
    ) -> Tuple[TrainResult, LoadedModel]:
        """
        Обучает сеть (или продолжает обучение из чекпойнта с тем же хешем
        конфигурации) и атомарно пишет чекпойнт и журнал потерь.
        """
        classes = config.classes
        priors = DatasetService.read_priors(dataset_dir, classes)
        bins = config.orientation_bins()
        config_hash = config.config_hash()
        checkpoint_path = Path(checkpoint_path)
        log_lines: List[str] = []
        epochs_done = 0

        if resume:
            model = LiftingService.load_model(checkpoint_path)
            if model.config_hash != config_hash:
                raise ConfigurationError(
                    f"Хеш конфигурации чекпойнта {model.config_hash[:12]} не совпадает с текущим {config_hash[:12]}"
                )
            net, epochs_done = model.net, model.epochs
            log_path = TrainingService.loss_log_path(checkpoint_path)
            if log_path.exists():
                log_lines = log_path.read_text(encoding="utf-8").splitlines()
            logger.info("Продолжение обучения из %s после %d эпох", checkpoint_path, epochs_done)
        else:
            net = LiftNet(config.net_config())
        logger.info("Параметров сети: %d", net.parameter_count())

        records = DatasetService.training_records(dataset_dir, classes, priors, bins)
        result = train(net, records, config.train_config(workers), config.loss_weights())

        result.history = [dataclasses.replace(e, epoch=e.epoch + epochs_done) for e in result.history]
        log_lines += [e.to_log_line() for e in result.history]
        meta = {
            "classes": list(classes),
            "priors": priors.to_text(),
            "bins": bins.count,
            "config_hash": config_hash,
            "epochs": epochs_done + len(result.history),
        }
        storage.atomic_write_bytes(checkpoint_path, encode_checkpoint(net, meta))
        storage.atomic_write_text(
            TrainingService.loss_log_path(checkpoint_path),
            "".join(line + "\n" for line in log_lines),
        )
        return result, LoadedModel(net, classes, priors, bins, config_hash, meta["epochs"])


@functools.lru_cache(maxsize=4)
def _cached_checkpoint(path: str, mtime_ns: int, precision: str | None) -> LoadedModel:
    net, meta = decode_checkpoint(Path(path).read_bytes(), precision)
    try:
        return LoadedModel(
            net=net,
            classes=tuple(meta["classes"]),
            priors=ClassPriors.from_text(meta["priors"]),
            bins=OrientationBins(int(meta["bins"])),
            config_hash=meta["config_hash"],
            epochs=int(meta.get("epochs", 0)),
        )
    except KeyError as exc:
        raise ConfigurationError(f"{path}: в чекпойнте нет поля {exc}") from exc


class LiftingService:
    """Подъём 2D-детекций кадра в 3D-рамки."""

    @staticmethod
    def load_model(checkpoint_path: str | Path, precision: str | None = None) -> LoadedModel:
        """Модель из чекпойнта; каждый вызов получает собственную копию сети."""
        path = Path(checkpoint_path)
        if not path.is_file():
            raise ConfigurationError(f"Чекпойнт {path} не найден")
        cached = _cached_checkpoint(str(path.resolve()), path.stat().st_mtime_ns, precision)
        return dataclasses.replace(cached, net=copy.deepcopy(cached.net))

    @staticmethod
    def frame_detections(
        frame: DatasetFrame,
        classes: Sequence[str],
        detections_dir: str | Path | None = None,
    ) -> List[Detection2D]:
        """
        2D-детекции кадра из каталога KITTI-детекций, а если он не задан —
        эталонные 2D-рамки с уверенностью 1.0.
        """
        if detections_dir:
            path = Path(detections_dir) / f"{frame.index:06d}.txt"
            records = storage.read_labels(path) if path.exists() else []
        else:
            records = frame.labels
        return [
            Detection2D(list(classes).index(rec.type), rec.score if rec.score is not None else 1.0, rec.bbox)
            for rec in records
            if rec.type in classes
        ]

    @staticmethod
    def lift(model: LoadedModel, frame: DatasetFrame, detections: Sequence[Detection2D]) -> List[Tuple[Detection2D, LiftedDetection]]:
        """Пары (2D-детекция, 3D-рамка); детекции без валидных точек пропускаются."""
        if not detections:
            return []
        cloud = frame.cloud()
        kept: List[Detection2D] = []
        samples = []
        for det in detections:
            try:
                samples.append(build_sample(cloud, frame.semantic, det, model.priors, model.bins))
            except EmptyRoiError as exc:
                logger.warning("Кадр %06d: детекция пропущена: %s", frame.index, exc)
                continue
            kept.append(det)
        predictions = infer(model.net, samples)
        return [
            (det, LiftedDetection(det.class_id, det.score, decode_prediction(pred, sample.prior, det.class_id, model.priors, model.bins)))
            for det, sample, pred in zip(kept, samples, predictions)
        ]

    @staticmethod
    def to_label_records(pairs: Sequence[Tuple[Detection2D, LiftedDetection]], classes: Sequence[str]) -> List[LabelRecord]:
        """16-польные KITTI-строки; рамка — входная 2D-детекция, alpha — из yaw и положения."""
        records = []
        for det, lifted in pairs:
            box = lifted.box3d
            x, _, z = box.center
            records.append(
                LabelRecord(
                    type=classes[lifted.class_id],
                    truncated=-1.0,
                    occluded=-1,
                    alpha=wrap_angle(box.yaw - math.atan2(x, z)),
                    bbox=det.box,
                    dims=box.dims,
                    location=box.center,
                    rotation_y=box.yaw,
                    score=lifted.score,
                )
            )
        return records

    @staticmethod
    def lift_frame_to_file(
        model: LoadedModel,
        dataset_dir: str | Path,
        index: int,
        out_dir: str | Path,
        detections_dir: str | Path | None = None,
    ) -> Tuple[Path, int]:
        started = time.perf_counter()
        frame = DatasetService.load_frame(dataset_dir, index, len(model.classes))
        detections = LiftingService.frame_detections(frame, model.classes, detections_dir)
        pairs = LiftingService.lift(model, frame, detections)
        path = storage.write_labels(
            Path(out_dir) / f"{index:06d}.txt", LiftingService.to_label_records(pairs, model.classes)
        )
        logger.info("Кадр %06d: %d объектов за %.3f с", index, len(pairs), time.perf_counter() - started)
        return path, len(pairs)


class EvaluationService:
    """Оценка каталога детекций относительно эталонной разметки."""

    @staticmethod
    def label_dir(path: str | Path) -> Path:
        """Корень датасета (с подкаталогом label/) или сам каталог разметки."""
        path = Path(path)
        return path / "label" if (path / "label").is_dir() else path

    @staticmethod
    def load_pair(gt_dir: str | Path, det_dir: str | Path) -> Tuple[List[List[LabelRecord]], List[List[LabelRecord]]]:
        gt_labels = EvaluationService.label_dir(gt_dir)
        if not gt_labels.is_dir():
            raise ConfigurationError(f"Каталог эталонной разметки {gt_labels} не найден")
        if not Path(det_dir).is_dir():
            raise ConfigurationError(f"Каталог детекций {det_dir} не найден")
        indices = sorted(int(p.stem) for p in gt_labels.glob("*.txt") if p.stem.isdigit())
        gt_frames = DatasetService.read_label_dir(gt_labels, indices)
        det_frames = DatasetService.read_label_dir(det_dir, indices)
        return gt_frames, det_frames

    @staticmethod
    def evaluate(gt_dir: str | Path, det_dir: str | Path, config: EvalConfig) -> EvalReport:
        gt_frames, det_frames = EvaluationService.load_pair(gt_dir, det_dir)
        logger.info("Оценка: %d кадров, режим %s", len(gt_frames), config.mode)
        return evaluate(gt_frames, det_frames, config)

    @staticmethod
    def sweep(
        gt_dir: str | Path,
        det_dir: str | Path,
        thresholds: Sequence[float],
        class_name: str,
        difficulty: str,
        metric: str,
        mode: str,
    ) -> List[Tuple[float, float]]:
        gt_frames, det_frames = EvaluationService.load_pair(gt_dir, det_dir)
        return iou_sweep(gt_frames, det_frames, thresholds, class_name, difficulty, metric, mode)


# -----------------------------
# ВИЗУАЛИЗАЦИЯ
# -----------------------------

@dataclass(frozen=True)
class PlotTransform:
    """
    Перевод координат плоскости (x, z) в пиксели SVG:
    px = (x − x_min)·scale + margin, py = (z_max − z)·scale + margin.
    """

    x_min: float
    z_max: float
    scale: float = 10.0
    margin: float = 20.0

    def apply(self, x: float, z: float) -> Tuple[float, float]:
        return (x - self.x_min) * self.scale + self.margin, (self.z_max - z) * self.scale + self.margin

    @classmethod
    def fit(cls, boxes: Sequence[Box3D], scale: float = 10.0, margin: float = 20.0) -> "PlotTransform":
        points = [p for box in boxes for p in bev_corners(box)] or [(0.0, 0.0)]
        xs, zs = zip(*points)
        return cls(x_min=min(min(xs), 0.0) - 1.0, z_max=max(max(zs), 0.0) + 1.0, scale=scale, margin=margin)

    def canvas(self, boxes: Sequence[Box3D]) -> Tuple[float, float]:
        points = [p for box in boxes for p in bev_corners(box)] or [(0.0, 0.0)]
        xs, zs = zip(*points)
        right, _ = self.apply(max(max(xs), 0.0) + 1.0, 0.0)
        _, bottom = self.apply(0.0, min(min(zs), 0.0))
        return right + self.margin, bottom + self.margin


class PlotService:
    """SVG-схема рамок в виде сверху; курс объекта — красная линия."""

    TEMPLATE = "lifting/bev_plot.svg"
    COLORS = {"gt": "#2e7d32", "det": "#1565c0"}

    @staticmethod
    def _shape(box: Box3D, transform: PlotTransform, kind: str, label: str) -> Dict[str, Any]:
        corners = [transform.apply(x, z) for x, z in bev_corners(box)]
        cx, _, cz = box.center
        sx, sz = box.heading()
        start = transform.apply(cx, cz)
        end = transform.apply(cx + sx * box.l / 2.0, cz + sz * box.l / 2.0)
        return {
            "points": " ".join(f"{u:.2f},{v:.2f}" for u, v in corners),
            "corners": corners,
            "color": PlotService.COLORS[kind],
            "kind": kind,
            "label": label,
            "heading": {"x1": f"{start[0]:.2f}", "y1": f"{start[1]:.2f}", "x2": f"{end[0]:.2f}", "y2": f"{end[1]:.2f}"},
        }

    @staticmethod
    def render_bev(
        gt: Sequence[Tuple[str, Box3D]],
        detections: Sequence[Tuple[str, Box3D]],
        title: str = "",
        transform: PlotTransform | None = None,
    ) -> Tuple[str, PlotTransform, List[Dict[str, Any]]]:
        """Возвращает текст SVG, использованное преобразование и фигуры в пикселях."""
        boxes = [box for _, box in gt] + [box for _, box in detections]
        transform = transform or PlotTransform.fit(boxes)
        width, height = transform.canvas(boxes)
        shapes = [PlotService._shape(box, transform, "gt", name) for name, box in gt]
        shapes += [PlotService._shape(box, transform, "det", name) for name, box in detections]
        camera = transform.apply(0.0, 0.0)
        svg = render_to_string(
            PlotService.TEMPLATE,
            {
                "width": f"{width:.0f}",
                "height": f"{height:.0f}",
                "title": title,
                "shapes": shapes,
                "camera": {"x": f"{camera[0]:.2f}", "y": f"{camera[1]:.2f}"},
            },
        )
        return svg, transform, shapes

    @staticmethod
    def plot_frame(
        dataset_dir: str | Path,
        index: int,
        out_path: str | Path,
        det_dir: str | Path | None = None,
    ) -> Path:
        name = f"{index:06d}"
        gt_dir = EvaluationService.label_dir(dataset_dir)
        gt_path = gt_dir / f"{name}.txt"
        if not gt_path.exists():
            raise ConfigurationError(f"Разметка кадра {gt_path} не найдена")
        gt = [(rec.type, rec.box3d) for rec in storage.read_labels(gt_path) if rec.type != "DontCare"]
        detections: List[Tuple[str, Box3D]] = []
        if det_dir:
            det_path = Path(det_dir) / f"{name}.txt"
            if det_path.exists():
                detections = [(rec.type, rec.box3d) for rec in storage.read_labels(det_path)]
        svg, _, _ = PlotService.render_bev(gt, detections, title=f"Кадр {name}")
        return storage.atomic_write_text(out_path, svg)


# -----------------------------
# ПРОБА ИНВАРИАНТНОСТИ К СДВИГУ
# -----------------------------

@dataclass(frozen=True)
class ShiftProbeResult:
    mean_iou: float
    per_object: List[float]
    copies: int

    @property
    def objects(self) -> int:
        return len(self.per_object)


class ShiftProbeService:
    """
    Для каждого объекта: подъём по точной 2D-рамке и по K сдвинутым копиям;
    результат — средний 3D IoU между сдвинутыми и точным подъёмом.
    """

    @staticmethod
    def run(
        model: LoadedModel,
        dataset_dir: str | Path,
        copies: int = 10,
        jitter_fraction: float = 0.25,
        seed: int = 0,
    ) -> ShiftProbeResult:
        augment = AugmentConfig(jitter_fraction=jitter_fraction, seed=seed)
        per_object: List[float] = []
        object_index = 0
        for index in DatasetService.list_frames(dataset_dir):
            frame = DatasetService.load_frame(dataset_dir, index, len(model.classes))
            k = frame.intrinsics
            for det in LiftingService.frame_detections(frame, model.classes):
                exact = LiftingService.lift(model, frame, [det])
                if not exact:
                    continue
                rng = np.random.default_rng([seed, object_index])
                object_index += 1
                jittered = [
                    Detection2D(det.class_id, det.score, jitter_box(det.box, augment, rng, (k.width, k.height)))
                    for _ in range(copies)
                ]
                lifted = LiftingService.lift(model, frame, jittered)
                if not lifted:
                    continue
                reference = exact[0][1].box3d
                per_object.append(float(np.mean([iou_3d(pair[1].box3d, reference) for pair in lifted])))
        mean_iou = float(np.mean(per_object)) if per_object else 0.0
        logger.info("Проба сдвига: %d объектов, средний 3D IoU %.4f", len(per_object), mean_iou)
        return ShiftProbeResult(mean_iou, per_object, copies)
