"""
Конфигурация запуска: плоский текстовый файл `key = value`.

Значения проходят валидацию `RunConfigSerializer`, после чего
`RunConfig` раздаёт их по конфигурациям модулей.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Any, Dict, Mapping

from .encoding import OrientationBins
from .evalkit import EvalConfig
from .exceptions import ConfigurationError
from .geometry import CameraIntrinsics, GridKind
from .nettrain import LiftNetConfig, LossWeights, TrainConfig
from .roipipe import AugmentConfig
from .serializers import RunConfigSerializer
from .synthdata import SceneConfig

logger = logging.getLogger(__name__)

# Ключи, не влияющие на модель: пути, зерно, число эпох, параметры оценки
HASH_EXCLUDED = frozenset(
    {
        "seed",
        "epochs",
        "dataset_dir",
        "checkpoint_path",
        "output_dir",
        "eval_mode",
        "iou_car",
        "iou_pedestrian",
        "iou_cyclist",
        "aos_iou_car",
        "aos_iou_pedestrian",
        "aos_iou_cyclist",
        "sweep_thresholds",
        "shift_probe_copies",
    }
)


def parse_config_text(text: str) -> Dict[str, str]:
    """
    Разбор строк `key = value`; `#` — комментарий, пустые строки пропускаются,
    повторный ключ — ошибка.
    """
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"Конфигурация, строка {number}: ожидается key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"Конфигурация, строка {number}: пустой ключ")
        if key in values:
            raise ConfigurationError(f"Конфигурация, строка {number}: ключ {key} задан повторно")
        values[key] = value
    return values


def _format_errors(errors: Mapping[str, Any]) -> str:
    parts = []
    for key, messages in errors.items():
        text = "; ".join(str(m) for m in messages) if isinstance(messages, (list, tuple)) else str(messages)
        parts.append(text if key == "non_field_errors" else f"{key}: {text}")
    return ", ".join(parts)


def _canonical(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(_canonical(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    """Проверенная конфигурация запуска; значения доступны как `cfg["key"]`."""

    values: Mapping[str, Any]

    def __post_init__(self) -> None:
        frozen = {k: tuple(v) if isinstance(v, list) else v for k, v in self.values.items()}
        object.__setattr__(self, "values", MappingProxyType(frozen))

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    # --- загрузка ---

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any]) -> "RunConfig":
        serializer = RunConfigSerializer(data=dict(raw))
        if not serializer.is_valid():
            raise ConfigurationError(f"Неверная конфигурация: {_format_errors(serializer.errors)}")
        return cls(serializer.validated_data)

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        """Файл конфигурации (необязателен) плюс переопределения из флагов командной строки."""
        raw: Dict[str, Any] = {}
        if path:
            try:
                raw = parse_config_text(Path(path).read_text(encoding="utf-8"))
            except ConfigurationError as exc:
                raise ConfigurationError(f"{path}: {exc}") from exc
        for key, value in (overrides or {}).items():
            if value is not None:
                raw[key] = value
        config = cls.from_mapping(raw)
        logger.debug("Конфигурация загружена, хеш %s", config.config_hash())
        return config

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        raw = dict(self.to_data())
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_mapping(raw)

    def to_data(self) -> Dict[str, Any]:
        """JSON-совместимый словарь (для передачи в задачи Celery)."""
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.values.items()}

    def to_text(self) -> str:
        return "".join(f"{key} = {_canonical(value)}\n" for key, value in sorted(self.values.items()))

    def config_hash(self) -> str:
        """SHA-256 канонических строк `key=value` всех ключей, влияющих на модель."""
        lines = [
            f"{key}={_canonical(value)}"
            for key, value in sorted(self.values.items())
            if key not in HASH_EXCLUDED
        ]
        return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()

    # --- конфигурации модулей ---

    @property
    def classes(self) -> tuple:
        return tuple(self["classes"])

    @property
    def grid_kind(self) -> GridKind:
        return GridKind.DISPARITY if self["grid_kind"] == "disparity" else GridKind.DEPTH

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(
            fx=self["fx"], fy=self["fy"], cx=self["cx"], cy=self["cy"],
            width=self["image_width"], height=self["image_height"],
        )

    def scene_config(self) -> SceneConfig:
        dimensions = {
            name: (tuple(self[f"dims_{name.lower()}"]), tuple(self[f"dims_std_{name.lower()}"]))
            for name in ("Car", "Pedestrian", "Cyclist")
        }
        return SceneConfig(
            intrinsics=self.intrinsics(),
            baseline=self["baseline"],
            classes=self.classes,
            dimensions=dimensions,
            objects_min=self["objects_min"],
            objects_max=self["objects_max"],
            lateral_range=self["lateral_range"],
            depth_min=self["depth_min"],
            depth_max=self["depth_max"],
            ground_y=self["ground_y"],
            render_ground=self["render_ground"],
            depth_noise=self["depth_noise"],
            label_flip_rate=self["label_flip_rate"],
            seed=self["seed"],
        )

    def net_config(self) -> LiftNetConfig:
        return LiftNetConfig(
            num_classes=len(self.classes),
            bins=self["bins"],
            stage_channels=tuple(self["stage_channels"]),
            blocks_per_stage=self["blocks_per_stage"],
            mlp_hidden=self["mlp_hidden"],
            precision=self["precision"],
            activation=self["activation"],
            seed=self["seed"],
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            delta_p=self["lambda_p"],
            delta_d=self["lambda_d"],
            theta_reg=self["lambda_theta"],
            bin_cls=self["lambda_bin"],
        )

    def orientation_bins(self) -> OrientationBins:
        return OrientationBins(self["bins"])

    def augment_config(self) -> AugmentConfig | None:
        if not self["augment"]:
            return None
        return AugmentConfig(jitter_fraction=self["jitter_fraction"], seed=self["seed"])

    def train_config(self, workers: int = 1) -> TrainConfig:
        return TrainConfig(
            epochs=self["epochs"],
            batch_size=self["batch_size"],
            learning_rate=self["learning_rate"],
            clip_norm=self["clip_norm"],
            seed=self["seed"],
            augment=self.augment_config(),
            workers=workers,
        )

    def eval_config(self) -> EvalConfig:
        names = ("Car", "Pedestrian", "Cyclist")
        return EvalConfig(
            classes=self.classes,
            mode=self["eval_mode"],
            iou_thresholds={name: self[f"iou_{name.lower()}"] for name in names},
            aos_thresholds={name: self[f"aos_iou_{name.lower()}"] for name in names},
        )
