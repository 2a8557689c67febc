"""
Остаточная свёрточная сеть без нормализации, многозадачная функция потерь,
явное обратное распространение и цикл обучения.

Всё считается на numpy в формате NCHW. Архитектура:
стем 7×7 / 2 → стадии остаточных блоков → глобальное усреднение →
конкатенация с p_m, d_prior и one-hot класса → три MLP-ветви
(Δp, Δd, ориентация: логиты бинов + поправка на каждый бин).
"""
from __future__ import annotations

import json
import logging
import math
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterator, List, Protocol, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, logsumexp, softmax

from .encoding import HeadPrediction
from .exceptions import ConfigurationError, ForwardStateError, GridFormatError, TrainingDivergedError
from .roipipe import AugmentConfig, LiftSample

logger = logging.getLogger(__name__)

PRECISIONS = {"f32": np.float32, "f64": np.float64}
ACTIVATIONS = ("relu", "softplus")
LOSS_TERMS = ("delta_p", "delta_d", "theta_reg", "bin_cls")


# -----------------------------
# КОНФИГУРАЦИЯ
# -----------------------------

@dataclass(frozen=True)
class LiftNetConfig:
    """
    Размеры сети. `input_channels` = C + 3 вычисляется из числа классов.
    """

    num_classes: int
    bins: int = 2
    stage_channels: Tuple[int, ...] = (16, 32, 64)
    blocks_per_stage: int = 2
    mlp_hidden: int = 256
    precision: str = "f32"
    activation: str = "relu"
    stem_kernel: int = 7
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        sizes = (self.num_classes, self.bins, self.blocks_per_stage, self.mlp_hidden, self.stem_kernel)
        if not self.stage_channels or min(self.stage_channels) < 1 or min(sizes) < 1:
            raise ConfigurationError(f"Все размеры сети должны быть ≥ 1: {self}")
        if self.precision not in PRECISIONS:
            raise ConfigurationError(f"Неизвестная точность {self.precision!r}, допустимо: f32, f64")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"Неизвестная активация {self.activation!r}, допустимо: {ACTIVATIONS}")

    @property
    def input_channels(self) -> int:
        return self.num_classes + 3

    @property
    def dtype(self) -> type:
        return PRECISIONS[self.precision]


@dataclass(frozen=True)
class LossWeights:
    """Веса слагаемых функции потерь (по умолчанию все равны 1)."""

    delta_p: float = 1.0
    delta_d: float = 1.0
    theta_reg: float = 1.0
    bin_cls: float = 1.0

    def __post_init__(self) -> None:
        if min(asdict(self).values()) < 0:
            raise ConfigurationError(f"Веса функции потерь должны быть ≥ 0: {self}")

    def combine(self, terms: Dict[str, float]) -> float:
        """λ1·Δp + λ2·Δd + λ3·θ + λ4·bin, строго в этом порядке."""
        return (
            self.delta_p * terms["delta_p"]
            + self.delta_d * terms["delta_d"]
            + self.theta_reg * terms["theta_reg"]
            + self.bin_cls * terms["bin_cls"]
        )


@dataclass(frozen=True)
class TrainConfig:
    """Параметры оптимизации: Adam, батч 32, lr 1e-3, ограничение нормы градиента 10."""

    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    clip_norm: float = 10.0
    seed: int = 0
    augment: AugmentConfig | None = field(default_factory=AugmentConfig)
    reduction: str = "mean"
    workers: int = 1

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.workers < 1:
            raise ConfigurationError(f"Неверные параметры обучения: {self}")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ConfigurationError("learning_rate и clip_norm должны быть > 0")
        if self.reduction not in ("mean", "sum"):
            raise ConfigurationError(f"reduction должен быть mean или sum: {self.reduction!r}")


# -----------------------------
# БАТЧИ
# -----------------------------

@dataclass(frozen=True)
class LiftBatch:
    """Входы сети для N объектов; roi хранится в формате N×(C+3)×H×W."""

    roi: np.ndarray
    p_m: np.ndarray
    d_prior: np.ndarray
    class_onehot: np.ndarray

    @property
    def size(self) -> int:
        return self.roi.shape[0]

    @classmethod
    def from_samples(cls, samples: Sequence[LiftSample], dtype: type = np.float64) -> "LiftBatch":
        if not samples:
            raise ConfigurationError("Пустой батч")
        roi = np.stack([s.roi.data for s in samples]).transpose(0, 3, 1, 2)
        return cls(
            roi=np.ascontiguousarray(roi, dtype=dtype),
            p_m=np.array([s.prior.p_m for s in samples], dtype=dtype),
            d_prior=np.array([s.d_prior for s in samples], dtype=dtype),
            class_onehot=np.array([s.class_onehot for s in samples], dtype=dtype),
        )


@dataclass(frozen=True)
class TargetBatch:
    """Цели обучения для N объектов; theta_reg — поправка в эталонном бине."""

    delta_p: np.ndarray
    delta_d: np.ndarray
    bin_onehot: np.ndarray
    theta_reg: np.ndarray

    @classmethod
    def from_samples(cls, samples: Sequence[LiftSample]) -> "TargetBatch":
        targets = [s.target for s in samples]
        if any(t is None for t in targets):
            raise ConfigurationError("Для обучения у каждого примера должны быть цели")
        return cls(
            delta_p=np.array([t.delta_p for t in targets]),
            delta_d=np.array([t.delta_d for t in targets]),
            bin_onehot=np.array([t.bin_onehot for t in targets]),
            theta_reg=np.array([t.theta_reg for t in targets]),
        )


@dataclass(frozen=True)
class LiftNetOutputs:
    """Выходы трёх ветвей: N×3, N×3, N×B логитов и N×B поправок."""

    delta_p: np.ndarray
    delta_d: np.ndarray
    bin_logits: np.ndarray
    theta_reg: np.ndarray

    def __len__(self) -> int:
        return self.delta_p.shape[0]

    def prediction(self, index: int) -> HeadPrediction:
        return HeadPrediction(
            delta_p=self.delta_p[index].astype(np.float64),
            delta_d=self.delta_d[index].astype(np.float64),
            bin_logits=self.bin_logits[index].astype(np.float64),
            theta_reg=self.theta_reg[index].astype(np.float64),
        )


@dataclass(frozen=True)
class InputGradients:
    """Градиенты функции потерь по всем входам сети."""

    roi: np.ndarray
    p_m: np.ndarray
    d_prior: np.ndarray
    class_onehot: np.ndarray


# -----------------------------
# СЛОИ
# -----------------------------

class Parameter:
    """Тензор параметров и буфер его градиента."""

    def __init__(self, value: np.ndarray) -> None:
        self.value = value
        self.grad = np.zeros_like(value)


NamedParameters = List[Tuple[str, Parameter]]


class Conv2d:
    """Свёртка NCHW с квадратным ядром, шагом и симметричным паддингом нулями."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int, padding: int,
                 rng: np.random.Generator, dtype: type) -> None:
        fan_in = in_ch * kernel * kernel
        self.weight = Parameter(rng.normal(0.0, math.sqrt(2.0 / fan_in), (out_ch, in_ch, kernel, kernel)).astype(dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype))
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self._cache: Tuple[Tuple[int, ...], Tuple[int, ...], np.ndarray] | None = None

    def parameters(self) -> NamedParameters:
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x: np.ndarray) -> np.ndarray:
        p, s, k = self.padding, self.stride, self.kernel
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        if xp.shape[2] < k or xp.shape[3] < k:
            raise ConfigurationError(f"Вход {x.shape[2:]} меньше ядра свёртки {k}×{k}")
        windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        # по одному примеру: значения строки не зависят от состава батча
        out = np.stack([np.tensordot(w, self.weight.value, axes=([0, 3, 4], [1, 2, 3])) for w in windows])
        self._cache = (x.shape, xp.shape, windows)
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + self.bias.value[None, :, None, None]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x_shape, xp_shape, windows = self._cache
        p, s, k = self.padding, self.stride, self.kernel
        weight = self.weight.value
        self.weight.grad[...] = np.tensordot(dout, windows, axes=([0, 2, 3], [0, 2, 3]))
        self.bias.grad[...] = dout.sum(axis=(0, 2, 3))

        out_h, out_w = dout.shape[2:]
        dxp = np.zeros(xp_shape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * out_h:s, j:j + s * out_w:s] += np.einsum(
                    "nohw,oc->nchw", dout, weight[:, :, i, j]
                )
        if p:
            return dxp[:, :, p:p + x_shape[2], p:p + x_shape[3]]
        return dxp


class Linear:
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype: type) -> None:
        self.weight = Parameter(
            rng.normal(0.0, math.sqrt(2.0 / in_features), (in_features, out_features)).astype(dtype)
        )
        self.bias = Parameter(np.zeros(out_features, dtype=dtype))
        self._x: np.ndarray | None = None

    def parameters(self) -> NamedParameters:
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        rows = [row @ self.weight.value for row in x[:, None, :]]
        return np.concatenate(rows) + self.bias.value

    def backward(self, dout: np.ndarray) -> np.ndarray:
        self.weight.grad[...] = self._x.T @ dout
        self.bias.grad[...] = dout.sum(axis=0)
        return dout @ self.weight.value.T


class ReLU:
    def __init__(self) -> None:
        self._mask: np.ndarray | None = None

    def parameters(self) -> NamedParameters:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0).astype(x.dtype)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return np.where(self._mask, dout, 0.0).astype(dout.dtype)


class Softplus:
    """Гладкая активация log(1 + eˣ); используется при проверке градиентов."""

    def __init__(self) -> None:
        self._x: np.ndarray | None = None

    def parameters(self) -> NamedParameters:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return np.logaddexp(0.0, x).astype(x.dtype)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return (dout * expit(self._x)).astype(dout.dtype)


def make_activation(name: str) -> ReLU | Softplus:
    return Softplus() if name == "softplus" else ReLU()


class ResidualBlock:
    """
    Два свёрточных слоя 3×3 и обход; при смене шага или числа каналов
    обход — свёртка 1×1 (проекция).
    """

    def __init__(self, in_ch: int, out_ch: int, stride: int, activation: str,
                 rng: np.random.Generator, dtype: type) -> None:
        self.conv1 = Conv2d(in_ch, out_ch, 3, stride, 1, rng, dtype)
        self.act1 = make_activation(activation)
        self.conv2 = Conv2d(out_ch, out_ch, 3, 1, 1, rng, dtype)
        self.projection = Conv2d(in_ch, out_ch, 1, stride, 0, rng, dtype) if (stride != 1 or in_ch != out_ch) else None
        self.act_out = make_activation(activation)

    def parameters(self) -> NamedParameters:
        named = _prefixed("conv1", self.conv1) + _prefixed("conv2", self.conv2)
        if self.projection is not None:
            named += _prefixed("projection", self.projection)
        return named

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = self.conv2.forward(self.act1.forward(self.conv1.forward(x)))
        shortcut = self.projection.forward(x) if self.projection is not None else x
        return self.act_out.forward(h + shortcut)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        d = self.act_out.backward(dout)
        dx = self.conv1.backward(self.act1.backward(self.conv2.backward(d)))
        if self.projection is not None:
            return dx + self.projection.backward(d)
        return dx + d


class MLPHead:
    """Ветвь Linear → активация → Linear."""

    def __init__(self, in_features: int, hidden: int, out_features: int, activation: str,
                 rng: np.random.Generator, dtype: type) -> None:
        self.fc1 = Linear(in_features, hidden, rng, dtype)
        self.act = make_activation(activation)
        self.fc2 = Linear(hidden, out_features, rng, dtype)

    def parameters(self) -> NamedParameters:
        return _prefixed("fc1", self.fc1) + _prefixed("fc2", self.fc2)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.fc2.forward(self.act.forward(self.fc1.forward(x)))

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return self.fc1.backward(self.act.backward(self.fc2.backward(dout)))


def _prefixed(prefix: str, layer: Any) -> NamedParameters:
    return [(f"{prefix}.{name}", param) for name, param in layer.parameters()]


# -----------------------------
# СЕТЬ
# -----------------------------

class LiftNet:
    """
    Сеть подъёма 2D-детекций в 3D.

    Прямой проход сохраняет промежуточные значения; `backward` без
    предшествующего `forward` вызывает `ForwardStateError`.
    """

    HEADS = ("delta_p", "delta_d", "orientation")

    def __init__(self, config: LiftNetConfig) -> None:
        self.config = config
        self.dtype = config.dtype
        rng = np.random.default_rng(config.seed)
        act = config.activation
        first = config.stage_channels[0]

        self.stem = Conv2d(config.input_channels, first, config.stem_kernel, 2, config.stem_kernel // 2, rng, self.dtype)
        self.stem_act = make_activation(act)
        self.blocks: List[ResidualBlock] = []
        in_ch = first
        for stage, out_ch in enumerate(config.stage_channels):
            for index in range(config.blocks_per_stage):
                stride = 2 if stage > 0 and index == 0 else 1
                self.blocks.append(ResidualBlock(in_ch, out_ch, stride, act, rng, self.dtype))
                in_ch = out_ch

        self.feature_size = in_ch
        head_in = in_ch + 3 + 3 + config.num_classes
        outputs = {"delta_p": 3, "delta_d": 3, "orientation": 2 * config.bins}
        self.heads: Dict[str, MLPHead] = {
            name: MLPHead(head_in, config.mlp_hidden, outputs[name], act, rng, self.dtype)
            for name in self.HEADS
        }
        self._cache: Tuple[Tuple[int, ...], int] | None = None

    # --- параметры ---

    def named_parameters(self) -> NamedParameters:
        """Параметры в порядке объявления (этот порядок использует чекпойнт)."""
        named = _prefixed("stem", self.stem)
        for index, block in enumerate(self.blocks):
            named += _prefixed(f"blocks.{index}", block)
        for name in self.HEADS:
            named += _prefixed(f"heads.{name}", self.heads[name])
        return named

    def parameters(self) -> List[Parameter]:
        return [param for _, param in self.named_parameters()]

    def layers(self) -> Iterator[Any]:
        """Все элементарные слои сети (для структурных проверок)."""
        yield self.stem
        yield self.stem_act
        for block in self.blocks:
            yield from (block.conv1, block.act1, block.conv2, block.act_out)
            if block.projection is not None:
                yield block.projection
        for name in self.HEADS:
            head = self.heads[name]
            yield from (head.fc1, head.act, head.fc2)

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.grad[...] = 0.0

    # --- проходы ---

    def _check_batch(self, batch: LiftBatch) -> None:
        n = batch.roi.shape[0] if batch.roi.ndim == 4 else -1
        expected = {
            "roi": (n, self.config.input_channels),
            "p_m": (n, 3),
            "d_prior": (n, 3),
            "class_onehot": (n, self.config.num_classes),
        }
        actual = {
            "roi": batch.roi.shape[:2] if batch.roi.ndim == 4 else batch.roi.shape,
            "p_m": batch.p_m.shape,
            "d_prior": batch.d_prior.shape,
            "class_onehot": batch.class_onehot.shape,
        }
        for name, shape in expected.items():
            if tuple(actual[name]) != shape:
                raise ConfigurationError(f"Вход {name}: форма {actual[name]}, ожидалось {shape}")

    def forward(self, batch: LiftBatch) -> LiftNetOutputs:
        self._check_batch(batch)
        x = self.stem_act.forward(self.stem.forward(batch.roi.astype(self.dtype, copy=False)))
        for block in self.blocks:
            x = block.forward(x)
        self._cache = (x.shape, batch.size)
        features = x.mean(axis=(2, 3))
        head_in = np.concatenate(
            [features, batch.p_m, batch.d_prior, batch.class_onehot], axis=1
        ).astype(self.dtype, copy=False)

        orientation = self.heads["orientation"].forward(head_in)
        bins = self.config.bins
        return LiftNetOutputs(
            delta_p=self.heads["delta_p"].forward(head_in),
            delta_d=self.heads["delta_d"].forward(head_in),
            bin_logits=orientation[:, :bins],
            theta_reg=orientation[:, bins:],
        )

    def backward(self, loss: "LossBreakdown") -> InputGradients:
        """
        Градиенты по всем параметрам (записываются в `Parameter.grad`)
        и по всем входам сети.
        """
        if self._cache is None:
            raise ForwardStateError("backward вызван без сохранённого прямого прохода")
        feature_shape, _ = self._cache
        self._cache = None
        grads = loss.grads

        d_head = (
            self.heads["delta_p"].backward(grads.delta_p.astype(self.dtype))
            + self.heads["delta_d"].backward(grads.delta_d.astype(self.dtype))
            + self.heads["orientation"].backward(
                np.concatenate([grads.bin_logits, grads.theta_reg], axis=1).astype(self.dtype)
            )
        )
        f = self.feature_size
        c = self.config.num_classes
        d_features = d_head[:, :f]
        spatial = feature_shape[2] * feature_shape[3]
        dx = np.broadcast_to(d_features[:, :, None, None] / spatial, feature_shape).astype(self.dtype)
        for block in reversed(self.blocks):
            dx = block.backward(dx)
        d_roi = self.stem.backward(self.stem_act.backward(dx))
        return InputGradients(
            roi=d_roi,
            p_m=d_head[:, f:f + 3],
            d_prior=d_head[:, f + 3:f + 6],
            class_onehot=d_head[:, f + 6:f + 6 + c],
        )


# -----------------------------
# ФУНКЦИИ ПОТЕРЬ
# -----------------------------

def _reduce(batch_size: int, reduction: str) -> float:
    return float(batch_size) if reduction == "mean" else 1.0


def smooth_l1(pred: np.ndarray, target: np.ndarray, reduction: str = "mean") -> Tuple[float, np.ndarray]:
    """
    Huber-потеря: 0.5·x² при |x| < 1, иначе |x| − 0.5; сумма по компонентам,
    среднее (или сумма) по батчу. Возвращает значение и градиент по pred.
    """
    x = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    abs_x = np.abs(x)
    small = abs_x < 1.0
    per_component = np.where(small, 0.5 * x * x, abs_x - 0.5)
    denom = _reduce(x.shape[0], reduction)
    grad = np.where(small, x, np.sign(x)) / denom
    return float(per_component.sum() / denom), grad.reshape(np.shape(pred))


def softmax_cross_entropy(logits: np.ndarray, onehot: np.ndarray, reduction: str = "mean") -> Tuple[float, np.ndarray]:
    """−log softmax(logits)[истинный бин] в форме log-sum-exp; градиент softmax − onehot."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    onehot = np.atleast_2d(np.asarray(onehot, dtype=np.float64))
    denom = _reduce(logits.shape[0], reduction)
    per_sample = logsumexp(logits, axis=1) - (logits * onehot).sum(axis=1)
    grad = (softmax(logits, axis=1) - onehot) / denom
    return float(per_sample.sum() / denom), grad


@dataclass(frozen=True)
class LossBreakdown:
    """Итоговая потеря, слагаемые (до и после весов) и градиенты по выходам сети."""

    total: float
    terms: Dict[str, float]
    weighted: Dict[str, float]
    grads: LiftNetOutputs

    def is_finite(self) -> bool:
        return math.isfinite(self.total) and all(math.isfinite(v) for v in self.terms.values())


def total_loss(
    outputs: LiftNetOutputs,
    targets: TargetBatch,
    weights: LossWeights = LossWeights(),
    reduction: str = "mean",
) -> LossBreakdown:
    """
    λ1·L(Δp) + λ2·L(Δd) + λ3·L(θ) + λ4·CE(бин).

    Поправка угла штрафуется только в эталонном бине.
    """
    loss_p, grad_p = smooth_l1(outputs.delta_p, targets.delta_p, reduction)
    loss_d, grad_d = smooth_l1(outputs.delta_d, targets.delta_d, reduction)

    onehot = np.asarray(targets.bin_onehot, dtype=np.float64)
    theta_at_gt = (np.asarray(outputs.theta_reg, dtype=np.float64) * onehot).sum(axis=1)
    loss_theta, grad_theta_gt = smooth_l1(theta_at_gt, targets.theta_reg, reduction)
    grad_theta = onehot * grad_theta_gt[:, None]

    loss_bin, grad_bin = softmax_cross_entropy(outputs.bin_logits, onehot, reduction)

    terms = {"delta_p": loss_p, "delta_d": loss_d, "theta_reg": loss_theta, "bin_cls": loss_bin}
    weighted = {name: getattr(weights, name) * value for name, value in terms.items()}
    grads = LiftNetOutputs(
        delta_p=weights.delta_p * grad_p,
        delta_d=weights.delta_d * grad_d,
        bin_logits=weights.bin_cls * grad_bin,
        theta_reg=weights.theta_reg * grad_theta,
    )
    return LossBreakdown(total=weights.combine(terms), terms=terms, weighted=weighted, grads=grads)


# -----------------------------
# ОПТИМИЗАТОР
# -----------------------------

class Adam:
    """Adam с ограничением глобальной нормы градиента."""

    def __init__(self, learning_rate: float = 1e-3, clip_norm: float = 10.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self._m: Dict[int, np.ndarray] = {}
        self._v: Dict[int, np.ndarray] = {}

    @staticmethod
    def global_norm(params: Sequence[Parameter]) -> float:
        return math.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64))) for p in params))

    def step(self, params: Sequence[Parameter]) -> float:
        """Один шаг; возвращает норму градиента до ограничения."""
        norm = self.global_norm(params)
        scale = self.clip_norm / norm if norm > self.clip_norm else 1.0
        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for index, param in enumerate(params):
            grad = param.grad * scale
            m = self._m.setdefault(index, np.zeros_like(param.value))
            v = self._v.setdefault(index, np.zeros_like(param.value))
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            update = self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            param.value -= update.astype(param.value.dtype)
        return norm


# -----------------------------
# ОБУЧЕНИЕ
# -----------------------------

class SampleSource(Protocol):
    """Элемент обучающей выборки, умеющий собрать пример с аугментацией."""

    def to_sample(self, augment: AugmentConfig | None, rng: np.random.Generator) -> LiftSample: ...


@dataclass(frozen=True)
class EpochLoss:
    epoch: int
    total: float
    terms: Dict[str, float]
    seconds: float = 0.0

    def to_log_line(self) -> str:
        parts = [f"epoch={self.epoch}", f"total={self.total:.6f}"]
        parts += [f"{name}={self.terms[name]:.6f}" for name in LOSS_TERMS]
        return " ".join(parts)


@dataclass
class TrainResult:
    history: List[EpochLoss] = field(default_factory=list)
    steps: int = 0


def train_step(
    net: LiftNet,
    optimizer: Adam,
    batch: LiftBatch,
    targets: TargetBatch,
    weights: LossWeights = LossWeights(),
    reduction: str = "mean",
) -> LossBreakdown:
    """Прямой проход, потеря, обратный проход и шаг оптимизатора."""
    loss = total_loss(net.forward(batch), targets, weights, reduction)
    if not loss.is_finite():
        raise TrainingDivergedError(f"Функция потерь перестала быть конечной: {loss.terms}")
    net.backward(loss)
    optimizer.step(net.parameters())
    return loss


def assemble_samples(
    records: Sequence[SampleSource],
    indices: Sequence[int],
    augment: AugmentConfig | None,
    seed: int,
    epoch: int,
    workers: int = 1,
) -> List[LiftSample]:
    """
    Сборка примеров батча. Генератор каждого примера зависит только от
    (seed, epoch, индекс), поэтому результат не зависит от числа потоков.
    """
    def build(index: int) -> LiftSample:
        rng = np.random.default_rng([seed, epoch, int(index)])
        return records[int(index)].to_sample(augment, rng)

    if workers <= 1:
        return [build(i) for i in indices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(build, indices))


def train(
    net: LiftNet,
    records: Sequence[SampleSource],
    cfg: TrainConfig = TrainConfig(),
    weights: LossWeights = LossWeights(),
    optimizer: Adam | None = None,
) -> TrainResult:
    """
    Обучение с перемешиванием и онлайн-аугментацией на каждой эпохе.

    epochs = 0 оставляет сеть без изменений.
    """
    if not records:
        raise ConfigurationError("Обучающая выборка пуста")
    optimizer = optimizer or Adam(cfg.learning_rate, cfg.clip_norm)
    result = TrainResult()
    n = len(records)
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        sums = dict.fromkeys(LOSS_TERMS, 0.0)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            indices = order[start:start + cfg.batch_size]
            samples = assemble_samples(records, indices, cfg.augment, cfg.seed, epoch, cfg.workers)
            batch = LiftBatch.from_samples(samples, net.dtype)
            loss = train_step(net, optimizer, batch, TargetBatch.from_samples(samples), weights, cfg.reduction)
            result.steps += 1
            share = len(indices) / n
            total += loss.total * share
            for name in LOSS_TERMS:
                sums[name] += loss.terms[name] * share
        seconds = time.perf_counter() - started
        record = EpochLoss(epoch=epoch + 1, total=total, terms=sums, seconds=seconds)
        result.history.append(record)
        logger.info("Эпоха %d: потеря %.6f, %.1f с", record.epoch, record.total, seconds)
    return result


def infer(net: LiftNet, samples: Sequence[LiftSample], batch_size: int = 64) -> List[HeadPrediction]:
    """Выходы сети для списка примеров."""
    predictions: List[HeadPrediction] = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        outputs = net.forward(LiftBatch.from_samples(chunk, net.dtype))
        predictions.extend(outputs.prediction(i) for i in range(len(chunk)))
    return predictions


# -----------------------------
# ЧЕКПОЙНТ LFN1
# -----------------------------

CHECKPOINT_MAGIC = b"LFN1"


def encode_checkpoint(net: LiftNet, meta: Dict[str, Any] | None = None) -> bytes:
    """
    magic "LFN1", u32 длина JSON-блока конфигурации, JSON,
    затем тензоры в порядке объявления: u8 ndim, u32 × ndim размеры, данные <f4.
    """
    config = asdict(net.config)
    config["stage_channels"] = list(net.config.stage_channels)
    block = json.dumps({"net": config, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(block)), block]
    for _, param in net.named_parameters():
        shape = param.value.shape
        chunks.append(struct.pack(f"<B{len(shape)}I", len(shape), *shape))
        chunks.append(np.ascontiguousarray(param.value, dtype="<f4").tobytes())
    return b"".join(chunks)


def decode_checkpoint(raw: bytes, precision: str | None = None) -> Tuple[LiftNet, Dict[str, Any]]:
    """Восстанавливает сеть и метаданные; `precision` переопределяет сохранённую точность."""
    if raw[:4] != CHECKPOINT_MAGIC or len(raw) < 8:
        raise GridFormatError("Файл не является чекпойнтом LFN1")
    (length,) = struct.unpack_from("<I", raw, 4)
    offset = 8 + length
    try:
        block = json.loads(raw[8:offset].decode("utf-8"))
        net_config = block["net"]
        if precision is not None:
            net_config["precision"] = precision
        net = LiftNet(LiftNetConfig(**net_config))
    except (ValueError, KeyError, TypeError) as exc:
        raise GridFormatError(f"Повреждённый блок конфигурации чекпойнта: {exc}") from exc

    for name, param in net.named_parameters():
        if offset >= len(raw):
            raise GridFormatError(f"Чекпойнт обрывается перед тензором {name}")
        ndim = raw[offset]
        shape = struct.unpack_from(f"<{ndim}I", raw, offset + 1)
        offset += 1 + 4 * ndim
        if tuple(shape) != param.value.shape:
            raise GridFormatError(f"Тензор {name}: форма {shape}, ожидалось {param.value.shape}")
        count = int(np.prod(shape))
        if offset + 4 * count > len(raw):
            raise GridFormatError(f"Чекпойнт обрывается внутри тензора {name}")
        data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        param.value[...] = data.reshape(shape).astype(net.dtype)
        offset += 4 * count
    if offset != len(raw):
        raise GridFormatError("Лишние байты в конце чекпойнта")
    return net, block.get("meta", {})
