"""
Файловый ввод-вывод датасета.

Итоговые файлы пишутся во временный файл в каталоге назначения
и переносятся на место через `os.replace`.
"""
from __future__ import annotations

import io
import os
import tempfile
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from .evalkit import LabelRecord, parse_label_text, serialize_labels
from .exceptions import GridFormatError, LabelFormatError
from .geometry import DepthMap, DisparityMap, GridKind, decode_grid, encode_grid
from .roipipe import SemanticMask

PathLike = str | os.PathLike


def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


# -----------------------------
# СЕТКИ LFD1
# -----------------------------

def write_grid(path: PathLike, values: np.ndarray, validity: np.ndarray, kind: GridKind) -> Path:
    return atomic_write_bytes(path, encode_grid(values, validity, kind))


def read_grid(path: PathLike) -> DepthMap | DisparityMap:
    raw = Path(path).read_bytes()
    try:
        return decode_grid(raw)
    except GridFormatError as exc:
        raise GridFormatError(f"{path}: {exc}") from exc


# -----------------------------
# СЕМАНТИЧЕСКИЕ МАСКИ (PGM P5)
# -----------------------------

def write_pgm(path: PathLike, labels: np.ndarray) -> Path:
    """8-битная одноканальная маска в бинарном PGM."""
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise GridFormatError(f"{path}: метки маски должны лежать в [0, 255]")
    buffer = io.BytesIO()
    Image.fromarray(labels.astype(np.uint8)).save(buffer, format="PPM")
    return atomic_write_bytes(path, buffer.getvalue())


def read_pgm(path: PathLike, num_classes: int) -> SemanticMask:
    try:
        with Image.open(path) as image:
            if image.mode != "L":
                raise GridFormatError(f"{path}: ожидается одноканальная 8-битная маска, режим {image.mode}")
            labels = np.array(image, dtype=np.int64)
    except UnidentifiedImageError as exc:
        raise GridFormatError(f"{path}: файл не является PGM") from exc
    if labels.max(initial=0) > num_classes:
        raise GridFormatError(f"{path}: метка {labels.max()} превышает число классов {num_classes}")
    return SemanticMask(labels, num_classes)


# -----------------------------
# РАЗМЕТКА И КАЛИБРОВКА
# -----------------------------

def write_labels(path: PathLike, records: Sequence[LabelRecord]) -> Path:
    return atomic_write_text(path, serialize_labels(records))


def read_labels(path: PathLike) -> List[LabelRecord]:
    try:
        return parse_label_text(Path(path).read_text(encoding="utf-8"))
    except LabelFormatError as exc:
        raise LabelFormatError(f"{path}: {exc}") from exc


def write_calib(path: PathLike, fx: float, fy: float, cx: float, cy: float, baseline: float) -> Path:
    """Одна строка `fx fy cx cy baseline`."""
    return atomic_write_text(path, f"{fx:.6f} {fy:.6f} {cx:.6f} {cy:.6f} {baseline:.6f}\n")


def read_calib(path: PathLike) -> Tuple[float, float, float, float, float]:
    fields = Path(path).read_text(encoding="utf-8").split()
    if len(fields) != 5:
        raise GridFormatError(f"{path}: ожидалось 5 чисел (fx fy cx cy baseline), получено {len(fields)}")
    try:
        fx, fy, cx, cy, baseline = (float(v) for v in fields)
    except ValueError as exc:
        raise GridFormatError(f"{path}: {exc}") from exc
    return fx, fy, cx, cy, baseline
