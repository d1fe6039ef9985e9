"""Feature containers, checkpoints, dataset index, standardization,
segmentation and fold assignment.

Binary layouts (all little-endian)::

    feature clip  "MCLN" | version u16 = 1 | rows u32 | cols u32 | label u16
                  | reserved u16 | rows*cols float32, row-major
    checkpoint    "MCLW" | version u16 = 1 | reserved u16 | config_len u32
                  | config JSON (utf-8) | record_count u32
                  | records: name_len u16 | name (utf-8) | rows u32 | cols u32
                             | rows*cols float32, row-major

In memory everything is float64; values are narrowed to float32 only when
written.
"""

import csv
import io
import math
import os
import struct
import warnings
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "ContainerError",
    "BadMagicError",
    "TruncatedError",
    "ShapeOverflowError",
    "FeatureClip",
    "ZScoreParams",
    "Segment",
    "encode_clip",
    "decode_clip",
    "write_clip",
    "read_clip",
    "write_checkpoint",
    "read_checkpoint",
    "read_index",
    "write_index",
    "load_dataset",
    "fit_zscore",
    "apply_zscore",
    "extract_segments",
    "default_stride",
    "make_folds",
]

CLIP_MAGIC = b"MCLN"
CKPT_MAGIC = b"MCLW"
FORMAT_VERSION = 1
MAX_ELEMENTS = 2 ** 31 - 1
EPS_STD = 1e-8

_CLIP_HEADER = struct.Struct("<4sHIIHH")
_CKPT_HEADER = struct.Struct("<4sHHI")


class ContainerError(ValueError):
    """Base class for malformed container files."""


class BadMagicError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


class ShapeOverflowError(ContainerError):
    pass


@dataclass
class FeatureClip:
    id: str
    frames: np.ndarray  # (t, l)
    label: int
    fold: int = -1  # -1: not assigned


@dataclass(frozen=True)
class ZScoreParams:
    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True)
class Segment:
    frames: np.ndarray
    clip_id: str
    start: int


# ---------------------------------------------------------------------------
# binary containers
# ---------------------------------------------------------------------------


def _check_shape(rows, cols):
    if rows > 0xFFFFFFFF or cols > 0xFFFFFFFF or rows * cols > MAX_ELEMENTS:
        raise ShapeOverflowError(f"shape {rows}x{cols} exceeds the container limit of {MAX_ELEMENTS} values")


def encode_clip(frames, label):
    frames = np.asarray(frames)
    if frames.ndim != 2:
        raise ValueError(f"clip frames must be 2-D, got shape {frames.shape}")
    rows, cols = frames.shape
    _check_shape(rows, cols)
    if not 0 <= label <= 0xFFFF:
        raise ValueError(f"label {label} does not fit in u16")
    header = _CLIP_HEADER.pack(CLIP_MAGIC, FORMAT_VERSION, rows, cols, label, 0)
    return header + np.ascontiguousarray(frames, dtype="<f4").tobytes()


def decode_clip(buf):
    """Returns ``(frames float64 (rows, cols), label)``."""
    if len(buf) < 4 or buf[:4] != CLIP_MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {CLIP_MAGIC!r}")
    if len(buf) < _CLIP_HEADER.size:
        raise TruncatedError(f"header needs {_CLIP_HEADER.size} bytes, file has {len(buf)}")
    _, version, rows, cols, label, _ = _CLIP_HEADER.unpack_from(buf)
    if version != FORMAT_VERSION:
        raise ContainerError(f"unsupported container version {version}")
    _check_shape(rows, cols)
    need = _CLIP_HEADER.size + 4 * rows * cols
    if len(buf) < need:
        raise TruncatedError(f"payload needs {need} bytes, file has {len(buf)}")
    if len(buf) > need:
        raise ContainerError(f"{len(buf) - need} trailing bytes after payload")
    frames = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=_CLIP_HEADER.size)
    return frames.astype(np.float64).reshape(rows, cols), label


def write_clip(path, clip):
    with open(path, "wb") as fh:
        fh.write(encode_clip(clip.frames, clip.label))


def read_clip(path, clip_id=None, fold=-1):
    with open(path, "rb") as fh:
        frames, label = decode_clip(fh.read())
    if clip_id is None:
        clip_id = os.path.splitext(os.path.basename(path))[0]
    return FeatureClip(clip_id, frames, label, fold)


def write_checkpoint(path, config_json, tensors):
    """``tensors`` maps name -> array; arrays with more than two axes are
    stored flattened to (prod(shape[:-1]), shape[-1])."""
    cfg = config_json.encode("utf-8")
    out = io.BytesIO()
    out.write(_CKPT_HEADER.pack(CKPT_MAGIC, FORMAT_VERSION, 0, len(cfg)))
    out.write(cfg)
    out.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        arr2 = arr.reshape(1, -1) if arr.ndim < 2 else arr.reshape(-1, arr.shape[-1])
        rows, cols = arr2.shape
        _check_shape(rows, cols)
        key = name.encode("utf-8")
        out.write(struct.pack("<H", len(key)) + key + struct.pack("<II", rows, cols))
        out.write(np.ascontiguousarray(arr2, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(out.getvalue())


def read_checkpoint(path):
    """Returns ``(config_json, {name: float64 2-D array})``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CKPT_MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {CKPT_MAGIC!r}")
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise TruncatedError(f"checkpoint truncated at byte {pos} (needs {n} more)")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    _, version, _, cfg_len = _CKPT_HEADER.unpack(take(_CKPT_HEADER.size))
    if version != FORMAT_VERSION:
        raise ContainerError(f"unsupported checkpoint version {version}")
    config_json = take(cfg_len).decode("utf-8")
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        rows, cols = struct.unpack("<II", take(8))
        _check_shape(rows, cols)
        data = np.frombuffer(take(4 * rows * cols), dtype="<f4")
        tensors[name] = data.astype(np.float64).reshape(rows, cols)
    if pos != len(buf):
        raise ContainerError(f"{len(buf) - pos} trailing bytes in checkpoint")
    return config_json, tensors


# ---------------------------------------------------------------------------
# dataset index
# ---------------------------------------------------------------------------

INDEX_HEADER = ["id", "path", "label", "fold"]


@dataclass
class IndexRow:
    id: str
    path: str
    label: int
    fold: int = -1


def read_index(path):
    """Rows of an ``id,path,label,fold`` CSV. An empty fold cell means unassigned (-1)."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != INDEX_HEADER:
            raise ValueError(f"{path}: index header must be {','.join(INDEX_HEADER)}, got {header}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(rec)}")
            cid, p, label, fold = rec
            try:
                rows.append(IndexRow(cid, p, int(label), int(fold) if fold.strip() else -1))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: label and fold must be integers") from None
    return rows


def write_index(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INDEX_HEADER)
        for r in rows:
            w.writerow([r.id, r.path, r.label, "" if r.fold < 0 else r.fold])


def load_dataset(index_path):
    """Read every feature clip listed in an index; paths resolve relative to the index."""
    base = os.path.dirname(os.path.abspath(index_path))
    clips = []
    for r in read_index(index_path):
        clip = read_clip(os.path.join(base, r.path), r.id, r.fold)
        if clip.label != r.label:
            raise ValueError(f"clip {r.id}: container label {clip.label} disagrees with index label {r.label}")
        clips.append(clip)
    return clips


# ---------------------------------------------------------------------------
# standardization and segmentation
# ---------------------------------------------------------------------------


def fit_zscore(clips):
    """Per-feature mean and population std over every frame of the given clips."""
    frames = [np.asarray(c.frames if isinstance(c, FeatureClip) else c, dtype=np.float64) for c in clips]
    frames = [f for f in frames if f.size]
    if not frames:
        raise ValueError("cannot fit z-score parameters on an empty training set")
    allf = np.concatenate(frames, axis=0)
    mean = allf.mean(axis=0)
    std = np.maximum(allf.std(axis=0), EPS_STD)
    return ZScoreParams(mean, std)


def apply_zscore(clip, params):
    if isinstance(clip, FeatureClip):
        return replace(clip, frames=(clip.frames - params.mean) / params.std)
    return (np.asarray(clip, dtype=np.float64) - params.mean) / params.std


def default_stride(q):
    return max(1, math.ceil(q / 2))


def extract_segments(clip, q, stride=None):
    """Segments starting at 0, stride, 2*stride, ... that fit inside the clip."""
    stride = default_stride(q) if stride is None else stride
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    t = clip.frames.shape[0]
    if t < q:
        raise ValueError(f"clip {clip.id!r} has {t} frames, shorter than the segment size {q}")
    return [Segment(clip.frames[s:s + q], clip.id, s) for s in range(0, t - q + 1, stride)]


# ---------------------------------------------------------------------------
# folds
# ---------------------------------------------------------------------------


def make_folds(labels, fold_count, rng):
    """Stratified fold ids: shuffle each class, then deal its members round-robin.

    The dealing continues across classes (class c starts where class c-1
    stopped) so fold sizes stay within one of each other overall too.
    Returns an int array aligned with ``labels``.
    """
    if fold_count < 2:
        raise ValueError(f"fold_count must be >= 2, got {fold_count}")
    labels = np.asarray([c.label if isinstance(c, FeatureClip) else c for c in labels], dtype=np.int64)
    folds = np.full(len(labels), -1, dtype=np.int64)
    cursor = 0
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if len(members) < fold_count:
            warnings.warn(f"class {cls} has {len(members)} clips for {fold_count} folds", stacklevel=2)
        members = members[rng.permutation(len(members))]
        for i, m in enumerate(members):
            folds[m] = (cursor + i) % fold_count
        cursor = (cursor + len(members)) % fold_count
    return folds
