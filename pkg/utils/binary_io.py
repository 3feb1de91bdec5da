# utils/binary_io.py
from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from models.features import ShotDescriptorSequence
from models.lstm import TENSOR_ORDER
from models.phase import PhaseLabel
from models.shot import SHOT_SECONDS, Shot
from utils.errors import BadMagic, DataError, TruncatedFile, VersionMismatch

CACHE_MAGIC = b"SPFC"
CACHE_VERSION = 1
MODEL_MAGIC = b"SPLM"
MODEL_VERSION = 1

_CACHE_HEADER = struct.Struct("<4sIIII")  # magic, version, dim, stride, shot_count
_SHOT_HEAD = struct.Struct("<BIId")  # phase index, start_frame, entry_count, elapsed of first frame
_MODEL_HEADER = struct.Struct("<4sIII")  # magic, version, D, H


def atomic_write(path: str | Path, data: bytes) -> Path:
    """Write to `<path>.tmp` then rename, so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)
    return path


# ---- feature cache (.spfc) ----

def encode_cache(sequences: Sequence[ShotDescriptorSequence]) -> bytes:
    if not sequences:
        raise DataError("refusing to write an empty feature cache")
    dim = sequences[0].descriptor_dim
    stride = sequences[0].stride
    for seq in sequences:
        if seq.descriptor_dim != dim or seq.stride != stride:
            raise DataError("all cached sequences must share descriptor dimension and stride")

    parts: List[bytes] = [_CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, dim, stride, len(sequences))]
    for seq in sequences:
        vid = seq.shot.video_id.encode("utf-8")
        parts.append(struct.pack("<H", len(vid)))
        parts.append(vid)
        parts.append(_SHOT_HEAD.pack(seq.shot.phase.index, seq.shot.start_frame, len(seq), seq.shot.elapsed_minutes))
        entries = np.empty(len(seq), dtype=[("elapsed", "<f8"), ("values", "<f4", (dim,))])
        entries["elapsed"] = seq.elapsed_minutes
        entries["values"] = seq.descriptors
        parts.append(entries.tobytes())
    return b"".join(parts)


def decode_cache(data: bytes, fps: float = 25.0) -> List[ShotDescriptorSequence]:
    reader = _Reader(data)
    magic, version, dim, stride, count = reader.unpack(_CACHE_HEADER)
    if magic != CACHE_MAGIC:
        raise BadMagic(f"not a feature cache (magic {magic!r})")
    if version != CACHE_VERSION:
        raise VersionMismatch(f"feature cache version {version}, expected {CACHE_VERSION}")

    entry_dtype = np.dtype([("elapsed", "<f8"), ("values", "<f4", (dim,))])
    sequences: List[ShotDescriptorSequence] = []
    for _ in range(count):
        (id_len,) = reader.unpack(struct.Struct("<H"))
        video_id = reader.take(id_len).decode("utf-8")
        phase_idx, start, n, elapsed = reader.unpack(_SHOT_HEAD)
        if phase_idx >= len(PhaseLabel):
            raise DataError(f"invalid phase index {phase_idx} in feature cache")
        entries = np.frombuffer(reader.take(n * entry_dtype.itemsize), dtype=entry_dtype)
        shot = Shot(
            video_id=video_id,
            phase=PhaseLabel.from_index(phase_idx),
            start_frame=start,
            num_frames=int(round(SHOT_SECONDS * fps)),
            elapsed_minutes=elapsed,
            fps=fps,
        )
        sequences.append(
            ShotDescriptorSequence(
                shot=shot,
                stride=stride,
                offsets=np.arange(n, dtype=np.int64) * stride,
                elapsed_minutes=entries["elapsed"].astype(np.float64),
                descriptors=entries["values"].astype(np.float32),
            )
        )
    if reader.remaining:
        raise DataError(f"feature cache has {reader.remaining} bytes after its last shot record")
    return sequences


def write_cache(sequences: Sequence[ShotDescriptorSequence], path: str | Path) -> Path:
    return atomic_write(path, encode_cache(sequences))


def read_cache(path: str | Path, fps: float = 25.0) -> List[ShotDescriptorSequence]:
    with open(path, "rb") as f:
        return decode_cache(f.read(), fps=fps)


# ---- LSTM model (.splm) ----

def encode_model(tensors: Dict[str, np.ndarray], trailer: Dict[str, Any]) -> bytes:
    d = int(tensors["W_x"].shape[1])
    h = int(tensors["W_h"].shape[1])
    parts = [_MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, d, h)]
    for name in TENSOR_ORDER:
        parts.append(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes())
    parts.append(json.dumps(trailer, sort_keys=True).encode("utf-8"))
    return b"".join(parts)


def decode_model(data: bytes, num_classes: int = 8) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    reader = _Reader(data)
    magic, version, d, h = reader.unpack(_MODEL_HEADER)
    if magic != MODEL_MAGIC:
        raise BadMagic(f"not an LSTM model file (magic {magic!r})")
    if version != MODEL_VERSION:
        raise VersionMismatch(f"model file version {version}, expected {MODEL_VERSION}")
    shapes = {
        "W_x": (4 * h, d),
        "W_h": (4 * h, h),
        "b": (4 * h,),
        "W_y": (num_classes, h),
        "b_y": (num_classes,),
    }
    tensors: Dict[str, np.ndarray] = {}
    for name in TENSOR_ORDER:
        shape = shapes[name]
        size = int(np.prod(shape))
        tensors[name] = np.frombuffer(reader.take(size * 8), dtype="<f8").reshape(shape).astype(np.float64)
    try:
        trailer = json.loads(reader.rest().decode("utf-8"))
    except ValueError as e:
        raise TruncatedFile(f"model trailer is not valid JSON: {e}") from e
    return tensors, trailer


class _Reader:
    def __init__(self, data: bytes):
        self._data = memoryview(data)
        self._pos = 0

    def take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise TruncatedFile(f"needed {n} bytes at offset {self._pos}, file has {len(self._data)}")
        out = bytes(self._data[self._pos : self._pos + n])
        self._pos += n
        return out

    def unpack(self, fmt: struct.Struct) -> tuple:
        return fmt.unpack(self.take(fmt.size))

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos

    def rest(self) -> bytes:
        out = bytes(self._data[self._pos :])
        self._pos = len(self._data)
        return out

