# clients/frame_source.py
from __future__ import annotations

import threading
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Optional

import cv2
import numpy as np

from utils.errors import ConfigError, DecodeFailure, FrameMissing

FRAME_PATTERN = "{:08d}.png"
VIDEO_EXTENSIONS = (".mp4", ".avi", ".mkv")


class FrameSource(ABC):
    """Random access to one operation's frames as RGB uint8 arrays."""

    video_id: str

    @abstractmethod
    def read_frame(self, frame_index: int) -> np.ndarray:
        ...

    def close(self) -> None:
        pass

    def __enter__(self) -> "FrameSource":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class FrameDirectorySource(FrameSource):
    """Pre-decoded frames: `<root>/<video_id>/%08d.png`."""

    def __init__(self, root: str | Path, video_id: str):
        self.video_id = video_id
        self.directory = Path(root) / video_id

    def frame_path(self, frame_index: int) -> Path:
        return self.directory / FRAME_PATTERN.format(frame_index)

    def read_frame(self, frame_index: int) -> np.ndarray:
        path = self.frame_path(frame_index)
        if frame_index < 0 or not path.is_file():
            raise FrameMissing(frame_index, str(self.directory))
        bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
        if bgr is None:
            raise DecodeFailure(f"could not decode {path}")
        return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


class VideoCaptureSource(FrameSource):
    """Decoder-backed reader over a video file (seeks per request)."""

    def __init__(self, path: str | Path, video_id: Optional[str] = None):
        self.path = Path(path)
        self.video_id = video_id or self.path.stem
        if not self.path.is_file():
            raise ConfigError(f"video file not found: {self.path}")
        self._cap = cv2.VideoCapture(str(self.path))
        if not self._cap.isOpened():
            raise DecodeFailure(f"could not open {self.path}")
        self._count = int(self._cap.get(cv2.CAP_PROP_FRAME_COUNT))
        self._lock = threading.Lock()

    def read_frame(self, frame_index: int) -> np.ndarray:
        if frame_index < 0 or (self._count > 0 and frame_index >= self._count):
            raise FrameMissing(frame_index, str(self.path))
        with self._lock:
            self._cap.set(cv2.CAP_PROP_POS_FRAMES, frame_index)
            ok, bgr = self._cap.read()
        if not ok or bgr is None:
            raise DecodeFailure(f"could not decode frame {frame_index} of {self.path}")
        return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)

    def close(self) -> None:
        self._cap.release()


def open_source(root: str | Path, video_id: str) -> FrameSource:
    """Frame directory when `<root>/<video_id>/` exists, else `<root>/<video_id>.mp4`."""
    root = Path(root)
    if (root / video_id).is_dir():
        return FrameDirectorySource(root, video_id)
    for ext in VIDEO_EXTENSIONS:
        candidate = root / f"{video_id}{ext}"
        if candidate.is_file():
            return VideoCaptureSource(candidate, video_id)
    raise ConfigError(f"no frames for video {video_id!r} under {root}")


def frame_count(root: str | Path, video_id: str) -> Optional[int]:
    """Last frame file index + 1, or the decoder's frame count; None when unknown."""
    root = Path(root)
    directory = root / video_id
    if directory.is_dir():
        indices = [int(p.stem) for p in directory.glob("*.png") if p.stem.isdigit()]
        return max(indices) + 1 if indices else None
    for ext in VIDEO_EXTENSIONS:
        candidate = root / f"{video_id}{ext}"
        if candidate.is_file():
            cap = cv2.VideoCapture(str(candidate))
            try:
                count = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
            finally:
                cap.release()
            return count if count > 0 else None
    return None


def write_frame(root: str | Path, video_id: str, frame_index: int, rgb: np.ndarray) -> Path:
    return write_image(Path(root) / video_id / FRAME_PATTERN.format(frame_index), rgb)


def write_image(path: str | Path, rgb: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR)):
        raise DecodeFailure(f"could not write {path}")
    return path


def read_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"image not found: {path}")
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise DecodeFailure(f"could not decode {path}")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
