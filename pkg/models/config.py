# models/config.py
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

from models.lstm import TrainConfig
from models.saliency import LogGaborBankConfig

# per-phase duration mean/std in minutes over the reference corpus, used as synthetic defaults
PHASE_DURATIONS: Dict[str, tuple] = {
    "P1": (3.04, 1.70),
    "P2": (1.71, 2.06),
    "P3": (10.53, 7.97),
    "P4": (4.70, 2.87),
    "P5": (10.40, 6.30),
    "P6": (1.14, 0.59),
    "P7": (5.68, 2.80),
    "P8": (4.93, 5.61),
}


@dataclass
class PipelineConfig:
    dataset_root: str = "data"
    frames_root: Optional[str] = None  # defaults to <dataset_root>/frames
    out_dir: str = "out"
    backbone: str = "resnet101"
    mode: str = "salient_patch"
    provider: str = "mock"
    pooling: str = "max"
    metric: str = "cosine"
    with_time: bool = True
    time_scale: str = "auto"
    leave_one_video_out: bool = False
    pooling_stride: int = 1
    lstm_stride: int = 25
    fps: float = 25.0
    shot_seconds: int = 10
    per_video_per_phase: int = 2
    per_phase_target: int = 50
    seed: int = 7
    threads: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    saliency: LogGaborBankConfig = field(default_factory=LogGaborBankConfig)


@dataclass
class SyntheticCorpusSpec:
    num_videos: int = 6
    durations: Dict[str, tuple] = field(default_factory=lambda: dict(PHASE_DURATIONS))
    # shrinks the reference durations for desk runs
    scale: float = 0.02
    fps: float = 25.0
    width: int = 192
    height: int = 108
    descriptor_dim: int = 16
    separation: float = 1.0
    time_dependent: bool = True
    # floor on every drawn phase duration so each phase can host a 10 s shot
    min_phase_seconds: float = 12.0
    missing_phases: Dict[str, list] = field(default_factory=dict)
    seed: int = 0
