# models/pooling.py
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np

from models.metrics import MetricsResult
from models.phase import PhaseLabel
from models.shot import Shot


class PoolingMode(str, Enum):
    MAX = "max"
    AVERAGE = "average"


class DistanceMetric(str, Enum):
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"


@dataclass
class PooledDescriptor:
    values: np.ndarray = field(repr=False)
    shot: Optional[Shot] = None
    time_augmented: bool = False

    @property
    def label(self) -> Optional[PhaseLabel]:
        return self.shot.phase if self.shot else None


@dataclass
class KnnEvalResult:
    metric: DistanceMetric
    predictions: List[PhaseLabel]
    truths: List[PhaseLabel]
    neighbor_indices: List[int]
    neighbor_distances: List[float]
    shot_ids: List[str] = field(default_factory=list)
    metrics: Optional[MetricsResult] = None

    @property
    def accuracy(self) -> float:
        if not self.truths:
            return 0.0
        return sum(p == t for p, t in zip(self.predictions, self.truths)) / len(self.truths)
