# models/lstm.py
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from models.metrics import ConfusionMatrix, MetricRow

NUM_CLASSES = 8
# order of tensors in the model file and in gradient/moment dicts
TENSOR_ORDER = ("W_x", "W_h", "b", "W_y", "b_y")


@dataclass
class LstmParams:
    # gate blocks stacked as (input i, forget f, candidate g, output o)
    W_x: np.ndarray  # (4H, D)
    W_h: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    @property
    def hidden_size(self) -> int:
        return int(self.W_h.shape[1])

    @property
    def input_size(self) -> int:
        return int(self.W_x.shape[1])


@dataclass
class ClassifierHead:
    W_y: np.ndarray  # (8, H)
    b_y: np.ndarray  # (8,)


def to_tensors(params: LstmParams, head: ClassifierHead) -> Dict[str, np.ndarray]:
    return {"W_x": params.W_x, "W_h": params.W_h, "b": params.b, "W_y": head.W_y, "b_y": head.b_y}


def from_tensors(tensors: Dict[str, np.ndarray]) -> "tuple[LstmParams, ClassifierHead]":
    return (
        LstmParams(W_x=tensors["W_x"], W_h=tensors["W_h"], b=tensors["b"]),
        ClassifierHead(W_y=tensors["W_y"], b_y=tensors["b_y"]),
    )


@dataclass
class TrainConfig:
    hidden_size: int = 200
    batch_size: int = 16
    epochs: int = 80
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 7
    cycles: int = 5
    train_per_class: int = 25
    forget_bias: float = 1.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TrainConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, tensors: Dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(v) for k, v in tensors.items()},
            v={k: np.zeros_like(v) for k, v in tensors.items()},
            t=0,
        )


@dataclass
class ForwardResult:
    hidden: np.ndarray  # (T, H)
    logits: np.ndarray  # (8,)
    probabilities: np.ndarray  # (8,)


@dataclass
class TrainedModel:
    params: LstmParams
    head: ClassifierHead
    config: TrainConfig
    seed: int
    loss_trace: List[float] = field(default_factory=list)
    # loss of the freshly initialized model over the training set, before any update
    initial_loss: Optional[float] = None
    cycle: int = 0
    with_time: bool = True
    time_scale: float = 1.0


@dataclass
class CycleResult:
    cycle: int
    model: TrainedModel
    metrics: MetricRow
    micro_accuracy: float
    confusion: ConfusionMatrix
    test_shot_ids: List[str] = field(default_factory=list)
    predictions: List[str] = field(default_factory=list)


@dataclass
class TrainingReport:
    cycles: List[CycleResult]
    mean: MetricRow
    std: MetricRow
    pooled_confusion: ConfusionMatrix
