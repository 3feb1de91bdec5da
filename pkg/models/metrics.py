# models/metrics.py
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from models.phase import PhaseLabel
from utils.numeric import safe_div

NUM_CLASSES = len(PhaseLabel)


@dataclass
class MetricRow:
    acc: float = 0.0
    pre: float = 0.0
    rec: float = 0.0
    f1: float = 0.0

    def to_dict(self) -> Dict[str, float]:
        return {"acc": self.acc, "pre": self.pre, "rec": self.rec, "f1": self.f1}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "MetricRow":
        return cls(acc=float(d["acc"]), pre=float(d["pre"]), rec=float(d["rec"]), f1=float(d["f1"]))


@dataclass
class ConfusionMatrix:
    # counts[true][pred]
    counts: np.ndarray = field(default_factory=lambda: np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def normalized(self) -> np.ndarray:
        sums = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        out = np.zeros(self.counts.shape, dtype=np.float64)
        np.divide(self.counts, sums, out=out, where=sums > 0)
        return out

    @property
    def micro_accuracy(self) -> float:
        return safe_div(float(np.trace(self.counts)), float(self.total))

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "labels": [p.code for p in PhaseLabel],
            "counts": self.counts.tolist(),
            "normalized": self.normalized.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ConfusionMatrix":
        return cls(np.asarray(d["counts"], dtype=np.int64))


@dataclass
class MetricsResult:
    macro: MetricRow
    per_class: Dict[PhaseLabel, MetricRow]
    micro_accuracy: float
    support: Dict[PhaseLabel, int]
    confusion: ConfusionMatrix

    def to_dict(self) -> Dict[str, Any]:
        return {
            "macro": self.macro.to_dict(),
            "micro_accuracy": self.micro_accuracy,
            "per_class": {p.code: row.to_dict() for p, row in self.per_class.items()},
            "support": {p.code: n for p, n in self.support.items()},
            "confusion": self.confusion.to_dict(),
        }


@dataclass
class ReportRow:
    """One line of a result table, with where it came from."""

    name: str
    row: MetricRow
    micro_accuracy: Optional[float] = None
    std: Optional[MetricRow] = None
    provenance: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {"name": self.name, "metrics": self.row.to_dict()}
        if self.micro_accuracy is not None:
            d["micro_accuracy"] = self.micro_accuracy
        if self.std is not None:
            d["std"] = self.std.to_dict()
        if self.provenance:
            d["provenance"] = self.provenance
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ReportRow":
        return cls(
            name=str(d["name"]),
            row=MetricRow.from_dict(d["metrics"]),
            micro_accuracy=d.get("micro_accuracy"),
            std=MetricRow.from_dict(d["std"]) if d.get("std") else None,
            provenance=dict(d.get("provenance") or {}),
        )


@dataclass
class NamedMatrix:
    title: str
    matrix: ConfusionMatrix
    provenance: Dict[str, Any] = field(default_factory=dict)

    @property
    def rows(self) -> List[List[float]]:
        return self.matrix.normalized.tolist()
