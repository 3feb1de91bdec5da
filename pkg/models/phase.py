# models/phase.py
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, List, Optional, Tuple

from utils.errors import UnknownPhase

DEFAULT_FPS = 25.0


class PhaseLabel(IntEnum):
    TROCAR_PLACEMENT = 1
    PREPARATION = 2
    CALOT_TRIANGLE_DISSECTION = 3
    CLIPPING_CUTTING = 4
    GALLBLADDER_DISSECTION = 5
    GALLBLADDER_PACKAGING = 6
    CLEANING_COAGULATION = 7
    GALLBLADDER_RETRACTION = 8

    @property
    def code(self) -> str:
        return f"P{int(self)}"

    @property
    def index(self) -> int:
        """0-based position, used for matrix rows and the cache's phase byte."""
        return int(self) - 1

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]

    @classmethod
    def from_index(cls, index: int) -> "PhaseLabel":
        return cls(index + 1)

    @classmethod
    def from_name(cls, name: str) -> "PhaseLabel":
        key = _normalize(name)
        if key in _LOOKUP:
            return _LOOKUP[key]
        raise UnknownPhase(name)


_DISPLAY_NAMES: Dict[PhaseLabel, str] = {
    PhaseLabel.TROCAR_PLACEMENT: "Trocar Placement",
    PhaseLabel.PREPARATION: "Preparation",
    PhaseLabel.CALOT_TRIANGLE_DISSECTION: "Calot Triangle Dissection",
    PhaseLabel.CLIPPING_CUTTING: "Clipping & Cutting",
    PhaseLabel.GALLBLADDER_DISSECTION: "Gallbladder Dissection",
    PhaseLabel.GALLBLADDER_PACKAGING: "Gallbladder Packaging",
    PhaseLabel.CLEANING_COAGULATION: "Cleaning & Coagulation",
    PhaseLabel.GALLBLADDER_RETRACTION: "Gallbladder Retraction",
}


def _normalize(name: str) -> str:
    # "Clipping & Cutting", "ClippingCutting", "clipping_cutting" all collapse to "clippingcutting"
    return re.sub(r"[^a-z0-9]", "", str(name).lower().replace("and", ""))


_LOOKUP: Dict[str, PhaseLabel] = {}
for _p in PhaseLabel:
    _LOOKUP[_normalize(_p.display_name)] = _p
    _LOOKUP[_normalize(_p.name)] = _p
    _LOOKUP[_p.code.lower()] = _p


@dataclass(frozen=True)
class PhaseRun:
    start_frame: int
    end_frame: int  # inclusive
    phase: PhaseLabel

    @property
    def num_frames(self) -> int:
        return self.end_frame - self.start_frame + 1


@dataclass
class AnnotationTimeline:
    video_id: str
    fps: float = DEFAULT_FPS
    runs: List[PhaseRun] = field(default_factory=list)

    @property
    def num_frames(self) -> int:
        return self.runs[-1].end_frame + 1 if self.runs else 0

    @property
    def frames_per_minute(self) -> float:
        return self.fps * 60.0

    @property
    def duration_minutes(self) -> float:
        return self.num_frames / self.frames_per_minute

    def runs_of(self, phase: PhaseLabel) -> List[PhaseRun]:
        return [r for r in self.runs if r.phase == phase]

    def phase_frames(self, phase: PhaseLabel) -> int:
        return sum(r.num_frames for r in self.runs_of(phase))

    def phase_at(self, frame: int) -> Optional[PhaseLabel]:
        for r in self.runs:
            if r.start_frame <= frame <= r.end_frame:
                return r.phase
        return None


@dataclass
class PhaseSummary:
    occurrences: int
    mean: Optional[float] = None
    std: Optional[float] = None
    min: Optional[float] = None
    max: Optional[float] = None


@dataclass
class PhaseStats:
    """Per-phase duration statistics in minutes, one sample per operation."""

    phases: Dict[PhaseLabel, PhaseSummary] = field(default_factory=dict)

    def __getitem__(self, phase: PhaseLabel) -> PhaseSummary:
        return self.phases[phase]


@dataclass
class OverlapProfile:
    bin_minutes: float
    counts: List[int]
    spans: Dict[PhaseLabel, Tuple[float, float]] = field(default_factory=dict)

    def bin_center(self, index: int) -> float:
        return (index + 0.5) * self.bin_minutes
