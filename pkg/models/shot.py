# models/shot.py
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List

from models.phase import DEFAULT_FPS, PhaseLabel

SHOT_SECONDS = 10
SHOT_FRAMES = 250


@dataclass(frozen=True)
class Shot:
    video_id: str
    phase: PhaseLabel
    start_frame: int
    num_frames: int = SHOT_FRAMES
    elapsed_minutes: float = 0.0
    fps: float = DEFAULT_FPS

    @property
    def shot_id(self) -> str:
        return f"{self.video_id}:{self.phase.code}:{self.start_frame}"

    @property
    def end_frame(self) -> int:
        return self.start_frame + self.num_frames - 1

    def frame_elapsed_minutes(self, offset: int) -> float:
        return (self.start_frame + offset) / (self.fps * 60.0)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "video_id": self.video_id,
            "phase": self.phase.code,
            "start_frame": self.start_frame,
            "num_frames": self.num_frames,
            "elapsed_minutes": self.elapsed_minutes,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any], fps: float = DEFAULT_FPS) -> "Shot":
        return cls(
            video_id=str(d["video_id"]),
            phase=PhaseLabel.from_name(d["phase"]),
            start_frame=int(d["start_frame"]),
            num_frames=int(d.get("num_frames", SHOT_FRAMES)),
            elapsed_minutes=float(d["elapsed_minutes"]),
            fps=fps,
        )


@dataclass(frozen=True)
class InsufficientShots:
    """Deficit record: the corpus could not supply `target` shots of `phase`."""

    phase: PhaseLabel
    available: int
    target: int


@dataclass
class ShotManifest:
    shots: List[Shot]
    seed: int
    per_phase_target: int = 50
    fps: float = DEFAULT_FPS
    deficits: List[InsufficientShots] = field(default_factory=list)

    def by_phase(self) -> Dict[PhaseLabel, List[Shot]]:
        out: Dict[PhaseLabel, List[Shot]] = {p: [] for p in PhaseLabel}
        for s in self.shots:
            out[s.phase].append(s)
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "per_phase_target": self.per_phase_target,
            "fps": self.fps,
            "shots": [s.to_dict() for s in self.shots],
            "deficits": [
                {"phase": d.phase.code, "available": d.available, "target": d.target}
                for d in self.deficits
            ],
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ShotManifest":
        fps = float(d.get("fps", DEFAULT_FPS))
        return cls(
            shots=[Shot.from_dict(s, fps=fps) for s in d.get("shots", [])],
            seed=int(d["seed"]),
            per_phase_target=int(d.get("per_phase_target", 50)),
            fps=fps,
            deficits=[
                InsufficientShots(PhaseLabel.from_name(x["phase"]), int(x["available"]), int(x["target"]))
                for x in d.get("deficits", [])
            ],
        )
