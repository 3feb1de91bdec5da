# agents/shot_sampler_agent.py
from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from models.phase import AnnotationTimeline, PhaseLabel
from models.shot import InsufficientShots, Shot, ShotManifest
from utils.errors import ConfigError, DataError, EmptyInput
from utils.log import get_logger

logger = get_logger(__name__)

MAX_PLACEMENT_ATTEMPTS = 1000


class ShotSamplerAgent:
    """
    Draws the randomized shot dataset: up to N non-overlapping fixed-length shots
    per (video, phase), then a uniform subsample down to the per-phase target.
    """

    def extract_shots(
        self,
        timelines: Sequence[AnnotationTimeline],
        seed: int,
        per_video_per_phase: int = 2,
        shot_seconds: int = 10,
        per_phase_target: int = 50,
    ) -> ShotManifest:
        if not timelines:
            raise EmptyInput("shot extraction needs at least one timeline")
        if per_video_per_phase < 1 or shot_seconds <= 0 or per_phase_target < 1:
            raise ConfigError("per_video_per_phase, shot_seconds and per_phase_target must be positive")

        fps_values = {tl.fps for tl in timelines}
        if len(fps_values) != 1:
            raise DataError(f"timelines disagree on fps: {sorted(fps_values)}")
        fps = fps_values.pop()
        shot_frames = int(round(shot_seconds * fps))

        # one sequential stream: all placements first, then per-phase subsampling
        rng = np.random.default_rng(seed)
        candidates: Dict[PhaseLabel, List[Shot]] = {p: [] for p in PhaseLabel}
        for tl in sorted(timelines, key=lambda t: t.video_id):
            for phase in PhaseLabel:
                starts = self._place(tl, phase, shot_frames, per_video_per_phase, rng)
                for start in starts:
                    candidates[phase].append(
                        Shot(
                            video_id=tl.video_id,
                            phase=phase,
                            start_frame=start,
                            num_frames=shot_frames,
                            elapsed_minutes=start / (fps * 60.0),
                            fps=fps,
                        )
                    )

        shots: List[Shot] = []
        deficits: List[InsufficientShots] = []
        for phase in PhaseLabel:
            pool = candidates[phase]
            if len(pool) > per_phase_target:
                keep = np.sort(rng.choice(len(pool), size=per_phase_target, replace=False))
                pool = [pool[i] for i in keep]
            elif len(pool) < per_phase_target:
                deficits.append(InsufficientShots(phase, len(pool), per_phase_target))
                logger.warning(
                    "⚠️ Only %d of %d shots available for %s", len(pool), per_phase_target, phase.code
                )
            shots.extend(pool)

        logger.info("✅ Extracted %d shots (seed=%d)", len(shots), seed)
        return ShotManifest(
            shots=shots, seed=seed, per_phase_target=per_phase_target, fps=fps, deficits=deficits
        )

    def save_manifest(self, manifest: ShotManifest, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8")
        return path

    def load_manifest(self, path: str | Path) -> ShotManifest:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"shot manifest not found: {path}")
        try:
            return ShotManifest.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except (KeyError, ValueError, TypeError) as e:
            raise DataError(f"invalid shot manifest {path}: {e}") from e

    # ----------------------
    # helpers
    # ----------------------

    def _place(
        self,
        tl: AnnotationTimeline,
        phase: PhaseLabel,
        shot_frames: int,
        count: int,
        rng: np.random.Generator,
    ) -> List[int]:
        """Uniform start frames over the union of the phase's runs, rejecting overlaps."""
        ranges: List[Tuple[int, int]] = []  # (first feasible start, number of starts)
        for run in tl.runs_of(phase):
            n = run.num_frames - shot_frames + 1
            if n > 0:
                ranges.append((run.start_frame, n))
        total = sum(n for _, n in ranges)
        if total == 0:
            return []

        def draw() -> int:
            k = int(rng.integers(total))
            for first, n in ranges:
                if k < n:
                    return first + k
                k -= n
            raise AssertionError("unreachable")

        chosen = [draw()]
        while len(chosen) < count:
            for _ in range(MAX_PLACEMENT_ATTEMPTS):
                s = draw()
                if all(abs(s - c) >= shot_frames for c in chosen):
                    chosen.append(s)
                    break
            else:
                break
        return sorted(chosen)


def shot_lies_in_single_run(shot: Shot, timeline: AnnotationTimeline) -> bool:
    return any(
        r.phase == shot.phase and r.start_frame <= shot.start_frame and shot.end_frame <= r.end_frame
        for r in timeline.runs
    )
