# agents/synthetic_corpus_agent.py
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from scipy.stats import truncnorm
from tqdm import tqdm

from agents.annotation_agent import timeline_to_text
from clients.frame_source import write_frame
from models.config import SyntheticCorpusSpec
from models.features import ShotDescriptorSequence
from models.phase import AnnotationTimeline, PhaseLabel, PhaseRun
from models.shot import SHOT_FRAMES, Shot
from utils.errors import ConfigError
from utils.log import get_logger

logger = get_logger(__name__)

ANNOTATION_DIR = "annotations"
FRAMES_DIR = "frames"
GROUND_TRUTH_FILE = "ground_truth.json"

# blob center as a fraction of (width, height), one per phase
_BLOB_ANCHORS = [
    (0.2, 0.25), (0.5, 0.25), (0.8, 0.25), (0.2, 0.75),
    (0.5, 0.75), (0.8, 0.75), (0.35, 0.5), (0.65, 0.5),
]


class SyntheticCorpusAgent:
    """
    Desk-scale stand-in for the annotated corpus. Phase durations follow the
    per-phase mean/std table (scaled down); every frame carries a phase motif
    (blob position, colour, stripe frequency) so mock features are informative.
    """

    def generate_synthetic_corpus(self, spec: SyntheticCorpusSpec, root: str | Path) -> Dict[str, Any]:
        validate_spec(spec)
        root = Path(root)
        ann_dir = root / ANNOTATION_DIR
        frames_dir = root / FRAMES_DIR
        ann_dir.mkdir(parents=True, exist_ok=True)

        timelines = self.draw_timelines(spec)
        logger.info("🔎 Rendering %d synthetic operations into %s", len(timelines), root)
        videos: Dict[str, Any] = {}
        for v, timeline in enumerate(timelines):
            (ann_dir / f"{timeline.video_id}.txt").write_text(timeline_to_text(timeline), encoding="utf-8")
            rng = np.random.default_rng([spec.seed, v, 1])
            for run in tqdm(timeline.runs, desc=timeline.video_id, unit="phase", leave=False):
                for frame in range(run.start_frame, run.end_frame + 1):
                    write_frame(frames_dir, timeline.video_id, frame, render_frame(run.phase, spec, rng))
            videos[timeline.video_id] = {
                "num_frames": timeline.num_frames,
                "runs": [
                    {"phase": r.phase.code, "start_frame": r.start_frame, "end_frame": r.end_frame}
                    for r in timeline.runs
                ],
            }

        truth = {"spec": asdict(spec), "videos": videos}
        (root / GROUND_TRUTH_FILE).write_text(json.dumps(truth, indent=2, sort_keys=True), encoding="utf-8")
        logger.info("✅ Synthetic corpus ready: %d videos", len(videos))
        return truth

    def draw_timelines(self, spec: SyntheticCorpusSpec) -> List[AnnotationTimeline]:
        """Phase durations from a truncated normal per phase (mean ± 2 std, floored)."""
        validate_spec(spec)
        timelines: List[AnnotationTimeline] = []
        for v in range(spec.num_videos):
            video_id = video_name(v)
            rng = np.random.default_rng([spec.seed, v])
            missing = {PhaseLabel.from_name(c) for c in spec.missing_phases.get(video_id, [])}
            phases = [p for p in PhaseLabel if p not in missing]
            if not spec.time_dependent:
                phases = [phases[i] for i in rng.permutation(len(phases))]

            runs: List[PhaseRun] = []
            start = 0
            for phase in phases:
                frames = self._draw_frames(phase, spec, rng)
                runs.append(PhaseRun(start_frame=start, end_frame=start + frames - 1, phase=phase))
                start += frames
            timelines.append(AnnotationTimeline(video_id=video_id, fps=spec.fps, runs=runs))
        return timelines

    def make_sequences(
        self,
        spec: SyntheticCorpusSpec,
        per_phase: int = 50,
        steps: int = 10,
        stride: int = 25,
        noise: float = 0.3,
    ) -> List[ShotDescriptorSequence]:
        """
        Feature-level corpus: each phase has a prototype drawn at `spec.separation`
        scale, each step adds N(0, noise). With `time_dependent` the shot start
        falls inside the phase's slot of a P1..P8 operation; otherwise anywhere.
        """
        validate_spec(spec)
        rng = np.random.default_rng([spec.seed, 99])
        dim = spec.descriptor_dim
        prototypes = rng.normal(0.0, 1.0, size=(len(PhaseLabel), dim)) * spec.separation

        means = np.array([spec.durations[p.code][0] for p in PhaseLabel], dtype=np.float64)
        slot_start = np.concatenate([[0.0], np.cumsum(means)[:-1]])
        total = float(means.sum())

        sequences: List[ShotDescriptorSequence] = []
        taken: set = set()
        for phase in PhaseLabel:
            for n in range(per_phase):
                if spec.time_dependent:
                    elapsed = slot_start[phase.index] + rng.uniform(0.0, means[phase.index])
                else:
                    elapsed = rng.uniform(0.0, total)
                video_id = video_name(n % max(1, spec.num_videos))
                start_frame = int(round(elapsed * spec.fps * 60.0))
                # shot ids must stay unique
                while (video_id, phase, start_frame) in taken:
                    start_frame += 1
                taken.add((video_id, phase, start_frame))
                shot = Shot(
                    video_id=video_id,
                    phase=phase,
                    start_frame=start_frame,
                    num_frames=SHOT_FRAMES,
                    elapsed_minutes=start_frame / (spec.fps * 60.0),
                    fps=spec.fps,
                )
                offsets = np.arange(steps, dtype=np.int64) * stride
                values = prototypes[phase.index] + rng.normal(0.0, noise, size=(steps, dim))
                sequences.append(
                    ShotDescriptorSequence(
                        shot=shot,
                        stride=stride,
                        offsets=offsets,
                        elapsed_minutes=np.array([shot.frame_elapsed_minutes(int(o)) for o in offsets]),
                        descriptors=values.astype(np.float32),
                    )
                )
        return sequences

    # ----------------------
    # helpers
    # ----------------------

    def _draw_frames(self, phase: PhaseLabel, spec: SyntheticCorpusSpec, rng: np.random.Generator) -> int:
        mean, std = spec.durations[phase.code]
        mean, std = mean * spec.scale, max(std * spec.scale, 1e-6)
        lo = max(mean - 2 * std, 0.0)
        minutes = truncnorm.rvs((lo - mean) / std, 2.0, loc=mean, scale=std, random_state=rng)
        floor = spec.min_phase_seconds / 60.0
        return max(1, int(round(max(float(minutes), floor) * spec.fps * 60.0)))


def video_name(index: int) -> str:
    return f"synth_{index + 1:02d}"


def render_frame(phase: PhaseLabel, spec: SyntheticCorpusSpec, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """RGB uint8 frame: dim striped background plus one bright phase-coloured blob."""
    rng = rng or np.random.default_rng()
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    k = phase.index

    freq = 0.05 + 0.04 * k
    angle = np.pi * k / len(PhaseLabel)
    stripes = 0.5 + 0.5 * np.sin(freq * (xx * np.cos(angle) + yy * np.sin(angle)))
    background = 40.0 + 40.0 * stripes

    ax, ay = _BLOB_ANCHORS[k]
    cx = ax * w + rng.uniform(-2.0, 2.0)
    cy = ay * h + rng.uniform(-2.0, 2.0)
    radius = 0.12 * min(h, w)
    blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * radius**2))

    hue = np.array([np.cos(2 * np.pi * k / 8), np.cos(2 * np.pi * k / 8 + 2.1), np.cos(2 * np.pi * k / 8 + 4.2)])
    colour = 140.0 + 110.0 * hue
    img = background[..., None] + blob[..., None] * (colour[None, None, :] - background[..., None])
    img += rng.normal(0.0, 3.0, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def validate_spec(spec: SyntheticCorpusSpec) -> None:
    if spec.num_videos < 1:
        raise ConfigError("synthetic corpus needs at least one video")
    if spec.scale <= 0 or spec.fps <= 0:
        raise ConfigError("scale and fps must be positive")
    if spec.width < 8 or spec.height < 8:
        raise ConfigError("synthetic frames must be at least 8x8")
    if spec.descriptor_dim < 1:
        raise ConfigError("descriptor_dim must be positive")
    for phase in PhaseLabel:
        if phase.code not in spec.durations:
            raise ConfigError(f"no duration for {phase.code}")
        mean, std = spec.durations[phase.code]
        if mean <= 0 or std < 0:
            raise ConfigError(f"{phase.code} duration must be positive (got {mean} ± {std})")
