# agents/annotation_agent.py
from __future__ import annotations

import math
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from models.phase import (
    DEFAULT_FPS,
    AnnotationTimeline,
    OverlapProfile,
    PhaseLabel,
    PhaseRun,
    PhaseStats,
    PhaseSummary,
)
from utils.errors import ConfigError, EmptyInput, MalformedLine, NonContiguousFrames
from utils.log import get_logger

logger = get_logger(__name__)


class AnnotationAgent:
    """
    Reads frame-level phase annotations and summarizes them:
    per-phase duration statistics and the elapsed-time overlap profile.
    """

    def parse_annotations(
        self,
        text: str,
        video_id: str,
        fps: float = DEFAULT_FPS,
        num_frames: Optional[int] = None,
    ) -> AnnotationTimeline:
        """
        Accepts `<frame> <phase>` lines, either one per frame or one per run start.
        A single non-numeric header line is tolerated before the first entry.
        """
        entries: List[Tuple[int, PhaseLabel, int]] = []
        header_seen = False
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(None, 1)
            try:
                frame = int(parts[0])
            except ValueError:
                if not entries and not header_seen:
                    header_seen = True
                    continue
                raise MalformedLine(line_no, f"frame index {parts[0]!r} is not an integer") from None
            if len(parts) < 2 or not parts[1].strip():
                raise MalformedLine(line_no, "missing phase name")
            entries.append((frame, PhaseLabel.from_name(parts[1].strip()), line_no))

        if not entries:
            raise MalformedLine(0, "no annotation entries")

        runs = self._entries_to_runs(entries, num_frames)
        return AnnotationTimeline(video_id=video_id, fps=fps, runs=runs)

    def load_corpus(
        self,
        root: str | Path,
        fps: float = DEFAULT_FPS,
        frame_counts: Optional[Mapping[str, Optional[int]]] = None,
    ) -> List[AnnotationTimeline]:
        """
        Every `*.txt` in `root` is one operation; the file stem is the video id.
        `frame_counts` (video id -> total frames) stretches the last run to the end
        of the video; run-start files only say where that run begins.
        """
        root = Path(root)
        if not root.is_dir():
            raise ConfigError(f"annotation directory not found: {root}")
        files = sorted(root.glob("*.txt"))
        if not files:
            raise EmptyInput(f"no annotation files (*.txt) in {root}")
        frame_counts = frame_counts or {}
        timelines = []
        for path in files:
            text = path.read_text(encoding="utf-8")
            timeline = self.parse_annotations(text, path.stem, fps)
            total = frame_counts.get(path.stem)
            if total is not None and total > timeline.num_frames:
                timeline = self.parse_annotations(text, path.stem, fps, num_frames=total)
            elif total is not None and total < timeline.num_frames:
                logger.warning(
                    "⚠️ %s is annotated up to frame %d but only %d frames exist",
                    path.stem, timeline.num_frames - 1, total,
                )
            timelines.append(timeline)
        logger.info("✅ Loaded %d annotated operations from %s", len(timelines), root)
        return timelines

    def phase_statistics(self, timelines: Sequence[AnnotationTimeline]) -> PhaseStats:
        if not timelines:
            raise EmptyInput("phase statistics need at least one timeline")

        durations: Dict[PhaseLabel, List[float]] = {p: [] for p in PhaseLabel}
        for tl in timelines:
            for phase in PhaseLabel:
                frames = tl.phase_frames(phase)
                if frames > 0:
                    durations[phase].append(frames / tl.frames_per_minute)

        stats = PhaseStats()
        for phase, values in durations.items():
            if not values:
                stats.phases[phase] = PhaseSummary(occurrences=0)
                continue
            arr = np.asarray(values, dtype=np.float64)
            stats.phases[phase] = PhaseSummary(
                occurrences=len(values),
                mean=float(arr.mean()),
                std=float(arr.std(ddof=1)) if len(values) > 1 else 0.0,
                min=float(arr.min()),
                max=float(arr.max()),
            )
        return stats

    def overlap_profile(self, timelines: Sequence[AnnotationTimeline], bin_minutes: float) -> OverlapProfile:
        """Distinct phases present, across the corpus, at each bin's center instant."""
        if bin_minutes <= 0:
            raise ConfigError("bin_minutes must be positive")
        if not timelines:
            raise EmptyInput("overlap profile needs at least one timeline")

        longest = max(tl.duration_minutes for tl in timelines)
        num_bins = max(1, math.ceil(longest / bin_minutes))
        centers = (np.arange(num_bins) + 0.5) * bin_minutes

        present = np.zeros((num_bins, len(PhaseLabel)), dtype=bool)
        spans: Dict[PhaseLabel, Tuple[float, float]] = {}
        for tl in timelines:
            fpm = tl.frames_per_minute
            for run in tl.runs:
                start = run.start_frame / fpm
                end = (run.end_frame + 1) / fpm
                present[:, run.phase.index] |= (centers >= start) & (centers < end)
                lo, hi = spans.get(run.phase, (start, end))
                spans[run.phase] = (min(lo, start), max(hi, end))

        counts = present.sum(axis=1).astype(int).tolist()
        return OverlapProfile(bin_minutes=bin_minutes, counts=counts, spans=dict(sorted(spans.items())))

    # ----------------------
    # helpers
    # ----------------------

    def _entries_to_runs(
        self, entries: List[Tuple[int, PhaseLabel, int]], num_frames: Optional[int]
    ) -> List[PhaseRun]:
        first_frame = entries[0][0]
        if first_frame != 0:
            raise NonContiguousFrames(first_frame)

        # (start, phase) of each run; a repeated phase must continue frame by frame,
        # a phase change may jump (run-start notation)
        starts: List[Tuple[int, PhaseLabel]] = [(0, entries[0][1])]
        prev_frame = 0
        for frame, phase, _line_no in entries[1:]:
            if frame <= prev_frame:
                raise NonContiguousFrames(frame)
            if phase == starts[-1][1]:
                if frame != prev_frame + 1:
                    raise NonContiguousFrames(prev_frame + 1)
            else:
                starts.append((frame, phase))
            prev_frame = frame

        last_frame = prev_frame
        if num_frames is not None:
            if num_frames - 1 < last_frame:
                raise NonContiguousFrames(num_frames)
            last_frame = num_frames - 1

        runs: List[PhaseRun] = []
        for i, (start, phase) in enumerate(starts):
            end = starts[i + 1][0] - 1 if i + 1 < len(starts) else last_frame
            runs.append(PhaseRun(start_frame=start, end_frame=end, phase=phase))
        return runs


def timeline_to_text(timeline: AnnotationTimeline, header: bool = True) -> str:
    """Per-frame annotation text, the format `parse_annotations` reads back."""
    lines = ["Frame\tPhase"] if header else []
    for run in timeline.runs:
        name = run.phase.name.title().replace("_", "")
        lines.extend(f"{f}\t{name}" for f in range(run.start_frame, run.end_frame + 1))
    return "\n".join(lines) + "\n"
