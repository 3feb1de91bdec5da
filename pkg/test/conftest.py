import numpy as np
import pytest

from models.features import ShotDescriptorSequence
from models.phase import AnnotationTimeline, PhaseLabel, PhaseRun
from models.shot import SHOT_FRAMES, Shot


def build_timeline(video_id, layout, fps=25.0):
    """layout: [(phase code, frames), ...] laid out back to back from frame 0."""
    runs = []
    start = 0
    for code, frames in layout:
        runs.append(PhaseRun(start, start + frames - 1, PhaseLabel.from_name(code)))
        start += frames
    return AnnotationTimeline(video_id=video_id, fps=fps, runs=runs)


def build_sequence(values, phase=PhaseLabel.TROCAR_PLACEMENT, video_id="v01", start_frame=0, stride=1, fps=25.0):
    values = np.asarray(values, dtype=np.float32)
    if values.ndim == 1:
        values = values[None, :]
    shot = Shot(
        video_id=video_id,
        phase=phase,
        start_frame=start_frame,
        num_frames=SHOT_FRAMES,
        elapsed_minutes=start_frame / (fps * 60.0),
        fps=fps,
    )
    offsets = np.arange(values.shape[0], dtype=np.int64) * stride
    return ShotDescriptorSequence(
        shot=shot,
        stride=stride,
        offsets=offsets,
        elapsed_minutes=np.array([shot.frame_elapsed_minutes(int(o)) for o in offsets]),
        descriptors=values,
    )


@pytest.fixture
def make_timeline():
    return build_timeline


@pytest.fixture
def make_sequence():
    return build_sequence


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
