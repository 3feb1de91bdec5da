import numpy as np
import pytest

from agents.annotation_agent import AnnotationAgent, timeline_to_text
from clients.frame_source import frame_count, write_frame
from models.phase import PhaseLabel, PhaseRun
from utils.errors import ConfigError, EmptyInput, MalformedLine, NonContiguousFrames, UnknownPhase

P1, P2, P3 = PhaseLabel.TROCAR_PLACEMENT, PhaseLabel.PREPARATION, PhaseLabel.CALOT_TRIANGLE_DISSECTION


def test_parse_per_frame_lines():
    agent = AnnotationAgent()
    tl = agent.parse_annotations("0 TrocarPlacement\n1 TrocarPlacement\n2 Preparation", "v01")
    assert tl.runs == [PhaseRun(0, 1, P1), PhaseRun(2, 2, P2)]
    assert tl.num_frames == 3


def test_parse_run_start_lines_and_header():
    agent = AnnotationAgent()
    text = "Frame\tPhase\n0\tTrocarPlacement\n100\tPreparation\n250\tCalotTriangleDissection\n"
    tl = agent.parse_annotations(text, "v02", num_frames=400)
    assert tl.runs == [PhaseRun(0, 99, P1), PhaseRun(100, 249, P2), PhaseRun(250, 399, P3)]


def test_generated_file_round_trips(make_timeline):
    agent = AnnotationAgent()
    original = make_timeline("v03", [("P1", 300), ("P2", 450), ("P3", 250)])
    text = timeline_to_text(original)
    assert len(text.splitlines()) == 1001  # header + 1000 frames
    parsed = agent.parse_annotations(text, "v03")
    assert parsed.runs == original.runs


def test_phase_names_in_every_spelling():
    for name in ("ClippingCutting", "Clipping & Cutting", "clipping_cutting", "P4", "p4"):
        assert PhaseLabel.from_name(name) == PhaseLabel.CLIPPING_CUTTING
    assert PhaseLabel.from_name("Cleaning and Coagulation") == PhaseLabel.CLEANING_COAGULATION


@pytest.mark.parametrize(
    "text, error",
    [
        ("", MalformedLine),
        ("Frame Phase\n", MalformedLine),
        ("0 TrocarPlacement\nx TrocarPlacement\n", MalformedLine),
        ("0\n", MalformedLine),
        ("0 Appendectomy\n", UnknownPhase),
        ("1 TrocarPlacement\n", NonContiguousFrames),
        ("0 TrocarPlacement\n2 TrocarPlacement\n", NonContiguousFrames),
        ("0 TrocarPlacement\n1 Preparation\n1 Preparation\n", NonContiguousFrames),
    ],
)
def test_parse_rejects_bad_input(text, error):
    with pytest.raises(error):
        AnnotationAgent().parse_annotations(text, "bad")


def test_malformed_line_reports_line_number():
    with pytest.raises(MalformedLine) as info:
        AnnotationAgent().parse_annotations("0 TrocarPlacement\n1 TrocarPlacement\nabc Preparation\n", "bad")
    assert info.value.line_no == 3


def test_statistics_single_sample(make_timeline):
    stats = AnnotationAgent().phase_statistics([make_timeline("v01", [("P1", 4500), ("P2", 100)])])
    s = stats[P1]
    assert (s.occurrences, s.mean, s.min, s.max, s.std) == (1, 3.0, 3.0, 3.0, 0.0)
    assert stats[PhaseLabel.GALLBLADDER_RETRACTION].occurrences == 0
    assert stats[PhaseLabel.GALLBLADDER_RETRACTION].mean is None


def test_statistics_two_operations(make_timeline):
    timelines = [
        make_timeline("v01", [("P1", 100), ("P3", 3000)]),
        make_timeline("v02", [("P1", 100), ("P3", 6000)]),
    ]
    s = AnnotationAgent().phase_statistics(timelines)[P3]
    assert s.mean == pytest.approx(3.0, rel=1e-12)
    assert s.min == pytest.approx(2.0, rel=1e-12)
    assert s.max == pytest.approx(4.0, rel=1e-12)
    assert s.std == pytest.approx(2.0**0.5, rel=1e-12)  # sample std of {2, 4}


def test_statistics_sum_repeated_runs(make_timeline):
    tl = make_timeline("v01", [("P7", 1500), ("P8", 100), ("P7", 1500)])
    assert AnnotationAgent().phase_statistics([tl])[PhaseLabel.CLEANING_COAGULATION].mean == pytest.approx(2.0)


def test_overlap_profile_counts_concurrent_phases(make_timeline):
    agent = AnnotationAgent()
    # P1 over [0, 2) min in one, P2 over [1, 3) min in the other
    a = make_timeline("a", [("P1", 3000), ("P3", 1500)])
    b = make_timeline("b", [("P3", 1500), ("P2", 3000)])
    profile = agent.overlap_profile([a, b], bin_minutes=0.5)
    minute_1_5 = int(1.5 / 0.5)  # bin [1.5, 2.0), centered at 1.75
    assert profile.counts[minute_1_5] == 2
    assert profile.spans[P1] == (0.0, 2.0)
    assert profile.spans[P2] == (1.0, 3.0)


def test_overlap_profile_single_timeline_is_one(make_timeline):
    tl = make_timeline("a", [("P1", 1500), ("P2", 1500), ("P3", 1500)])
    profile = AnnotationAgent().overlap_profile([tl], bin_minutes=1.0)
    assert profile.counts == [1, 1, 1]


def test_overlap_profile_rejects_bad_bin(make_timeline):
    with pytest.raises(ConfigError):
        AnnotationAgent().overlap_profile([make_timeline("a", [("P1", 10)])], 0)
    with pytest.raises(EmptyInput):
        AnnotationAgent().overlap_profile([], 1.0)


def test_load_corpus_sorted_by_video(tmp_path, make_timeline):
    for vid in ("v10", "v02"):
        (tmp_path / f"{vid}.txt").write_text(timeline_to_text(make_timeline(vid, [("P1", 5)])))
    timelines = AnnotationAgent().load_corpus(tmp_path)
    assert [t.video_id for t in timelines] == ["v02", "v10"]


def test_load_corpus_missing_directory(tmp_path):
    with pytest.raises(ConfigError):
        AnnotationAgent().load_corpus(tmp_path / "nope")


def test_load_corpus_stretches_the_last_run_to_the_video_end(tmp_path):
    (tmp_path / "v01.txt").write_text("0 Preparation\n100 CalotTriangleDissection\n")
    agent = AnnotationAgent()
    assert agent.load_corpus(tmp_path)[0].runs[-1] == PhaseRun(100, 100, P3)

    tl = agent.load_corpus(tmp_path, frame_counts={"v01": 500})[0]
    assert tl.runs == [PhaseRun(0, 99, P2), PhaseRun(100, 499, P3)]
    assert tl.num_frames == 500

    # fewer frames than annotated keeps the annotation as written
    short = agent.load_corpus(tmp_path, frame_counts={"v01": 50, "v99": 10})[0]
    assert short.num_frames == 101


def test_frame_count_of_a_frame_directory(tmp_path):
    write_frame(tmp_path, "v01", 0, np.zeros((4, 4, 3), dtype=np.uint8))
    write_frame(tmp_path, "v01", 41, np.zeros((4, 4, 3), dtype=np.uint8))
    assert frame_count(tmp_path, "v01") == 42
    assert frame_count(tmp_path, "v02") is None
