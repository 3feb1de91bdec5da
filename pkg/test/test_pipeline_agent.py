import json
import os

import pytest

from agents.config_agent import ConfigAgent
from agents.pipeline_agent import KNN_RESULTS, LSTM_MODEL, LSTM_TRAIN_RESULTS, PipelineAgent, provenance_path
from agents.synthetic_corpus_agent import SyntheticCorpusAgent
from main import main
from models.config import SyntheticCorpusSpec
from utils.errors import ConfigError, StageError

STAGES = 8


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    # 2 fps keeps a 10 s shot at 20 frames; 25 s phases fit two of them
    spec = SyntheticCorpusSpec(num_videos=3, scale=0.001, fps=2.0, width=64, height=48, min_phase_seconds=25.0, seed=1)
    SyntheticCorpusAgent().generate_synthetic_corpus(spec, root)
    return root


def small_config(dataset, out_dir, **extra):
    overrides = {
        "dataset_root": str(dataset),
        "out_dir": str(out_dir),
        "fps": 2.0,
        "mode": "resize_square",
        "per_phase_target": 4,
        "pooling_stride": 5,
        "lstm_stride": 10,
        "train.hidden_size": 4,
        "train.epochs": 2,
        "train.cycles": 2,
        "train.train_per_class": 2,
        "train.batch_size": 8,
        **extra,
    }
    return ConfigAgent().resolve(overrides=overrides)


def test_pipeline_runs_end_to_end(dataset, tmp_path):
    agent = PipelineAgent(small_config(dataset, tmp_path / "out"))
    outputs = agent.run_pipeline()
    assert len(agent.executed) == STAGES and agent.skipped == []
    for path in outputs.values():
        assert path.is_file()

    knn = json.loads(outputs["knn"].read_text())
    assert [r["name"].endswith("+time") for r in knn["rows"]] == [False, True]
    assert knn["rows"][0]["provenance"]["stage"] == "eval-knn"
    assert sum(map(sum, knn["matrices"][0]["counts"])) == 32

    train = json.loads((tmp_path / "out" / LSTM_TRAIN_RESULTS).read_text())
    assert [c["cycle"] for c in train["cycles"]] == [1, 2]
    assert (tmp_path / "out" / "lstm_model.c1.splm").is_file()
    assert (tmp_path / "out" / LSTM_MODEL).is_file()
    assert provenance_path(tmp_path / "out" / KNN_RESULTS).is_file()
    assert "Classification results" in outputs["report_text"].read_text()


def test_rerun_skips_every_stage(dataset, tmp_path):
    config = small_config(dataset, tmp_path / "out")
    PipelineAgent(config).run_pipeline()
    again = PipelineAgent(config)
    again.run_pipeline()
    assert again.executed == [] and len(again.skipped) == STAGES

    forced = PipelineAgent(config, force=True)
    forced.extract_shots()
    assert forced.executed == ["extract-shots"]


def test_changed_config_reruns_the_stage(dataset, tmp_path):
    PipelineAgent(small_config(dataset, tmp_path / "out")).extract_shots()
    other = PipelineAgent(small_config(dataset, tmp_path / "out", seed=99))
    other.extract_shots()
    assert other.executed == ["extract-shots"]


def test_reports_are_identical_across_output_directories(dataset, tmp_path):
    a = PipelineAgent(small_config(dataset, tmp_path / "a")).run_pipeline()
    b = PipelineAgent(small_config(dataset, tmp_path / "b")).run_pipeline()
    assert a["report_json"].read_bytes() == b["report_json"].read_bytes()
    assert a["report_csv"].read_bytes() == b["report_csv"].read_bytes()


def test_up_to_date_stats_skip_the_annotations(dataset, tmp_path, monkeypatch):
    config = small_config(dataset, tmp_path / "out")
    first = PipelineAgent(config).stats()

    def no_reload(self):
        raise AssertionError("annotations reloaded for an up-to-date stage")

    monkeypatch.setattr(PipelineAgent, "load_timelines", no_reload)
    again = PipelineAgent(config)
    assert again.stats() == first
    assert again.skipped == ["stats"]


def test_missing_dataset_root_names_the_path(tmp_path):
    missing = tmp_path / "nowhere"
    agent = PipelineAgent(small_config(missing, tmp_path / "out"))
    with pytest.raises((ConfigError, StageError)) as info:
        agent.extract_shots()
    assert str(missing) in str(info.value)
    assert info.value.exit_code == 2


def test_saliency_preview_writes_map_and_overlay(dataset, tmp_path):
    agent = PipelineAgent(small_config(dataset, tmp_path / "out"))
    map_path, overlay_path = agent.saliency_preview(video_id="synth_01", frame_index=3, patch_side=32)
    assert map_path.is_file() and overlay_path.is_file()
    with pytest.raises(ConfigError):
        agent.saliency_preview()


def test_command_line_exit_codes(dataset, tmp_path):
    assert main(["stats", "--dataset-root", str(tmp_path / "nowhere"), "--out-dir", str(tmp_path / "o")]) == 2
    corrupt = tmp_path / "broken.spfc"
    corrupt.write_bytes(b"not a cache at all")
    args = ["eval-knn", "--cache", str(corrupt), "--out-dir", str(tmp_path / "o"), "--dataset-root", str(dataset)]
    assert main(args) == 3
    with pytest.raises(SystemExit) as info:
        main(["stats", "--no-such-flag"])
    assert info.value.code == 2


@pytest.mark.skipif(
    not os.getenv("SHOTPHASE_M2CAI_ROOT"),
    reason="needs the annotated laparoscopic corpus",
)
def test_real_corpus_statistics(tmp_path):
    config = ConfigAgent().resolve(
        overrides={"dataset_root": os.environ["SHOTPHASE_M2CAI_ROOT"], "out_dir": str(tmp_path)}
    )
    agent = PipelineAgent(config)
    assert len(agent.load_timelines()) == 27
    agent.extract_shots()
    manifest = agent.sampler_agent.load_manifest(tmp_path / "shots.json")
    assert len(manifest.shots) == 400
