# agents/pipeline_agent.py
from __future__ import annotations

import json
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from agents.annotation_agent import AnnotationAgent
from agents.config_agent import ConfigAgent
from agents.feature_extractor_agent import FeatureExtractorAgent, load_cache
from agents.knn_classifier_agent import KnnClassifierAgent, resolve_time_scale
from agents.lstm_trainer_agent import LstmTrainerAgent
from agents.report_agent import REPORT_FORMATS, ReportAgent
from agents.saliency_agent import SaliencyAgent
from agents.shot_sampler_agent import ShotSamplerAgent
from agents.synthetic_corpus_agent import ANNOTATION_DIR, FRAMES_DIR, SyntheticCorpusAgent
from clients.feature_provider import make_provider
from clients.frame_source import frame_count, open_source, read_image, write_image
from models.config import PipelineConfig, SyntheticCorpusSpec
from models.features import ReceptiveFieldMode, ShotDescriptorSequence, backbone
from models.metrics import NamedMatrix, ReportRow
from models.phase import AnnotationTimeline, OverlapProfile, PhaseLabel, PhaseStats, PhaseSummary
from models.pooling import DistanceMetric, PoolingMode
from utils.errors import ConfigError, DataError, ShotPhaseError, StageError
from utils.log import get_logger

logger = get_logger(__name__)

STATS_FILE = "stats.json"
SHOTS_FILE = "shots.json"
POOL_CACHE = "features_pool.spfc"
LSTM_CACHE = "features_lstm.spfc"
KNN_RESULTS = "knn_results.json"
LSTM_MODEL = "lstm_model.splm"
LSTM_TRAIN_RESULTS = "lstm_train.json"
LSTM_EVAL_RESULTS = "lstm_eval.json"
REPORT_STEM = "report"
OVERLAP_BIN_MINUTES = 1.0

_VERSIONED = ("numpy", "scipy", "opencv-python-headless", "scikit-learn", "pandas", "python-dotenv")


class PipelineAgent:
    """
    Orchestrator: stats -> extract-shots -> extract-features -> eval-knn /
    train-lstm -> eval-lstm -> report. Each stage writes one artifact plus
    `<artifact>.provenance.json`, and is skipped while its output is newer
    than its inputs under the same config (unless `force`).
    """

    def __init__(self, config: PipelineConfig, force: bool = False):
        self.config_agent = ConfigAgent()
        self.config = self.config_agent.normalize(config)
        self.force = force
        self.config_hash = self.config_agent.config_hash(self.config)

        self.annotation_agent = AnnotationAgent()
        self.sampler_agent = ShotSamplerAgent()
        self.knn_agent = KnnClassifierAgent()
        self.lstm_agent = LstmTrainerAgent()
        self.report_agent = ReportAgent()
        self.executed: List[str] = []
        self.skipped: List[str] = []

    # ----------------------
    # locations
    # ----------------------

    @property
    def out_dir(self) -> Path:
        return Path(self.config.out_dir)

    @property
    def annotations_dir(self) -> Path:
        root = self._dataset_root()
        return root / ANNOTATION_DIR if (root / ANNOTATION_DIR).is_dir() else root

    @property
    def frames_dir(self) -> Path:
        if self.config.frames_root:
            return Path(self.config.frames_root)
        root = self._dataset_root()
        return root / FRAMES_DIR if (root / FRAMES_DIR).is_dir() else root

    def artifact(self, name: str) -> Path:
        return self.out_dir / name

    # ----------------------
    # stages
    # ----------------------

    def stats(self) -> str:
        out = self.artifact(STATS_FILE)
        computed: Dict[str, Any] = {}

        def work() -> None:
            timelines = self.load_timelines()
            stats = self.annotation_agent.phase_statistics(timelines)
            profile = self.annotation_agent.overlap_profile(timelines, OVERLAP_BIN_MINUTES)
            computed.update(stats=stats, profile=profile)
            doc = {
                "videos": len(timelines),
                "phases": {
                    p.code: {"occurrences": s.occurrences, "mean": s.mean, "std": s.std, "min": s.min, "max": s.max}
                    for p, s in stats.phases.items()
                },
                "overlap": {
                    "bin_minutes": profile.bin_minutes,
                    "counts": profile.counts,
                    "spans": {p.code: list(span) for p, span in profile.spans.items()},
                },
            }
            _write_json(out, doc)

        if self._stage("stats", out, self._annotation_files(), work):
            return self.report_agent.render_stats(computed["stats"], computed["profile"])
        return self.report_agent.render_stats(*_stats_from_doc(json.loads(out.read_text(encoding="utf-8"))))

    def extract_shots(self) -> Path:
        out = self.artifact(SHOTS_FILE)

        def work() -> None:
            manifest = self.sampler_agent.extract_shots(
                self.load_timelines(),
                seed=self.config.seed,
                per_video_per_phase=self.config.per_video_per_phase,
                shot_seconds=self.config.shot_seconds,
                per_phase_target=self.config.per_phase_target,
            )
            self.sampler_agent.save_manifest(manifest, out)

        self._stage("extract-shots", out, self._annotation_files(), work)
        return out

    def extract_features(self, stride: Optional[int] = None, out: Optional[Path] = None,
                         manifest_path: Optional[Path] = None) -> Path:
        stride = int(stride or self.config.pooling_stride)
        out = Path(out or self.artifact(POOL_CACHE if stride == self.config.pooling_stride else LSTM_CACHE))
        manifest_path = Path(manifest_path or self.artifact(SHOTS_FILE))

        def work() -> None:
            manifest = self.sampler_agent.load_manifest(manifest_path)
            if not manifest.shots:
                raise DataError(f"shot manifest {manifest_path} lists no shots")
            provider = make_provider(self.config.provider, seed=self.config.seed)
            extractor = FeatureExtractorAgent(provider, self.config.saliency, threads=self.config.threads)
            frames = self.frames_dir
            sequences = extractor.run(
                manifest.shots,
                lambda vid: open_source(frames, vid),
                ReceptiveFieldMode(self.config.mode),
                backbone(self.config.backbone),
                stride,
            )
            extractor.write_cache(sequences, out)

        self._stage(f"extract-features (stride {stride})", out, [manifest_path], work)
        return out

    def eval_knn(self, cache: Optional[Path] = None, out: Optional[Path] = None) -> Path:
        cache = Path(cache or self.artifact(POOL_CACHE))
        out = Path(out or self.artifact(KNN_RESULTS))

        def work() -> None:
            sequences = self._read_cache(cache)
            pooling = PoolingMode(self.config.pooling)
            metric = DistanceMetric(self.config.metric)
            lovo = self.config.leave_one_video_out
            base = f"1-NN {self.config.backbone}/{self.config.mode}/{pooling.value}/{metric.value}"

            rows: List[ReportRow] = []
            settings: List[tuple] = [(None, base)]
            if self.config.with_time:
                scale = self.time_scale(sequences)
                settings.append((scale, base + " +time"))
            details: Dict[str, Any] = {}
            for scale, name in settings:
                result = self.knn_agent.run(sequences, pooling, metric, time_scale=scale, leave_one_video_out=lovo)
                rows.append(
                    ReportRow(name, result.metrics.macro, result.metrics.micro_accuracy, provenance=self._row_provenance("eval-knn"))
                )
                details[name] = {
                    "time_scale": scale,
                    "per_class": result.metrics.to_dict()["per_class"],
                    "predictions": {sid: p.code for sid, p in zip(result.shot_ids, result.predictions)},
                }
                # the configured setting comes last; its matrix is the one reported
                matrix = NamedMatrix(f"Confusion, {name}", result.metrics.confusion, self._row_provenance("eval-knn"))
            _write_json(out, self.report_agent.result_document(rows, [matrix], extra={"details": details}))

        self._stage("eval-knn", out, [cache], work)
        return out

    def train_lstm(self, cache: Optional[Path] = None, out: Optional[Path] = None) -> Path:
        cache = Path(cache or self.artifact(LSTM_CACHE))
        out = Path(out or self.artifact(LSTM_MODEL))
        results = out.with_name(LSTM_TRAIN_RESULTS) if out.name == LSTM_MODEL else out.with_suffix(".json")

        def work() -> None:
            sequences = self._read_cache(cache)
            cfg = self.config.train
            shots = [s.shot for s in sequences]
            splits = self.lstm_agent.make_splits(shots, cfg.seed, cfg.cycles, cfg.train_per_class)
            scale = self.time_scale(sequences) if self.config.with_time else 1.0
            report = self.lstm_agent.train(sequences, splits, cfg, with_time=self.config.with_time, time_scale=scale)

            for c in report.cycles:
                self.lstm_agent.save_model(c.model, _cycle_path(out, c.cycle), c.test_shot_ids)
            final = report.cycles[-1]
            self.lstm_agent.save_model(final.model, out, final.test_shot_ids)

            name = f"LSTM {self.config.backbone}/{self.config.mode}" + (" +time" if self.config.with_time else "")
            micro = sum(c.micro_accuracy for c in report.cycles) / len(report.cycles)
            row = ReportRow(name, report.mean, micro, std=report.std, provenance=self._row_provenance("train-lstm"))
            matrix = NamedMatrix(
                f"Confusion, {name} (pooled over {len(report.cycles)} cycles)",
                report.pooled_confusion,
                self._row_provenance("train-lstm"),
            )
            cycles = [
                {
                    "cycle": c.cycle,
                    "metrics": c.metrics.to_dict(),
                    "micro_accuracy": c.micro_accuracy,
                    "initial_loss": c.model.initial_loss,
                    "loss_trace": c.model.loss_trace,
                    "train_shot_ids": splits[c.cycle - 1][0],
                    "test_shot_ids": c.test_shot_ids,
                    "predictions": c.predictions,
                    "model": _cycle_path(out, c.cycle).name,
                }
                for c in report.cycles
            ]
            _write_json(results, self.report_agent.result_document([row], [matrix], extra={"cycles": cycles, "time_scale": scale}))

        self._stage("train-lstm", out, [cache], work, extra_outputs=[results])
        return results

    def eval_lstm(self, model_path: Optional[Path] = None, cache: Optional[Path] = None,
                  out: Optional[Path] = None) -> Path:
        model_path = Path(model_path or self.artifact(LSTM_MODEL))
        cache = Path(cache or self.artifact(LSTM_CACHE))
        out = Path(out or self.artifact(LSTM_EVAL_RESULTS))

        def work() -> None:
            model, test_ids = self.lstm_agent.load_model(model_path)
            sequences = self._read_cache(cache)
            result, ids, preds = self.lstm_agent.evaluate(model, sequences, test_ids or None)
            name = f"LSTM eval, cycle {model.cycle}" + (" +time" if model.with_time else "")
            row = ReportRow(name, result.macro, result.micro_accuracy, provenance=self._row_provenance("eval-lstm"))
            matrix = NamedMatrix(f"Confusion, {name}", result.confusion, self._row_provenance("eval-lstm"))
            extra = {"predictions": {i: p.code for i, p in zip(ids, preds)}, "per_class": result.to_dict()["per_class"]}
            _write_json(out, self.report_agent.result_document([row], [matrix], extra=extra))

        self._stage("eval-lstm", out, [model_path, cache], work)
        return out

    def report(self, inputs: Optional[Sequence[Path]] = None, fmt: Optional[str] = None) -> Dict[str, Path]:
        if inputs:
            paths = [Path(p) for p in inputs]
        else:
            paths = [self.artifact(n) for n in (KNN_RESULTS, LSTM_TRAIN_RESULTS, LSTM_EVAL_RESULTS)]
            paths = [p for p in paths if p.is_file()]
        if not paths:
            raise ConfigError(f"no result files to report under {self.out_dir}")
        formats = [fmt] if fmt else list(REPORT_FORMATS)
        outputs = {f: self.artifact(f"{REPORT_STEM}.{'txt' if f == 'text' else f}") for f in formats}

        def work() -> None:
            rows, matrices = self.report_agent.load_results(paths)
            for f, path in outputs.items():
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(self.report_agent.render_report(rows, matrices, fmt=f) + "\n", encoding="utf-8")

        self._stage("report", outputs[formats[-1]], paths, work, extra_outputs=list(outputs.values()))
        return outputs

    def saliency_preview(
        self,
        image: Optional[Path] = None,
        video_id: Optional[str] = None,
        frame_index: Optional[int] = None,
        out: Optional[Path] = None,
        patch_side: Optional[int] = None,
    ) -> Tuple[Path, Path]:
        """Writes the 8-bit map and an overlay with the patch outline; returns (map, overlay)."""
        if image is not None:
            frame = read_image(image)
            stem = Path(image).stem
        elif video_id is not None and frame_index is not None:
            with open_source(self.frames_dir, video_id) as source:
                frame = source.read_frame(frame_index)
            stem = f"{video_id}_{frame_index:08d}"
        else:
            raise ConfigError("saliency preview needs an image path or a video id and frame index")

        out = Path(out or self.artifact(f"saliency_{stem}.png"))
        agent = SaliencyAgent(self.config.saliency)
        side = int(patch_side or backbone(self.config.backbone).input_side)
        resized = agent.resize_keep_aspect(frame, side)
        saliency = agent.compute_saliency(resized)
        maxima = agent.top_local_maxima(saliency, k=5, neighborhood=9)
        patch = agent.select_patch(maxima, resized.shape[1], resized.shape[0], side)

        gray = np.round(saliency * 255.0).astype(np.uint8)
        map_path = write_image(out, np.repeat(gray[..., None], 3, axis=2))
        overlay_path = write_image(out.with_name(out.stem + "_overlay" + out.suffix),
                                   agent.overlay(resized, saliency, patch, maxima))
        logger.info("✅ Saliency preview written to %s (patch at %d,%d)", out, patch.top_left_x, patch.top_left_y)
        return map_path, overlay_path

    def synth(self, spec: SyntheticCorpusSpec, root: Optional[Path] = None) -> Path:
        root = Path(root or self.config.dataset_root)
        SyntheticCorpusAgent().generate_synthetic_corpus(spec, root)
        return root

    def run_pipeline(self) -> Dict[str, Path]:
        logger.info("🔎 Running pipeline (config %s, seed %d)", self.config_hash[:12], self.config.seed)
        self.stats()
        self.extract_shots()
        pool_cache = self.extract_features(self.config.pooling_stride, self.artifact(POOL_CACHE))
        knn = self.eval_knn(pool_cache)
        lstm_cache = self.extract_features(self.config.lstm_stride, self.artifact(LSTM_CACHE))
        trained = self.train_lstm(lstm_cache)
        evaluated = self.eval_lstm(self.artifact(LSTM_MODEL), lstm_cache)
        reports = self.report([knn, trained, evaluated])
        logger.info("✅ Pipeline done: %d stages run, %d skipped", len(self.executed), len(self.skipped))
        return {"knn": knn, "lstm_train": trained, "lstm_eval": evaluated, **{f"report_{k}": v for k, v in reports.items()}}

    # ----------------------
    # shared inputs
    # ----------------------

    def load_timelines(self) -> List[AnnotationTimeline]:
        counts = {p.stem: frame_count(self.frames_dir, p.stem) for p in self._annotation_files()}
        return self.annotation_agent.load_corpus(self.annotations_dir, fps=self.config.fps, frame_counts=counts)

    def time_scale(self, sequences: Sequence[ShotDescriptorSequence]) -> float:
        timelines = None
        if str(self.config.time_scale) == "auto" and Path(self.config.dataset_root).is_dir():
            try:
                timelines = self.load_timelines()
            except ShotPhaseError:
                logger.warning("⚠️ Annotations unavailable; time scale falls back to the latest shot end")
        return resolve_time_scale(self.config.time_scale, timelines, [s.shot for s in sequences])

    # ----------------------
    # helpers
    # ----------------------

    def _dataset_root(self) -> Path:
        root = Path(self.config.dataset_root)
        if not root.is_dir():
            raise ConfigError(f"dataset root not found: {root.resolve()}")
        return root

    def _annotation_files(self) -> List[Path]:
        return sorted(self.annotations_dir.glob("*.txt"))

    def _read_cache(self, cache: Path) -> List[ShotDescriptorSequence]:
        return load_cache(cache, fps=self.config.fps)

    def _row_provenance(self, stage: str) -> Dict[str, Any]:
        return {"stage": stage, "config_hash": self.config_hash, "seed": self.config.seed}

    def _stage(
        self,
        name: str,
        output: Path,
        inputs: Sequence[Path],
        work: Callable[[], None],
        extra_outputs: Sequence[Path] = (),
    ) -> bool:
        if not self.force and self._up_to_date(output, inputs, extra_outputs):
            logger.info("⏭️ %s: %s is up to date", name, output)
            self.skipped.append(name)
            return False

        logger.info("🔎 %s -> %s", name, output)
        started = _now()
        try:
            work()
        except StageError:
            raise
        except ShotPhaseError as e:
            logger.error("❌ %s failed: %s", name, e)
            raise StageError(name, e) from e
        except OSError as e:
            logger.error("❌ %s failed: %s", name, e)
            raise StageError(name, DataError(str(e))) from e

        _write_json(
            provenance_path(output),
            {
                "stage": name,
                "config_hash": self.config_hash,
                "config": self.config_agent.to_dict(self.config),
                "seed": self.config.seed,
                "versions": package_versions(),
                "inputs": [str(p) for p in inputs],
                "outputs": [str(output), *[str(p) for p in extra_outputs if p != output]],
                "started": started,
                "finished": _now(),
            },
        )
        self.executed.append(name)
        return True

    def _up_to_date(self, output: Path, inputs: Sequence[Path], extra_outputs: Sequence[Path]) -> bool:
        outputs = [output, *extra_outputs]
        prov = provenance_path(output)
        if not all(p.is_file() for p in outputs) or not prov.is_file():
            return False
        try:
            recorded = json.loads(prov.read_text(encoding="utf-8")).get("config_hash")
        except ValueError:
            return False
        if recorded != self.config_hash:
            return False
        newest_input = max((p.stat().st_mtime for p in inputs if p.is_file()), default=0.0)
        return min(p.stat().st_mtime for p in outputs) >= newest_input


def provenance_path(artifact: Path) -> Path:
    return artifact.with_name(artifact.name + ".provenance.json")


def package_versions() -> Dict[str, str]:
    versions = {}
    for name in _VERSIONED:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def _cycle_path(model_path: Path, cycle: int) -> Path:
    return model_path.with_name(f"{model_path.stem}.c{cycle}{model_path.suffix}")


def _phase_of(code: str) -> PhaseLabel:
    return PhaseLabel(int(code.lstrip("P")))


def _stats_from_doc(doc: Dict[str, Any]) -> Tuple[PhaseStats, OverlapProfile]:
    """Inverse of the stats stage's JSON layout."""
    stats = PhaseStats(phases={_phase_of(code): PhaseSummary(**s) for code, s in doc["phases"].items()})
    overlap = doc["overlap"]
    profile = OverlapProfile(
        bin_minutes=float(overlap["bin_minutes"]),
        counts=[int(c) for c in overlap["counts"]],
        spans={_phase_of(code): (float(lo), float(hi)) for code, (lo, hi) in overlap["spans"].items()},
    )
    return stats, profile


def _write_json(path: Path, doc: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")
