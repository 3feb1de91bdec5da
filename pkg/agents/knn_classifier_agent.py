# agents/knn_classifier_agent.py
from __future__ import annotations

from typing import List, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from agents.report_agent import ReportAgent
from models.features import ShotDescriptorSequence
from models.phase import AnnotationTimeline
from models.pooling import DistanceMetric, KnnEvalResult, PooledDescriptor, PoolingMode
from models.shot import Shot
from utils.errors import AlreadyAugmented, ConfigError, DataError, EmptySequence, LengthMismatch
from utils.log import get_logger

logger = get_logger(__name__)


class KnnClassifierAgent:
    """
    Shot-level baseline: pool each descriptor sequence into one vector, optionally
    append the shot's elapsed time, then label every shot by its nearest other shot.
    """

    def __init__(self, report: Optional[ReportAgent] = None):
        self.report = report or ReportAgent()

    def temporal_pool(self, sequence: ShotDescriptorSequence, mode: PoolingMode) -> PooledDescriptor:
        if len(sequence) == 0:
            raise EmptySequence(f"no descriptors for shot {sequence.shot.shot_id}")
        values = np.asarray(sequence.descriptors, dtype=np.float64)
        mode = PoolingMode(mode)
        pooled = values.max(axis=0) if mode == PoolingMode.MAX else values.mean(axis=0)
        return PooledDescriptor(values=pooled, shot=sequence.shot, time_augmented=False)

    def append_elapsed_time(self, desc: PooledDescriptor, shot: Shot, time_scale: float) -> PooledDescriptor:
        if desc.time_augmented:
            raise AlreadyAugmented(f"descriptor for {shot.shot_id} already carries elapsed time")
        if time_scale <= 0:
            raise ConfigError("time_scale must be positive")
        values = np.append(desc.values, shot.elapsed_minutes / time_scale)
        return PooledDescriptor(values=values, shot=desc.shot or shot, time_augmented=True)

    def distance(self, a: np.ndarray, b: np.ndarray, metric: DistanceMetric) -> float:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise LengthMismatch(a.size, b.size)
        return float(_cross_distances(a.reshape(1, -1), b.reshape(1, -1), DistanceMetric(metric))[0, 0])

    def pairwise_distances(self, vectors: np.ndarray, metric: DistanceMetric) -> np.ndarray:
        x = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        return _cross_distances(x, x, DistanceMetric(metric))

    def knn_loo_evaluate(
        self,
        descriptors: Sequence[PooledDescriptor],
        metric: DistanceMetric,
        leave_one_video_out: bool = False,
    ) -> KnnEvalResult:
        if len(descriptors) < 2:
            raise DataError("leave-one-out 1-NN needs at least two descriptors")
        lengths = {d.values.shape[0] for d in descriptors}
        if len(lengths) != 1:
            raise LengthMismatch(min(lengths), max(lengths))
        if any(d.shot is None for d in descriptors):
            raise DataError("every descriptor needs its shot (label)")

        metric = DistanceMetric(metric)
        dist = self.pairwise_distances(np.stack([d.values for d in descriptors]), metric)
        np.fill_diagonal(dist, np.inf)
        if leave_one_video_out:
            videos = np.array([d.shot.video_id for d in descriptors])
            dist[videos[:, None] == videos[None, :]] = np.inf

        predictions = []
        neighbors: List[int] = []
        neighbor_distances: List[float] = []
        for i in range(len(descriptors)):
            j = int(np.argmin(dist[i]))  # first minimum: smallest index wins ties
            if not np.isfinite(dist[i, j]):
                raise DataError(f"no admissible neighbor for {descriptors[i].shot.shot_id}")
            neighbors.append(j)
            neighbor_distances.append(float(dist[i, j]))
            predictions.append(descriptors[j].shot.phase)

        truths = [d.shot.phase for d in descriptors]
        return KnnEvalResult(
            metric=metric,
            predictions=predictions,
            truths=truths,
            neighbor_indices=neighbors,
            neighbor_distances=neighbor_distances,
            shot_ids=[d.shot.shot_id for d in descriptors],
            metrics=self.report.metrics(predictions, truths),
        )

    def run(
        self,
        sequences: Sequence[ShotDescriptorSequence],
        pooling: PoolingMode,
        metric: DistanceMetric,
        time_scale: Optional[float] = None,
        leave_one_video_out: bool = False,
    ) -> KnnEvalResult:
        """Pool, optionally time-augment (when `time_scale` is given) and evaluate."""
        pooled = [self.temporal_pool(s, pooling) for s in sequences]
        if time_scale is not None:
            pooled = [self.append_elapsed_time(p, p.shot, time_scale) for p in pooled]
        result = self.knn_loo_evaluate(pooled, metric, leave_one_video_out=leave_one_video_out)
        logger.info(
            "✅ 1-NN %s/%s%s: accuracy %.3f",
            PoolingMode(pooling).value, DistanceMetric(metric).value,
            " +time" if time_scale is not None else "", result.accuracy,
        )
        return result


def _cross_distances(a: np.ndarray, b: np.ndarray, metric: DistanceMetric) -> np.ndarray:
    """Distances between the rows of `a` and `b`; a zero vector is at cosine distance 1 from everything."""
    if metric == DistanceMetric.EUCLIDEAN:
        return cdist(a, b, "euclidean")
    with np.errstate(invalid="ignore", divide="ignore"):
        d = cdist(a, b, "cosine")
    d[~np.any(a, axis=1), :] = 1.0
    d[:, ~np.any(b, axis=1)] = 1.0
    return np.maximum(d, 0.0)


def resolve_time_scale(
    spec: str | float,
    timelines: Optional[Sequence[AnnotationTimeline]] = None,
    shots: Optional[Sequence[Shot]] = None,
) -> float:
    """
    `auto`: longest operation in the corpus (maps elapsed time into [0, 1]);
    without timelines, the latest shot end. `raw-minutes`: 1. A number: itself.
    """
    if isinstance(spec, (int, float)):
        value = float(spec)
    elif str(spec) == "raw-minutes":
        value = 1.0
    elif str(spec) == "auto":
        if timelines:
            value = max(tl.duration_minutes for tl in timelines)
        elif shots:
            value = max(s.elapsed_minutes + s.num_frames / (s.fps * 60.0) for s in shots)
        else:
            raise ConfigError("time scale 'auto' needs the annotation corpus or the shots")
    else:
        try:
            value = float(spec)
        except ValueError:
            raise ConfigError(f"invalid time scale {spec!r}; use auto, raw-minutes or minutes") from None
    if value <= 0:
        raise ConfigError("time scale must be positive")
    return value
