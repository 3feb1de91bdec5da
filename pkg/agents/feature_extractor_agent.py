# agents/feature_extractor_agent.py
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import cv2
import numpy as np
from tqdm import tqdm

from agents.saliency_agent import SaliencyAgent
from clients.feature_provider import FeatureProvider
from clients.frame_source import FrameSource
from models.features import BackboneSpec, ProviderManifest, ReceptiveFieldMode, ShotDescriptorSequence
from models.saliency import LogGaborBankConfig
from models.shot import Shot
from utils.binary_io import read_cache, write_cache
from utils.errors import ConfigError, DataError, DimensionMismatch, EmptyImage, ProviderFailure
from utils.log import get_logger

logger = get_logger(__name__)


class FeatureExtractorAgent:
    """
    Turns shot frames into backbone descriptors: picks the receptive field
    (warped frame, center crop or salient patch), normalizes, calls the provider.
    """

    def __init__(
        self,
        provider: FeatureProvider,
        saliency_config: Optional[LogGaborBankConfig] = None,
        threads: int = 1,
    ):
        self.provider = provider
        self.saliency = SaliencyAgent(saliency_config)
        self.threads = max(1, int(threads))

    def preprocess(
        self,
        frame: np.ndarray,
        mode: ReceptiveFieldMode,
        backbone: BackboneSpec,
        saliency_config: Optional[LogGaborBankConfig] = None,
    ) -> np.ndarray:
        if frame is None or frame.size == 0:
            raise EmptyImage("cannot preprocess an empty frame")
        side = backbone.input_side
        mode = ReceptiveFieldMode(mode)
        if mode == ReceptiveFieldMode.RESIZE_SQUARE:
            if frame.shape[:2] == (side, side):
                return frame.copy()
            return cv2.resize(frame, (side, side), interpolation=cv2.INTER_LINEAR)

        resized = self.saliency.resize_keep_aspect(frame, side)
        h, w = resized.shape[:2]
        if mode == ReceptiveFieldMode.CENTER_CROP:
            patch = self.saliency.select_patch([], w, h, side)
        else:
            saliency_map = self.saliency.compute_saliency(resized, saliency_config)
            maxima = self.saliency.top_local_maxima(saliency_map, k=5, neighborhood=9)
            patch = self.saliency.select_patch(maxima, w, h, side)
        return self.saliency.crop(resized, patch)

    def extract_descriptor(self, image: np.ndarray, backbone: BackboneSpec,
                           provider: Optional[FeatureProvider] = None) -> np.ndarray:
        provider = provider or self.provider
        side = backbone.input_side
        if image.shape[:2] != (side, side):
            raise DimensionMismatch(image.shape[0], side, what="image side")
        tensor = normalize_image(image, provider.manifest)
        try:
            values = provider.describe(backbone, tensor)
        except ProviderFailure:
            raise
        except Exception as e:
            raise ProviderFailure(f"{provider.name} provider failed: {e}") from e
        values = np.asarray(values, dtype=np.float32).reshape(-1)
        if values.shape[0] != backbone.descriptor_dim:
            raise DimensionMismatch(values.shape[0], backbone.descriptor_dim)
        if not np.isfinite(values).all():
            raise ProviderFailure(f"{provider.name} provider returned non-finite values")
        return values

    def extract_sequence(
        self,
        shot: Shot,
        source: FrameSource,
        mode: ReceptiveFieldMode,
        backbone: BackboneSpec,
        stride: int,
        provider: Optional[FeatureProvider] = None,
        saliency_config: Optional[LogGaborBankConfig] = None,
    ) -> ShotDescriptorSequence:
        if stride < 1:
            raise ConfigError("stride must be a positive number of frames")
        offsets = np.arange(0, shot.num_frames, stride, dtype=np.int64)

        def one(offset: int) -> np.ndarray:
            frame = source.read_frame(shot.start_frame + int(offset))
            image = self.preprocess(frame, mode, backbone, saliency_config)
            return self.extract_descriptor(image, backbone, provider)

        # map() hands results back in offset order whatever the completion order
        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                descriptors = list(pool.map(one, offsets))
        else:
            descriptors = [one(o) for o in offsets]

        return ShotDescriptorSequence(
            shot=shot,
            stride=stride,
            offsets=offsets,
            elapsed_minutes=np.array([shot.frame_elapsed_minutes(int(o)) for o in offsets], dtype=np.float64),
            descriptors=np.stack(descriptors).astype(np.float32),
        )

    def run(
        self,
        shots: Sequence[Shot],
        source_for: Callable[[str], FrameSource],
        mode: ReceptiveFieldMode,
        backbone: BackboneSpec,
        stride: int,
    ) -> List[ShotDescriptorSequence]:
        logger.info(
            "🔎 Extracting %s features (%s, stride %d) for %d shots",
            backbone.name, ReceptiveFieldMode(mode).value, stride, len(shots),
        )
        sources: Dict[str, FrameSource] = {}
        sequences = []
        try:
            for shot in tqdm(shots, desc="features", unit="shot", disable=len(shots) < 2):
                if shot.video_id not in sources:
                    sources[shot.video_id] = source_for(shot.video_id)
                sequences.append(self.extract_sequence(shot, sources[shot.video_id], mode, backbone, stride))
        finally:
            for source in sources.values():
                source.close()
        logger.info("✅ Extracted %d descriptor sequences", len(sequences))
        return sequences

    def write_cache(self, sequences: Sequence[ShotDescriptorSequence], path: str | Path) -> Path:
        return write_cache(sequences, path)

    def read_cache(self, path: str | Path, fps: float = 25.0) -> List[ShotDescriptorSequence]:
        return load_cache(path, fps=fps)


def load_cache(path: str | Path, fps: float = 25.0) -> List[ShotDescriptorSequence]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"feature cache not found: {path}")
    sequences = read_cache(path, fps=fps)
    if not sequences:
        raise DataError(f"feature cache {path} holds no shots")
    return sequences


def normalize_image(image: np.ndarray, manifest: ProviderManifest) -> np.ndarray:
    """RGB image -> float32 (3, H, W) tensor, per-channel mean subtracted and scaled."""
    img = image.astype(np.float32)
    if image.dtype == np.uint8:
        img /= 255.0
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    mean = np.asarray(manifest.mean, dtype=np.float32)
    std = np.asarray(manifest.std, dtype=np.float32)
    return np.transpose((img - mean) / std, (2, 0, 1)).copy()
