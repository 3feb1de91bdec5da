# clients/feature_provider.py
from __future__ import annotations

import json
import threading
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, Tuple

import cv2
import numpy as np

from models.features import BackboneSpec, ProviderManifest
from utils.errors import ConfigError, ProviderFailure
from utils.log import get_logger

logger = get_logger(__name__)

MOCK_GRID = 16


class FeatureProvider(ABC):
    """
    Given a backbone and a normalized (3, side, side) image tensor, return the
    backbone's descriptor vector. `manifest` carries the normalization constants.
    """

    name = "provider"
    manifest: ProviderManifest = ProviderManifest()

    @abstractmethod
    def describe(self, backbone: BackboneSpec, tensor: np.ndarray) -> np.ndarray:
        ...


class MockFeatureProvider(FeatureProvider):
    """
    Deterministic stand-in for a pretrained network: 16x16x3 area downsample,
    fixed seeded random projection to the descriptor size, fixed bias, rectifier.
    """

    name = "mock"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.manifest = ProviderManifest()
        self._weights: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()

    def weights(self, descriptor_dim: int) -> Tuple[np.ndarray, np.ndarray]:
        with self._lock:
            if descriptor_dim not in self._weights:
                rng = np.random.default_rng([self.seed, descriptor_dim])
                fan_in = MOCK_GRID * MOCK_GRID * 3
                proj = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(descriptor_dim, fan_in))
                bias = rng.uniform(0.0, 0.1, size=descriptor_dim)
                self._weights[descriptor_dim] = (proj, bias)
            return self._weights[descriptor_dim]

    def describe(self, backbone: BackboneSpec, tensor: np.ndarray) -> np.ndarray:
        hwc = np.ascontiguousarray(np.transpose(tensor, (1, 2, 0)), dtype=np.float32)
        small = cv2.resize(hwc, (MOCK_GRID, MOCK_GRID), interpolation=cv2.INTER_AREA)
        proj, bias = self.weights(backbone.descriptor_dim)
        out = proj @ small.astype(np.float64).reshape(-1) + bias
        return np.maximum(out, 0.0).astype(np.float32)


class OnnxRuntimeProvider(FeatureProvider):
    """
    Runs a serialized (ONNX) network through OpenCV's dnn module and returns the
    activations of the backbone's layer. An optional `<model>.json` sidecar holds the
    provider manifest: {"mean": [...], "std": [...], "layer_id": "..."}.
    """

    name = "runtime"

    def __init__(self, model_path: str | Path):
        self.model_path = Path(model_path)
        if not self.model_path.is_file():
            raise ConfigError(f"model file not found: {self.model_path}")
        self.manifest = self._load_manifest()
        try:
            self._net = cv2.dnn.readNetFromONNX(str(self.model_path))
        except cv2.error as e:
            raise ProviderFailure(f"could not load {self.model_path}: {e}") from e
        # cv2.dnn.Net is not re-entrant
        self._lock = threading.Lock()
        logger.info("✅ Loaded runtime network %s", self.model_path.name)

    def describe(self, backbone: BackboneSpec, tensor: np.ndarray) -> np.ndarray:
        blob = np.ascontiguousarray(tensor[None], dtype=np.float32)
        # a sidecar layer name overrides the backbone table's
        layer = self.manifest.layer_id or backbone.layer_id
        try:
            with self._lock:
                self._net.setInput(blob)
                out = self._net.forward(layer)
        except cv2.error as e:
            raise ProviderFailure(f"{backbone.name} forward pass failed: {e}") from e
        return np.asarray(out, dtype=np.float32).reshape(-1)

    def _load_manifest(self) -> ProviderManifest:
        sidecar = self.model_path.with_suffix(self.model_path.suffix + ".json")
        if not sidecar.is_file():
            return ProviderManifest()
        try:
            d = json.loads(sidecar.read_text(encoding="utf-8"))
            return ProviderManifest(
                mean=tuple(float(x) for x in d.get("mean", ProviderManifest.mean)),
                std=tuple(float(x) for x in d.get("std", ProviderManifest.std)),
                layer_id=str(d.get("layer_id", "")),
            )
        except (ValueError, TypeError) as e:
            raise ConfigError(f"invalid provider manifest {sidecar}: {e}") from e


def make_provider(spec: str, seed: int = 0) -> FeatureProvider:
    """`mock` or `runtime:<model-file>`."""
    spec = (spec or "mock").strip()
    if spec == "mock":
        return MockFeatureProvider(seed=seed)
    if spec.startswith("runtime:"):
        return OnnxRuntimeProvider(spec.split(":", 1)[1])
    raise ConfigError(f"unknown provider {spec!r}; use 'mock' or 'runtime:<model-file>'")
