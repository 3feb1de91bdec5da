# models/features.py
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Tuple

import numpy as np

from models.shot import Shot
from utils.errors import ConfigError

IMAGENET_MEAN: Tuple[float, float, float] = (0.485, 0.456, 0.406)
IMAGENET_STD: Tuple[float, float, float] = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    input_side: int
    descriptor_dim: int
    layer_id: str


BACKBONES: Dict[str, BackboneSpec] = {
    "alexnet": BackboneSpec("alexnet", 227, 4096, "fc7"),
    "vgg19": BackboneSpec("vgg19", 224, 4096, "fc7"),
    "googlenet": BackboneSpec("googlenet", 224, 1024, "pool5-7x7_s1"),
    "resnet101": BackboneSpec("resnet101", 224, 2048, "pool5"),
}


def backbone(name: str) -> BackboneSpec:
    try:
        return BACKBONES[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown backbone {name!r}; choose from {sorted(BACKBONES)}") from None


class ReceptiveFieldMode(str, Enum):
    RESIZE_SQUARE = "resize_square"
    SALIENT_PATCH = "salient_patch"
    CENTER_CROP = "center_crop"


@dataclass(frozen=True)
class ProviderManifest:
    """Normalization constants a provider expects its input tensor to carry."""

    mean: Tuple[float, float, float] = IMAGENET_MEAN
    std: Tuple[float, float, float] = IMAGENET_STD
    layer_id: str = ""


@dataclass
class ShotDescriptorSequence:
    shot: Shot
    stride: int
    # (T,) frame offsets, (T,) per-frame elapsed minutes, (T, n) float32 descriptors
    offsets: np.ndarray
    elapsed_minutes: np.ndarray
    descriptors: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return int(self.descriptors.shape[0])

    @property
    def descriptor_dim(self) -> int:
        return int(self.descriptors.shape[1])
