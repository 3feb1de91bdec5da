# models/saliency.py
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from utils.errors import ConfigError


@dataclass(frozen=True)
class LogGaborBankConfig:
    num_scales: int = 4
    num_orientations: int = 4
    min_wavelength: float = 6.0
    scale_multiplier: float = 2.0
    sigma_on_f: float = 0.55
    angular_sigma_factor: float = 1.2
    # gaussian smoothing of the accumulated map, as a fraction of frame width
    smoothing_fraction: float = 0.02

    def validate(self) -> "LogGaborBankConfig":
        if self.num_scales < 1 or self.num_orientations < 1:
            raise ConfigError("LogGabor bank needs at least one scale and one orientation")
        if self.min_wavelength < 2:
            raise ConfigError("min_wavelength must be >= 2 pixels")
        if self.scale_multiplier <= 1:
            raise ConfigError("scale_multiplier must be > 1")
        if not 0 < self.sigma_on_f < 1:
            raise ConfigError("sigma_on_f must lie in (0, 1)")
        if self.angular_sigma_factor <= 0:
            raise ConfigError("angular_sigma_factor must be positive")
        return self


class LocalMaximum(NamedTuple):
    x: int
    y: int
    value: float


@dataclass(frozen=True)
class PatchSpec:
    top_left_x: int
    top_left_y: int
    side: int
