# agents/saliency_agent.py
from __future__ import annotations

from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np
from scipy import ndimage

from models.saliency import LocalMaximum, LogGaborBankConfig, PatchSpec
from utils.errors import ConfigError, EmptyImage, OutOfBounds, PatchLargerThanFrame
from utils.log import get_logger
from utils.numeric import round_half_up_ratio

logger = get_logger(__name__)

# below this the whole filter response group is treated as empty (numerical noise only)
_ENERGY_FLOOR = 1e-10
# eigenvalue ratio under which the scale covariance is considered singular
_CONDITION_FLOOR = 1e-10


class SaliencyAgent:
    """
    Static spectral-whitening saliency: LogGabor responses over luminance and two
    color-opponent planes, whitened across scales per orientation, accumulated,
    smoothed and normalized. Also picks the patch the backbone will see.
    """

    def __init__(self, config: Optional[LogGaborBankConfig] = None):
        self.config = (config or LogGaborBankConfig()).validate()

    def resize_keep_aspect(self, frame: np.ndarray, target_short_side: int) -> np.ndarray:
        if frame is None or frame.size == 0:
            raise EmptyImage("cannot resize an empty image")
        if target_short_side < 1:
            raise ConfigError("target_short_side must be >= 1")
        h, w = frame.shape[:2]
        if h <= w:
            new_h, new_w = target_short_side, round_half_up_ratio(w * target_short_side, h)
        else:
            new_w, new_h = target_short_side, round_half_up_ratio(h * target_short_side, w)
        if (new_h, new_w) == (h, w):
            return frame.copy()
        return cv2.resize(frame, (new_w, new_h), interpolation=cv2.INTER_LINEAR)

    def compute_saliency(self, frame: np.ndarray, config: Optional[LogGaborBankConfig] = None) -> np.ndarray:
        cfg = (config or self.config).validate()
        if frame is None or frame.size == 0:
            raise EmptyImage("cannot compute saliency of an empty image")
        h, w = frame.shape[:2]

        planes = _opponent_planes(frame)
        bank = _log_gabor_bank(h + h % 2, w + w % 2, cfg)  # (S, O, H', W')

        energy = np.zeros((h, w), dtype=np.float64)
        for plane_name, plane in planes.items():
            spectrum = np.fft.fft2(plane, s=bank.shape[2:])
            for o in range(cfg.num_orientations):
                responses = np.abs(np.fft.ifft2(spectrum[None, :, :] * bank[:, o], axes=(-2, -1)))
                responses = responses[:, :h, :w].reshape(cfg.num_scales, -1)
                whitened = whiten_scales(responses, group=f"{plane_name}/{o}")
                energy += np.sum(whitened**2, axis=0).reshape(h, w)

        sigma = cfg.smoothing_fraction * w
        if sigma > 0:
            energy = ndimage.gaussian_filter(energy, sigma=sigma, mode="nearest")

        lo, hi = float(energy.min()), float(energy.max())
        if hi - lo <= _ENERGY_FLOOR * max(1.0, abs(hi)):
            return np.zeros((h, w), dtype=np.float64)
        return (energy - lo) / (hi - lo)

    def top_local_maxima(self, saliency: np.ndarray, k: int = 5, neighborhood: int = 9) -> List[LocalMaximum]:
        if neighborhood < 3 or neighborhood % 2 == 0:
            raise ConfigError("neighborhood must be odd and >= 3")
        values = np.asarray(saliency, dtype=np.float64)
        # windows clipped at the borders
        win_max = ndimage.maximum_filter(values, size=neighborhood, mode="constant", cval=-np.inf)
        win_min = ndimage.minimum_filter(values, size=neighborhood, mode="constant", cval=np.inf)
        ys, xs = np.nonzero((values >= win_max) & (values > win_min))

        order = sorted(zip(ys.tolist(), xs.tolist()), key=lambda p: (-values[p], p[0], p[1]))
        r = neighborhood // 2
        accepted: List[LocalMaximum] = []
        for y, x in order:
            v = float(values[y, x])
            # a plateau inside one window collapses to its lexicographically smallest pixel
            if any(m.value == v and abs(m.y - y) <= r and abs(m.x - x) <= r for m in accepted):
                continue
            accepted.append(LocalMaximum(x=int(x), y=int(y), value=v))
            if len(accepted) == k:
                break
        return accepted

    def select_patch(
        self,
        maxima: Sequence[Tuple[int, int, float]],
        frame_width: int,
        frame_height: int,
        side: int,
    ) -> PatchSpec:
        if side > min(frame_width, frame_height) or side < 1:
            raise PatchLargerThanFrame(side, frame_width, frame_height)
        if maxima:
            cx = int(np.floor(np.mean([m[0] for m in maxima]) + 0.5))
            cy = int(np.floor(np.mean([m[1] for m in maxima]) + 0.5))
        else:
            cx, cy = frame_width // 2, frame_height // 2
        x = min(max(cx - side // 2, 0), frame_width - side)
        y = min(max(cy - side // 2, 0), frame_height - side)
        return PatchSpec(top_left_x=x, top_left_y=y, side=side)

    def crop(self, frame: np.ndarray, patch: PatchSpec) -> np.ndarray:
        h, w = frame.shape[:2]
        x, y, s = patch.top_left_x, patch.top_left_y, patch.side
        if x < 0 or y < 0 or x + s > w or y + s > h:
            raise OutOfBounds(f"patch {patch} exceeds a {w}x{h} frame")
        return frame[y : y + s, x : x + s].copy()

    def salient_patch(self, frame: np.ndarray, side: int) -> Tuple[np.ndarray, PatchSpec, np.ndarray]:
        """Resize, compute the map, pick the patch: returns (patch image, spec, map)."""
        resized = self.resize_keep_aspect(frame, side)
        saliency = self.compute_saliency(resized)
        maxima = self.top_local_maxima(saliency, k=5, neighborhood=9)
        h, w = resized.shape[:2]
        patch = self.select_patch(maxima, w, h, side)
        return self.crop(resized, patch), patch, saliency

    def overlay(self, frame: np.ndarray, saliency: np.ndarray, patch: PatchSpec,
                maxima: Sequence[LocalMaximum] = ()) -> np.ndarray:
        """Heat-mapped map blended over the frame with the patch outline (RGB uint8)."""
        heat = cv2.applyColorMap((saliency * 255).astype(np.uint8), cv2.COLORMAP_JET)
        heat = cv2.cvtColor(heat, cv2.COLOR_BGR2RGB)
        base = _to_uint8(frame)
        out = cv2.addWeighted(base, 0.6, heat, 0.4, 0)
        x, y, s = patch.top_left_x, patch.top_left_y, patch.side
        cv2.rectangle(out, (x, y), (x + s - 1, y + s - 1), (255, 255, 255), 2)
        for m in maxima:
            cv2.circle(out, (m.x, m.y), 3, (255, 255, 0), -1)
        return out


def whiten_scales(responses: np.ndarray, group: str = "") -> np.ndarray:
    """
    Decorrelate the S scale responses (S, N pixels) of one group.
    C^(-1/2) of the response covariance is applied to the raw responses, so a group
    that is already uncorrelated with unit variance comes back unchanged. Falls
    back to per-scale standard deviation when C is singular.
    """
    if not np.isfinite(responses).all() or float(np.abs(responses).max(initial=0.0)) < _ENERGY_FLOOR:
        return np.zeros_like(responses)
    cov = np.atleast_2d(np.cov(responses, bias=True))
    evals, evecs = np.linalg.eigh(cov)
    if evals[-1] <= 0 or evals[0] <= _CONDITION_FLOOR * evals[-1]:
        logger.debug("Degenerate scale covariance for %s; using diagonal whitening", group or "group")
        std = np.sqrt(np.diag(cov))
        out = np.zeros_like(responses)
        ok = std > _ENERGY_FLOOR
        out[ok] = responses[ok] / std[ok, None]
        return out
    inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
    return inv_sqrt @ responses


def _opponent_planes(frame: np.ndarray) -> Dict[str, np.ndarray]:
    img = frame.astype(np.float64)
    if frame.dtype == np.uint8:
        img /= 255.0
    if img.ndim == 2:
        return {"L": img}
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    return {
        "L": 0.299 * r + 0.587 * g + 0.114 * b,
        "RG": r - g,
        "BY": b - (r + g) / 2.0,
    }


@lru_cache(maxsize=16)
def _log_gabor_bank(height: int, width: int, cfg: LogGaborBankConfig) -> np.ndarray:
    """Frequency-domain LogGabor filters, shape (S, O, height, width), zero at DC."""
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    radius = np.sqrt(fx**2 + fy**2)
    radius[0, 0] = 1.0
    theta = np.arctan2(-fy, fx)
    sin_t, cos_t = np.sin(theta), np.cos(theta)

    log_sigma = np.log(cfg.sigma_on_f)
    angular_sigma = np.pi / cfg.num_orientations * cfg.angular_sigma_factor

    bank = np.empty((cfg.num_scales, cfg.num_orientations, height, width), dtype=np.float64)
    for s in range(cfg.num_scales):
        f0 = 1.0 / (cfg.min_wavelength * cfg.scale_multiplier**s)
        radial = np.exp(-(np.log(radius / f0) ** 2) / (2 * log_sigma**2))
        radial[0, 0] = 0.0
        for o in range(cfg.num_orientations):
            angle = o * np.pi / cfg.num_orientations
            ds = sin_t * np.cos(angle) - cos_t * np.sin(angle)
            dc = cos_t * np.cos(angle) + sin_t * np.sin(angle)
            dtheta = np.abs(np.arctan2(ds, dc))
            bank[s, o] = radial * np.exp(-(dtheta**2) / (2 * angular_sigma**2))
    bank.setflags(write=False)
    return bank


def _to_uint8(frame: np.ndarray) -> np.ndarray:
    if frame.dtype == np.uint8:
        img = frame
    else:
        img = np.clip(frame * 255.0, 0, 255).astype(np.uint8)
    if img.ndim == 2:
        img = cv2.cvtColor(img, cv2.COLOR_GRAY2RGB)
    return img
