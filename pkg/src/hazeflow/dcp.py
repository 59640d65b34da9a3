"""Dark-channel-prior transmission estimate with guided-filter refinement."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import minimum_filter, uniform_filter

from .imaging import as_field, as_image, luma

T_DCP_MIN = 0.05
LIGHT_CLAMP = (0.05, 1.8)


@dataclass(frozen=True)
class DcpConfig:
    patch_radius: int = 7
    omega: float = 0.95
    top_fraction: float = 0.001
    guided_radius: int = 20
    guided_eps: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.omega <= 1.0:
            raise ValueError(f"omega must be in (0, 1], got {self.omega}")
        if not 0.0 < self.top_fraction <= 0.1:
            raise ValueError(f"top_fraction must be in (0, 0.1], got {self.top_fraction}")
        if self.patch_radius < 0 or self.guided_radius < 0:
            raise ValueError("radii must be non-negative")


def dark_channel(image, patch_radius: int = 7) -> np.ndarray:
    image = as_image(image)
    if patch_radius < 0:
        raise ValueError("patch_radius must be >= 0")
    per_pixel = image.min(axis=2)
    if patch_radius == 0:
        return per_pixel
    return minimum_filter(per_pixel, size=2 * patch_radius + 1, mode="nearest")


def estimate_light(image, dark, top_fraction: float = 0.001) -> np.ndarray:
    """Brightest (max channel sum) colour among the haziest ``top_fraction`` of pixels."""
    image = as_image(image)
    dark = as_field(dark)
    flat = image.reshape(-1, 3)
    count = int(np.floor(dark.size * top_fraction))
    if count < 1:
        # too few pixels for the fraction: use the global brightest pixel
        idx = np.arange(flat.shape[0])
    else:
        # stable sort keeps ties deterministic
        idx = np.argsort(-dark.ravel(), kind="stable")[:count]
    best = idx[np.argmax(flat[idx].sum(axis=1))]
    return np.clip(flat[best], *LIGHT_CLAMP).astype(np.float32)


def guided_filter(guide: np.ndarray, src: np.ndarray, radius: int, eps: float) -> np.ndarray:
    """Grey-guide guided filter with box means (edge-replicated borders)."""
    size = 2 * radius + 1

    def box(x):
        return uniform_filter(x, size=size, mode="nearest")

    g = guide.astype(np.float64)
    p = src.astype(np.float64)
    mean_g, mean_p = box(g), box(p)
    var_g = box(g * g) - mean_g * mean_g
    cov_gp = box(g * p) - mean_g * mean_p
    a = cov_gp / (var_g + eps)
    b = mean_p - a * mean_g
    return box(a) * g + box(b)


def raw_transmission(image, light, cfg: DcpConfig = DcpConfig()) -> np.ndarray:
    """``1 - omega * dark_channel(I / A)`` before refinement and clamping."""
    image = as_image(image)
    light = np.asarray(light, dtype=np.float32)
    if light.shape != (3,) or np.any(light < LIGHT_CLAMP[0]):
        raise ValueError("estimate_transmission needs a global light with components >= 0.05")
    return (1.0 - cfg.omega * dark_channel(image / light, cfg.patch_radius)).astype(np.float32)


def estimate_transmission(image, light, cfg: DcpConfig = DcpConfig()) -> np.ndarray:
    image = as_image(image)
    t = raw_transmission(image, light, cfg)
    refined = guided_filter(luma(image), t, cfg.guided_radius, cfg.guided_eps)
    return np.clip(refined, T_DCP_MIN, 1.0).astype(np.float32)


def estimate(image, cfg: DcpConfig = DcpConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Full DCP pass: returns ``(T_dcp, A)`` for a hazy image."""
    image = as_image(image)
    a = estimate_light(image, dark_channel(image, cfg.patch_radius), cfg.top_fraction)
    return estimate_transmission(image, a, cfg), a
