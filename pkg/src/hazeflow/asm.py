"""Atmospheric scattering model: forward composition, analytic inverse, and the exact velocity.

Under ``I = T*J + (1 - T)*A`` the hazy image moves on a straight line as ``T``
goes to 1, with constant derivative ``dI/dT = J - A``. That derivative is the
oracle velocity every solver test is checked against.

Atmospheric light may be a global 3-vector or a spatial ``(H, W, 3)`` map;
both broadcast against images.
"""
from __future__ import annotations

import numpy as np

from .imaging import as_field, as_image, check_same_size

T_FLOOR = 1e-3


def _light(light, shape) -> np.ndarray:
    a = np.asarray(light, dtype=np.float32)
    if a.shape == (3,):
        return a
    if a.shape != tuple(shape):
        raise ValueError(f"atmospheric light of shape {a.shape} does not match image {shape}")
    return a


def transmission_from_depth(depth, beta) -> np.ndarray:
    """``exp(-beta * depth)``; ``beta`` may be a scalar or a field of the same size."""
    depth = as_field(depth)
    beta = np.asarray(beta, dtype=np.float32)
    if beta.ndim == 2:
        check_same_size(depth, beta)
    elif beta.ndim != 0:
        raise ValueError(f"beta must be scalar or (H, W), got {beta.shape}")
    if np.any(depth < 0) or np.any(beta < 0):
        raise ValueError("depth and beta must be non-negative")
    return np.exp(-(beta * depth)).astype(np.float32)


def compose(clean, transmission, light) -> np.ndarray:
    clean = as_image(clean)
    t = as_field(transmission)
    check_same_size(clean, t)
    a = _light(light, clean.shape)
    t3 = t[..., None]
    return (t3 * clean + (1.0 - t3) * a).astype(np.float32)


def invert_asm(hazy, transmission, light, t_floor: float = T_FLOOR) -> np.ndarray:
    """Recover ``J = (I - (1 - T) A) / T``, clamped to >= 0 (no upper clamp).

    Refuses rather than clamps when any transmission value is below ``t_floor``.
    """
    hazy = as_image(hazy)
    t = as_field(transmission)
    check_same_size(hazy, t)
    low = np.argwhere(t < t_floor)
    if low.size:
        r, c = low[0]
        raise ValueError(
            f"transmission {float(t[r, c]):.3g} at pixel (row={r}, col={c}) is below floor {t_floor}"
        )
    a = _light(light, hazy.shape)
    t3 = t[..., None]
    out = (hazy - (1.0 - t3) * a) / t3
    return np.maximum(out, 0.0).astype(np.float32)


def oracle_velocity(clean, light) -> np.ndarray:
    clean = as_image(clean)
    return (clean - _light(light, clean.shape)).astype(np.float32)
