"""Training losses on the autodiff tape.

All losses take ``(B, C, H, W)`` tensors. ``perceptual_loss`` is the in-repo
stand-in for a learned perceptual distance: half structural dissimilarity,
half L1 distance between forward-difference image gradients.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .imaging import LUMA, SSIM_C1, SSIM_C2, SSIM_WINDOW


def image_tensor(image, dtype=np.float32, requires_grad=False) -> Tensor:
    """``(H, W, C)`` or ``(B, H, W, C)`` array to a ``(B, C, H, W)`` tensor."""
    arr = np.asarray(image, dtype=dtype)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim == 3:
        arr = arr[None]
    return Tensor(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)), requires_grad=requires_grad)


def to_image(t: Tensor | np.ndarray) -> np.ndarray:
    """Inverse of :func:`image_tensor` for a batch of one; drops a singleton channel."""
    arr = t.data if isinstance(t, Tensor) else t
    out = arr[0].transpose(1, 2, 0)
    return out[..., 0] if out.shape[2] == 1 else out


def mse(a: Tensor, b) -> Tensor:
    return ad.mean(ad.square(ad.sub(a, b)))


def derivative_loss(velocity: Tensor, target_velocity) -> Tensor:
    """Mean squared error between predicted velocity and ``J - A``."""
    return mse(velocity, target_velocity)


def transmission_loss(t_refined: Tensor, t_true) -> Tensor:
    return mse(t_refined, t_true)


def _luma(x: Tensor) -> Tensor:
    weights = np.asarray(LUMA, dtype=x.dtype).reshape(1, 3, 1, 1)
    return ad.sum_(ad.mul(x, weights), axis=1, keepdims=True)


def ssim_tensor(pred: Tensor, target) -> Tensor:
    """Differentiable mean SSIM over luma, uniform 8x8 windows (matches ``imaging.ssim``)."""
    target = ad._lift(target, pred)
    return ad.ssim(_luma(pred), _luma(target), SSIM_WINDOW, SSIM_C1, SSIM_C2)


def gradient_l1(pred: Tensor, target) -> Tensor:
    """Average of horizontal and vertical mean |forward-difference mismatch|."""
    diff = ad.sub(pred, target)
    dx = diff[..., :, 1:] - diff[..., :, :-1]
    dy = diff[..., 1:, :] - diff[..., :-1, :]
    return 0.5 * (ad.mean(ad.abs_(dx)) + ad.mean(ad.abs_(dy)))


def perceptual_loss(pred: Tensor, target) -> Tensor:
    if pred.shape[-1] < SSIM_WINDOW or pred.shape[-2] < SSIM_WINDOW:
        raise ValueError(f"perceptual loss needs at least {SSIM_WINDOW}x{SSIM_WINDOW} inputs")
    target = ad._lift(target, pred)
    if target.shape != pred.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return 0.5 * (1.0 - ssim_tensor(pred, target)) + 0.5 * gradient_l1(pred, target)


# numpy conveniences over (H, W, 3) images


def loss_der(velocity, clean, light) -> float:
    v = np.asarray(velocity, dtype=np.float64)
    target = np.asarray(clean, dtype=np.float64) - np.asarray(light, dtype=np.float64)
    if v.shape != target.shape:
        raise ValueError(f"shape mismatch: {v.shape} vs {target.shape}")
    return float(derivative_loss(image_tensor(v, np.float64), image_tensor(target, np.float64)).data)


def loss_T(t_refined, t_true) -> float:
    a = np.asarray(t_refined, dtype=np.float64)
    b = np.asarray(t_true, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(transmission_loss(Tensor(a), Tensor(b)).data)


def loss_perc(pred, target) -> float:
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(perceptual_loss(image_tensor(a, np.float64), image_tensor(b, np.float64)).data)
