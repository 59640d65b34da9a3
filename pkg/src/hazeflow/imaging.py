"""Image and scalar-field containers, file I/O, seeded RNG and full-reference metrics.

Images are plain ``float32`` numpy arrays: ``(H, W, 3)`` for RGB rasters and
``(H, W)`` for scalar fields (transmission, depth, density). Values are linear
intensity; nothing here applies a gamma decode.
"""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import cv2
import numpy as np

FIELD_MAGIC = b"HZF1"
_HEADER = struct.Struct("<4sIIB")

LUMA = np.array([0.299, 0.587, 0.114])
SSIM_WINDOW = 8
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


class ImageFormatError(ValueError):
    """Raised for unreadable, corrupt or unsupported image files."""


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic PCG64 generator; identical seeds give identical streams everywhere."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def as_image(data) -> np.ndarray:
    img = np.asarray(data, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def as_field(data) -> np.ndarray:
    field = np.asarray(data, dtype=np.float32)
    if field.ndim != 2 or field.shape[0] < 1 or field.shape[1] < 1:
        raise ValueError(f"expected an (H, W) field, got shape {field.shape}")
    if not np.all(np.isfinite(field)):
        raise ValueError("field contains non-finite values")
    return field


def check_same_size(*arrays: np.ndarray) -> None:
    shapes = {a.shape[:2] for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"dimension mismatch: {sorted(shapes)}")


def luma(image: np.ndarray) -> np.ndarray:
    return np.asarray(image, dtype=np.float64) @ LUMA


# ---------------------------------------------------------------------------
# raw field format


def encode_raw(array: np.ndarray) -> bytes:
    arr = np.asarray(array, dtype="<f4")
    if arr.ndim == 2:
        channels = 1
    elif arr.ndim == 3 and arr.shape[2] in (1, 3):
        channels = arr.shape[2]
    else:
        raise ValueError(f"cannot encode array of shape {arr.shape}")
    h, w = arr.shape[:2]
    return _HEADER.pack(FIELD_MAGIC, h, w, channels) + np.ascontiguousarray(arr).tobytes()


def decode_raw(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise ImageFormatError("truncated header")
    magic, h, w, channels = _HEADER.unpack_from(blob)
    if magic != FIELD_MAGIC:
        raise ImageFormatError(f"bad magic {magic!r}")
    if channels not in (1, 3) or h == 0 or w == 0:
        raise ImageFormatError(f"corrupt header: {h}x{w}x{channels}")
    expected = h * w * channels * 4
    payload = blob[_HEADER.size:]
    if len(payload) != expected:
        raise ImageFormatError(f"payload is {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    return arr.reshape(h, w) if channels == 1 else arr.reshape(h, w, 3)


def atomic_write(path, blob: bytes) -> None:
    """Write via a temp file in the same directory followed by a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_field(field: np.ndarray, path) -> None:
    atomic_write(path, encode_raw(as_field(field)))


def save_raw_image(image: np.ndarray, path) -> None:
    atomic_write(path, encode_raw(as_image(image)))


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"cannot read {path}: {exc}") from exc


def _load_png(path) -> np.ndarray:
    blob = _read_bytes(path)
    raw = cv2.imdecode(np.frombuffer(blob, np.uint8), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageFormatError(f"cannot decode {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageFormatError(f"unsupported bit depth {raw.dtype} in {path}")
    if raw.ndim == 3:
        raw = raw[..., :3][..., ::-1]  # BGR(A) -> RGB
    return (raw.astype(np.float64) / scale).astype(np.float32)


def _is_raw(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) == FIELD_MAGIC


def load_image(path) -> np.ndarray:
    """Load a PNG (8 or 16 bit) or a 3-channel raw field file as an ``(H, W, 3)`` image."""
    path = Path(path)
    if not path.is_file():
        raise ImageFormatError(f"no such file: {path}")
    if _is_raw(path):
        arr = decode_raw(_read_bytes(path))
    else:
        arr = _load_png(path)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    return as_image(arr)


def load_field(path) -> np.ndarray:
    """Load a 1-channel raw field, or the first channel of a PNG."""
    path = Path(path)
    if not path.is_file():
        raise ImageFormatError(f"no such file: {path}")
    if _is_raw(path):
        arr = decode_raw(_read_bytes(path))
    else:
        arr = _load_png(path)
    if arr.ndim == 3:
        arr = arr[..., 0]
    return as_field(arr)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(image: np.ndarray, path) -> None:
    """8-bit export; values are clamped to [0, 1]."""
    arr = to_uint8(image)
    if arr.ndim == 3:
        arr = arr[..., ::-1]
    ok, buf = cv2.imencode(".png", arr)
    if not ok:
        raise ImageFormatError(f"PNG encoding failed for {path}")
    atomic_write(path, buf.tobytes())


# ---------------------------------------------------------------------------
# metrics


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB with peak 1.0; ``inf`` when the images are identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def _window_mean(x: np.ndarray, k: int) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k))
    return windows.mean(axis=(-2, -1))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over luma using uniform 8x8 windows at stride 1 (no padding)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"image {a.shape[:2]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    x = a @ LUMA if a.ndim == 3 else a
    y = b @ LUMA if b.ndim == 3 else b
    k = SSIM_WINDOW
    mx, my = _window_mean(x, k), _window_mean(y, k)
    vx = _window_mean(x * x, k) - mx * mx
    vy = _window_mean(y * y, k) - my * my
    cov = _window_mean(x * y, k) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
    return float(np.mean(num / den))
