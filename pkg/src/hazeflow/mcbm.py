"""Non-homogeneous haze synthesis.

A random walker wanders over the density grid (Markov chain of unit moves);
after every move a Gaussian-displaced neighbour of the walker gets one unit of
density (Brownian deposit). The accumulated counts are blurred and min-max
normalised into the non-homogeneous density map, which perturbs the global
scattering coefficient: ``T = exp(-(beta + alpha * density) * depth)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import fft
from scipy.ndimage import gaussian_filter1d, map_coordinates

from .asm import compose
from .imaging import as_field, as_image, check_same_size, LUMA

BETA_RANGE = (0.2, 2.8)
ALPHA_RANGE = (0.5, 1.0)
LIGHT_RANGE = (0.25, 1.8)
N_FACTORS = (4, 5, 6)
SIGMAS = (15.0, 25.0, 35.0)
GAMMA_RANGE = (0.7, 1.4)
NOISE_RANGE = (0.002, 0.02)
QUALITY_RANGE = (30, 80)
BROWNIAN_SIGMA = 2.0
T_MIN = 0.05
DEPTH_MAX = 3.0

_MOVES = np.array([(0, 1), (0, -1), (1, 0), (-1, 0)])

# standard JPEG luminance table
_JPEG_LUMA = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class HazeParams:
    beta: float
    alpha: float
    light: tuple[float, float, float]
    mcbm_iterations: int
    gaussian_sigma: float
    seed: int = 0
    degrade_gamma: bool = True
    degrade_noise: bool = True
    degrade_block: bool = True
    # degradation draws, fixed at sampling time so a pair is fully described by its params
    gamma_exponent: float = 1.0
    noise_sigma: float = 0.0
    quality: int = 75

    @property
    def any_degradation(self) -> bool:
        return self.degrade_gamma or self.degrade_noise or self.degrade_block

    def to_dict(self) -> dict:
        d = asdict(self)
        d["light"] = list(self.light)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HazeParams":
        d = dict(d)
        d["light"] = tuple(float(v) for v in d["light"])
        return cls(**d)


@dataclass
class HazePair:
    clean: np.ndarray
    hazy: np.ndarray
    transmission: np.ndarray
    light: np.ndarray
    depth: np.ndarray
    params: HazeParams
    density: np.ndarray | None = field(default=None, repr=False)


def _reflect(pos: np.ndarray, size: int) -> np.ndarray:
    """Fold an unbounded lattice walk into ``[0, size-1]`` with mirror boundaries."""
    if size == 1:
        return np.zeros_like(pos)
    period = 2 * (size - 1)
    p = np.mod(pos, period)
    return np.where(p > size - 1, period - p, p)


def gaussian_smooth(field: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel radius ceil(3 sigma), edge-replicate padding."""
    radius = int(math.ceil(3.0 * sigma))
    out = gaussian_filter1d(field, sigma, axis=0, mode="nearest", radius=radius)
    return gaussian_filter1d(out, sigma, axis=1, mode="nearest", radius=radius)


def normalize01(field: np.ndarray) -> np.ndarray:
    lo, hi = float(field.min()), float(field.max())
    if hi <= lo:
        return np.zeros(field.shape, dtype=np.float32)
    out = ((field - lo) / (hi - lo)).astype(np.float32)
    # pin the endpoints exactly; float32 rounding can otherwise miss 1.0
    out[field == hi] = 1.0
    out[field == lo] = 0.0
    return np.clip(out, 0.0, 1.0)


def mcbm_counts(
    height: int, width: int, n: int, rng: np.random.Generator, brownian_sigma: float = BROWNIAN_SIGMA
) -> np.ndarray:
    """Raw deposit counts of the walk (before smoothing)."""
    if height < 1 or width < 1:
        raise ValueError("density grid must have positive area")
    if n < 1:
        raise ValueError("n must be >= 1")
    start = np.array([rng.integers(height), rng.integers(width)])
    moves = _MOVES[rng.integers(4, size=n)]
    walk = start + np.cumsum(moves, axis=0)
    rows = _reflect(walk[:, 0], height)
    cols = _reflect(walk[:, 1], width)
    jitter = np.rint(rng.normal(0.0, brownian_sigma, size=(n, 2))).astype(np.int64)
    dr = np.clip(rows + jitter[:, 0], 0, height - 1)
    dc = np.clip(cols + jitter[:, 1], 0, width - 1)
    counts = np.bincount(dr * width + dc, minlength=height * width)
    return counts.reshape(height, width).astype(np.float64)


def generate_density(
    height: int,
    width: int,
    n: int,
    sigma: float,
    rng: np.random.Generator,
    brownian_sigma: float = BROWNIAN_SIGMA,
) -> np.ndarray:
    """Non-homogeneous density map in [0, 1]; min is 0 and max is 1 unless the field is flat."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    counts = mcbm_counts(height, width, n, rng, brownian_sigma)
    return normalize01(gaussian_smooth(counts, sigma))


def mcbm_transmission(depth, beta: float, alpha: float, density) -> np.ndarray:
    depth = as_field(depth)
    density = as_field(density)
    check_same_size(depth, density)
    coeff = np.float32(beta) + np.float32(alpha) * density
    return np.exp(-(coeff * depth)).astype(np.float32)


def sample_params(
    rng: np.random.Generator,
    shape: tuple[int, int] = (128, 128),
    *,
    seed: int = 0,
    degrade: bool = True,
) -> HazeParams:
    beta = float(rng.uniform(*BETA_RANGE))
    alpha = float(rng.uniform(*ALPHA_RANGE))
    light = tuple(float(v) for v in rng.uniform(*LIGHT_RANGE, size=3))
    n = int(shape[0] * shape[1] * N_FACTORS[rng.integers(len(N_FACTORS))])
    sigma = float(SIGMAS[rng.integers(len(SIGMAS))])
    gamma = float(rng.uniform(*GAMMA_RANGE))
    noise = float(rng.uniform(*NOISE_RANGE))
    quality = int(rng.integers(QUALITY_RANGE[0], QUALITY_RANGE[1] + 1))
    return HazeParams(
        beta=beta,
        alpha=alpha,
        light=light,
        mcbm_iterations=n,
        gaussian_sigma=sigma,
        seed=int(seed),
        degrade_gamma=degrade,
        degrade_noise=degrade,
        degrade_block=degrade,
        gamma_exponent=gamma,
        noise_sigma=noise,
        quality=quality,
    )


def quant_table(quality: int) -> np.ndarray:
    quality = int(np.clip(quality, 1, 100))
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.maximum(np.floor((_JPEG_LUMA * scale + 50.0) / 100.0), 1.0)


def block_quantize(image: np.ndarray, quality: int) -> np.ndarray:
    """8x8 DCT quantisation of luma; the luma change is added back to every channel.

    Partial blocks at the right/bottom border are left untouched.
    """
    h, w = image.shape[:2]
    bh, bw = h // 8, w // 8
    if bh == 0 or bw == 0:
        return image.copy()
    y = image.astype(np.float64) @ LUMA * 255.0
    core = y[: bh * 8, : bw * 8].reshape(bh, 8, bw, 8)
    coef = fft.dctn(core, axes=(1, 3), norm="ortho")
    q = quant_table(quality)[None, :, None, :]
    rec = fft.idctn(np.round(coef / q) * q, axes=(1, 3), norm="ortho")
    delta = np.zeros_like(y)
    delta[: bh * 8, : bw * 8] = (rec - core).reshape(bh * 8, bw * 8)
    return image + (delta / 255.0)[..., None].astype(image.dtype)


def degrade(image, params: HazeParams, rng: np.random.Generator) -> np.ndarray:
    """Gamma, additive Gaussian noise, block quantisation (each if enabled), clamped to >= 0."""
    out = as_image(image).copy()
    if params.degrade_gamma:
        out = np.power(np.maximum(out, 0.0), np.float32(params.gamma_exponent))
    if params.degrade_noise:
        out = out + rng.normal(0.0, params.noise_sigma, size=out.shape).astype(np.float32)
    if params.degrade_block:
        out = block_quantize(out, params.quality)
    return np.maximum(out, 0.0).astype(np.float32)


def generate_pair(
    clean,
    depth,
    rng: np.random.Generator,
    *,
    seed: int = 0,
    degrade_enabled: bool = True,
    light=None,
) -> HazePair:
    """Synthesise one non-homogeneous hazy pair.

    ``light`` overrides the sampled atmospheric light (pretraining fixes it to ones).
    Transmission is floored at ``T_MIN`` so the pair stays invertible in float32.
    """
    clean = as_image(clean)
    depth = as_field(depth)
    check_same_size(clean, depth)
    h, w = depth.shape
    params = sample_params(rng, (h, w), seed=seed, degrade=degrade_enabled)
    if light is not None:
        params = replace(params, light=tuple(float(v) for v in np.broadcast_to(light, (3,))))
    density = generate_density(h, w, params.mcbm_iterations, params.gaussian_sigma, rng)
    t = np.maximum(mcbm_transmission(depth, params.beta, params.alpha, density), T_MIN)
    a = np.asarray(params.light, dtype=np.float32)
    hazy = compose(clean, t, a)
    if params.any_degradation:
        hazy = degrade(hazy, params, rng)
    return HazePair(clean=clean, hazy=hazy, transmission=t, light=a, depth=depth, params=params, density=density)


# ---------------------------------------------------------------------------
# synthetic inputs: depth maps and clean scenes


def _value_noise(height: int, width: int, cells: int, rng: np.random.Generator) -> np.ndarray:
    lattice = rng.random((cells + 1, cells + 1))
    rr = np.linspace(0, cells, height)[:, None].repeat(width, 1)
    cc = np.linspace(0, cells, width)[None, :].repeat(height, 0)
    r0, c0 = np.floor(rr), np.floor(cc)
    fr, fc = rr - r0, cc - c0
    # smoothstep fade before bilinear lookup
    rr = r0 + fr * fr * (3 - 2 * fr)
    cc = c0 + fc * fc * (3 - 2 * fc)
    return map_coordinates(lattice, [rr, cc], order=1, mode="nearest")


def synth_depth(
    height: int, width: int, kind: str, rng: np.random.Generator, d_max: float = DEPTH_MAX
) -> np.ndarray:
    if kind == "ramp":
        raw = np.repeat(np.arange(height, dtype=np.float64)[:, None], width, axis=1)
    elif kind == "radial":
        cy, cx = rng.uniform(0, height - 1), rng.uniform(0, width - 1)
        yy, xx = np.mgrid[0:height, 0:width]
        raw = np.hypot(yy - cy, xx - cx)
    elif kind == "fractal":
        raw = sum(0.5**o * _value_noise(height, width, 2 ** (o + 1), rng) for o in range(4))
    else:
        raise ValueError(f"unknown depth kind {kind!r}")
    lo, hi = raw.min(), raw.max()
    if hi <= lo:
        return np.zeros((height, width), dtype=np.float32)
    return ((raw - lo) / (hi - lo) * d_max).astype(np.float32)


def synth_scene(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Procedural clean image with saturated colours, so dark-channel statistics hold."""
    yy, xx = np.mgrid[0:height, 0:width]

    def saturated_color():
        c = rng.uniform(0.25, 0.85, size=3)
        c[rng.integers(3)] = rng.uniform(0.0, 0.04)
        return c

    img = np.empty((height, width, 3))
    c0, c1 = saturated_color(), saturated_color()
    mix = _value_noise(height, width, 3, rng)[..., None]
    img[:] = (1 - mix) * c0 + mix * c1
    for _ in range(int(rng.integers(4, 9))):
        c = saturated_color()
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        ry, rx = rng.uniform(0.08, 0.3) * height, rng.uniform(0.08, 0.3) * width
        if rng.random() < 0.5:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        img[mask] = c
    shade = 0.75 + 0.25 * _value_noise(height, width, 4, rng)
    img *= shade[..., None]
    img += rng.normal(0.0, 0.01, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)
