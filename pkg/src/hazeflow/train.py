"""Three-stage training of the toy flow network: pretrain, reflow, distill.

Pretrain samples points on the straight path between a synthetic hazy image
and its clean source and regresses the constant velocity ``J - A``. Reflow
replaces ground truth by pseudo pairs from a frozen teacher's one-step
estimate; distillation matches a frozen teacher's one-step output from
degraded inputs.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import dcp
from .losses import derivative_loss, perceptual_loss, transmission_loss
from .mcbm import GAMMA_RANGE, HazePair, HazeParams, NOISE_RANGE, QUALITY_RANGE, degrade
from .solver import one_step_pair

LOG_HEADER = ("iter", "l_der", "l_perc", "l_t", "total", "lr")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    stage: str = "pretrain"
    iterations: int = 2000
    lr_start: float = 2e-3
    lr_end: float = 1e-5
    batch_size: int = 8
    patch_size: int = 32
    w_transmission: float = 0.5
    seed: int = 0
    gamma_range: tuple[float, float] = GAMMA_RANGE
    fixed_light: tuple[float, float, float] | None = (1.0, 1.0, 1.0)
    augment: bool = True
    rounds: int = 1
    # network transmission input while pretraining: "dcp" (estimated from the state) or "true" (tau)
    t_input: str = "dcp"

    def __post_init__(self):
        if self.stage not in ("pretrain", "reflow", "distill"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if not self.lr_start >= self.lr_end > 0:
            raise ValueError("need lr_start >= lr_end > 0")
        if self.t_input not in ("dcp", "true"):
            raise ValueError(f"unknown t_input {self.t_input!r}")
        if self.iterations < 0 or self.batch_size < 1 or self.patch_size < 8:
            raise ValueError("iterations >= 0, batch_size >= 1 and patch_size >= 8 required")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gamma_range"] = list(self.gamma_range)
        d["fixed_light"] = None if self.fixed_light is None else list(self.fixed_light)
        return d


def cosine_lr(it: int, cfg: TrainConfig) -> float:
    frac = it / max(cfg.iterations - 1, 1)
    return cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + math.cos(math.pi * frac))


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


@dataclass
class TrainResult:
    net: object
    log: list[dict] = field(default_factory=list)

    def log_csv(self) -> str:
        return log_csv(self.log)


def log_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_HEADER)
    for r in rows:
        writer.writerow([r["iter"]] + [repr(float(r[k])) for k in LOG_HEADER[1:]])
    return buf.getvalue()


def _crop(arrays, size: int, rng: np.random.Generator):
    h, w = arrays[0].shape[:2]
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} smaller than patch size {size}")
    r = int(rng.integers(h - size + 1))
    c = int(rng.integers(w - size + 1))
    return [None if a is None or np.ndim(a) == 1 else a[r : r + size, c : c + size] for a in arrays]


def sample_trajectory_point(clean, transmission, light, u: float):
    """Point at fraction ``u`` of the per-pixel straight path from hazy (u=0) to clean (u=1).

    Returns ``(state, tau)`` with ``tau = T + u (1 - T)`` and ``state = tau J + (1 - tau) A``.
    """
    t = np.asarray(transmission, dtype=np.float32)
    tau = t + np.float32(u) * (1.0 - t)
    a = np.asarray(light, dtype=np.float32)
    state = tau[..., None] * clean + (1.0 - tau[..., None]) * a
    return state.astype(np.float32), tau.astype(np.float32)


def _guard(total: float, it: int) -> None:
    if not np.isfinite(total):
        raise TrainingDiverged(f"non-finite loss {total} at iteration {it}")


def _record(log, it, l_der, l_perc, l_t, total, lr):
    log.append(
        {"iter": it, "l_der": float(l_der), "l_perc": float(l_perc), "l_t": float(l_t), "total": float(total), "lr": lr}
    )


def _stack(images):
    return np.ascontiguousarray(np.stack(images).transpose(0, 3, 1, 2))


def _stack_fields(fields):
    return np.ascontiguousarray(np.stack(fields)[:, None])


def pretrain_losses(net, state, t_in, tau, clean, velocity_target, w: float):
    """Total pretrain loss on a batch of ``(B, C, H, W)`` arrays; returns the four loss tensors.

    ``t_in`` is what the network sees; ``tau`` is the true transmission of ``state``.
    """
    x = ad.Tensor(state)
    v, t_ref = net.forward(x, ad.Tensor(t_in))
    l_der = derivative_loss(v, velocity_target)
    l_perc = perceptual_loss(x + (1.0 - t_ref) * v, clean)
    l_t = transmission_loss(t_ref, tau)
    total = l_der + l_perc + w * l_t
    return l_der, l_perc, l_t, total


def pretrain(net, dataset: list[HazePair], cfg: TrainConfig, rng: np.random.Generator | None = None) -> TrainResult:
    rng = rng if rng is not None else np.random.Generator(np.random.PCG64(cfg.seed))
    if not dataset:
        raise ValueError("pretrain needs at least one pair")
    opt = Adam(net.parameters())
    log: list[dict] = []
    for it in range(cfg.iterations):
        lr = cosine_lr(it, cfg)
        states, t_ins, taus, cleans, targets = [], [], [], [], []
        for _ in range(cfg.batch_size):
            pair = dataset[int(rng.integers(len(dataset)))]
            light = pair.light if cfg.fixed_light is None else np.asarray(cfg.fixed_light, np.float32)
            j, t, a = _crop([pair.clean, pair.transmission, light], cfg.patch_size, rng)
            a = light if a is None else a
            state, tau = sample_trajectory_point(j, t, a, float(rng.uniform()))
            states.append(state)
            t_ins.append(dcp.estimate(state)[0] if cfg.t_input == "dcp" else tau)
            taus.append(tau)
            cleans.append(j)
            targets.append(j - a)
        l_der, l_perc, l_t, total = pretrain_losses(
            net,
            _stack(states),
            _stack_fields(t_ins),
            _stack_fields(taus),
            _stack(cleans),
            _stack(targets),
            cfg.w_transmission,
        )
        _guard(float(total.data), it)
        net.zero_grad()
        total.backward()
        opt.step(lr)
        _record(log, it, l_der.data, l_perc.data, l_t.data, total.data, lr)
    return TrainResult(net, log)


def _dcp_inputs(images, t_inputs):
    if t_inputs is not None:
        return [np.asarray(t, np.float32) for t in t_inputs]
    return [dcp.estimate(img)[0] for img in images]


def pseudo_pairs(teacher, images, t_inputs=None):
    """One-step pseudo clean images, spatial lights and refined transmissions from a frozen teacher."""
    t_inputs = _dcp_inputs(images, t_inputs)
    return [one_step_pair(img, t, teacher) for img, t in zip(images, t_inputs)]


def reflow_losses(net, state, gamma_state, tau, j_hat, velocity_target):
    x_in = ad.Tensor(gamma_state)
    t = ad.Tensor(tau)
    v, t_ref = net.forward(x_in, t)
    l_der = derivative_loss(v, velocity_target)
    l_perc = perceptual_loss(ad.Tensor(state) + (1.0 - t_ref) * v, j_hat)
    return l_der, l_perc, l_der + l_perc


def _reflow_batch(pairs, indices, cfg: TrainConfig, rng):
    states, gstates, taus, jhats, targets = [], [], [], [], []
    for k in indices:
        j_hat, a_hat, t_ref = _crop(pairs[k], cfg.patch_size, rng)
        state, tau = sample_trajectory_point(j_hat, t_ref, a_hat, float(rng.uniform()))
        gamma = float(rng.uniform(*cfg.gamma_range)) if cfg.augment else 1.0
        states.append(state)
        gstates.append(np.power(np.maximum(state, 0.0), np.float32(gamma)))
        taus.append(tau)
        jhats.append(j_hat)
        targets.append(j_hat - a_hat)
    return _stack(states), _stack(gstates), _stack_fields(taus), _stack(jhats), _stack(targets)


def reflow(teacher, student, hazy_images, cfg: TrainConfig, rng=None, t_inputs=None) -> TrainResult:
    """Adapt ``student`` to pseudo pairs from ``teacher`` (no transmission supervision)."""
    rng = rng if rng is not None else np.random.Generator(np.random.PCG64(cfg.seed))
    if not hazy_images:
        raise ValueError("reflow needs at least one hazy image")
    pairs = pseudo_pairs(teacher, hazy_images, t_inputs)
    opt = Adam(student.parameters())
    log: list[dict] = []
    for it in range(cfg.iterations):
        lr = cosine_lr(it, cfg)
        indices = rng.integers(len(pairs), size=cfg.batch_size)
        l_der, l_perc, total = reflow_losses(student, *_reflow_batch(pairs, indices, cfg, rng))
        _guard(float(total.data), it)
        student.zero_grad()
        total.backward()
        opt.step(lr)
        _record(log, it, l_der.data, l_perc.data, 0.0, total.data, lr)
    return TrainResult(student, log)


def random_degradation(rng: np.random.Generator) -> HazeParams:
    """All-switches-on degradation draw used as the distillation augmentation."""
    return HazeParams(
        beta=0.0,
        alpha=0.0,
        light=(1.0, 1.0, 1.0),
        mcbm_iterations=1,
        gaussian_sigma=1.0,
        gamma_exponent=float(rng.uniform(*GAMMA_RANGE)),
        noise_sigma=float(rng.uniform(*NOISE_RANGE)),
        quality=int(rng.integers(QUALITY_RANGE[0], QUALITY_RANGE[1] + 1)),
    )


def one_step_estimate(net, x: ad.Tensor, t: ad.Tensor) -> ad.Tensor:
    v, t_ref = net.forward(x, t)
    return x + (1.0 - t_ref) * v


def _distill_batch(images, t_inputs, indices, cfg: TrainConfig, rng):
    xs, gxs, ts = [], [], []
    for k in indices:
        img, t = _crop([images[k], t_inputs[k]], cfg.patch_size, rng)
        xs.append(img)
        gxs.append(degrade(img, random_degradation(rng), rng) if cfg.augment else img)
        ts.append(t)
    return _stack(xs), _stack(gxs), _stack_fields(ts)


def distill_loss(teacher, student, x, gx, t) -> ad.Tensor:
    t_batch = ad.Tensor(t)
    target = one_step_estimate(teacher, ad.Tensor(x), t_batch).data
    return perceptual_loss(one_step_estimate(student, ad.Tensor(gx), t_batch), target)


def _frozen(net):
    class _Ctx:
        def __enter__(self):
            self.flags = [p.requires_grad for p in net.parameters()]
            for p in net.parameters():
                p.requires_grad = False
            return net

        def __exit__(self, *exc):
            for p, f in zip(net.parameters(), self.flags):
                p.requires_grad = f

    return _Ctx()


def distill(teacher, student, hazy_images, cfg: TrainConfig, rng=None, t_inputs=None) -> TrainResult:
    """Match the teacher's one-step output on clean-path inputs from degraded copies of them."""
    rng = rng if rng is not None else np.random.Generator(np.random.PCG64(cfg.seed))
    if not hazy_images:
        raise ValueError("distill needs at least one hazy image")
    t_inputs = _dcp_inputs(hazy_images, t_inputs)
    log: list[dict] = []
    step = 0
    for round_idx in range(cfg.rounds):
        if round_idx > 0:
            teacher = student.copy()
        opt = Adam(student.parameters())
        with _frozen(teacher):
            for it in range(cfg.iterations):
                lr = cosine_lr(it, cfg)
                indices = rng.integers(len(hazy_images), size=cfg.batch_size)
                loss = distill_loss(teacher, student, *_distill_batch(hazy_images, t_inputs, indices, cfg, rng))
                _guard(float(loss.data), it)
                student.zero_grad()
                loss.backward()
                opt.step(lr)
                _record(log, step, 0.0, loss.data, 0.0, loss.data, lr)
                step += 1
    return TrainResult(student, log)


def probe_loss(
    stage: str, teacher, net, hazy_images, cfg: TrainConfig, seed: int = 0, t_inputs=None, repeats: int = 32
) -> float:
    """Stage loss of ``net`` on one fixed, seeded batch covering every image ``repeats`` times.

    Each repeat draws its own crop, trajectory point and augmentation, so the value
    estimates the expected stage loss; used to compare before and after training
    without the sampling noise of per-iteration logs.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    indices = np.tile(np.arange(len(hazy_images)), repeats)
    with _frozen(net), _frozen(teacher):
        if stage == "reflow":
            pairs = pseudo_pairs(teacher, hazy_images, t_inputs)
            _, _, total = reflow_losses(net, *_reflow_batch(pairs, indices, cfg, rng))
        elif stage == "distill":
            t_in = _dcp_inputs(hazy_images, t_inputs)
            total = distill_loss(teacher, net, *_distill_batch(hazy_images, t_in, indices, cfg, rng))
        else:
            raise ValueError(f"no probe for stage {stage!r}")
    return float(total.data)
