"""Finite-difference verification of tape gradients."""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .autodiff import Tensor
from .losses import derivative_loss, image_tensor, perceptual_loss, transmission_loss
from .model import DOWNSTREAM

GRAD_FLOOR = 1e-6


def check_gradients(
    params: Mapping[str, Tensor] | list[Tensor],
    loss_fn: Callable[..., Tensor],
    h: float = 1e-3,
    floor: float = GRAD_FLOOR,
) -> float:
    """Max relative error between tape and central-difference gradients.

    Only entries with ``|analytic| > floor`` are compared. ``loss_fn`` is called
    with ``perturbed=<param name>`` during differencing (``None`` for the tape
    pass) so callers may skip recomputing unaffected work. Parameters are
    perturbed in place and restored; use float64 parameters.
    """
    if not isinstance(params, Mapping):
        params = {str(i): p for i, p in enumerate(params)}
    for p in params.values():
        p.grad = None
    loss_fn(perturbed=None).backward()
    analytic = {k: np.zeros_like(p.data) if p.grad is None else p.grad.copy() for k, p in params.items()}

    flags = {k: p.requires_grad for k, p in params.items()}
    for p in params.values():
        p.requires_grad = False
    worst = 0.0
    try:
        for name, p in params.items():
            flat = p.data.reshape(-1)
            gflat = analytic[name].reshape(-1)
            for i in np.flatnonzero(np.abs(gflat) > floor):
                orig = flat[i]
                flat[i] = orig + h
                up = float(loss_fn(perturbed=name).data)
                flat[i] = orig - h
                down = float(loss_fn(perturbed=name).data)
                flat[i] = orig
                numeric = (up - down) / (2.0 * h)
                err = abs(numeric - gflat[i]) / max(abs(numeric), abs(gflat[i]))
                worst = max(worst, err)
    finally:
        for name, p in params.items():
            p.requires_grad = flags[name]
    return worst


def grad_check(net, hazy, t_map, loss: str = "der", seed: int = 0, h: float = 1e-3) -> float:
    """Check every parameter of a ``ToyFlowNet`` on one small input for one loss path.

    ``loss`` is ``"der"`` (velocity vs. a random ``J - A``), ``"T"`` (refined vs.
    a random transmission) or ``"perc"`` (one-step estimate vs. a random clean image).
    """
    net = net.astype(np.float64)
    rng = np.random.Generator(np.random.PCG64(seed))
    x = image_tensor(hazy, np.float64)
    t = image_tensor(t_map, np.float64)
    if loss == "der":
        target = rng.uniform(-1.0, 0.0, size=x.shape)

        def objective(v, t_ref):
            return derivative_loss(v, target)

    elif loss == "T":
        target = rng.uniform(0.05, 1.0, size=t.shape)

        def objective(v, t_ref):
            return transmission_loss(t_ref, target)

    elif loss == "perc":
        target = rng.uniform(0.0, 1.0, size=x.shape)

        def objective(v, t_ref):
            return perceptual_loss(x + (1.0 - t_ref) * v, target)

    else:
        raise ValueError(f"unknown loss path {loss!r}")

    memo: dict = {}

    def fn(perturbed=None):
        if perturbed is None:
            memo.clear()
            out = objective(*net.forward(x, t, memo=memo))
            # detached copies of the unperturbed layer outputs
            memo.update({k: Tensor(v.data) for k, v in memo.items()})
            return out
        layer = perturbed.split(".")[0]
        return objective(*net.forward(x, t, memo=dict(memo), stale=DOWNSTREAM[layer]))

    return check_gradients(net.params, fn, h=h)
