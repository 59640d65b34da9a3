"""Toy two-branch velocity network and its checkpoint format.

Image branch: three 3x3 conv + SiLU layers over ``[I, T]`` (4 channels).
Transmission branch: a projection (two 1x1 convs) followed by one T-Block,
``conv1x1(silu(conv3x3(silu(t))))``. The branches are concatenated and two
1x1 heads predict the velocity and the refined transmission.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .imaging import as_field, as_image, atomic_write, check_same_size
from .losses import image_tensor

CKPT_MAGIC = b"HZW1"
T_LOW = 0.05
IMG_CH = 16
T_CH = 8

# (name, out_channels, in_channels, kernel)
LAYERS = (
    ("img1", IMG_CH, 4, 3),
    ("img2", IMG_CH, IMG_CH, 3),
    ("img3", IMG_CH, IMG_CH, 3),
    ("proj1", T_CH, 1, 1),
    ("proj2", T_CH, T_CH, 1),
    ("tblock_a", T_CH, T_CH, 3),
    ("tblock_b", T_CH, T_CH, 1),
    ("head_v", 3, IMG_CH + T_CH, 1),
    ("head_t", 1, IMG_CH + T_CH, 1),
)
HEADS = ("head_v", "head_t")
# layers whose outputs change when a given layer's parameters change
DOWNSTREAM = {
    "img1": {"img1", "img2", "img3", "head_v", "head_t"},
    "img2": {"img2", "img3", "head_v", "head_t"},
    "img3": {"img3", "head_v", "head_t"},
    "proj1": {"proj1", "proj2", "tblock_a", "tblock_b", "head_v", "head_t"},
    "proj2": {"proj2", "tblock_a", "tblock_b", "head_v", "head_t"},
    "tblock_a": {"tblock_a", "tblock_b", "head_v", "head_t"},
    "tblock_b": {"tblock_b", "head_v", "head_t"},
    "head_v": {"head_v"},
    "head_t": {"head_t"},
}


class CheckpointError(ValueError):
    pass


class ToyFlowNet:
    """Implements the velocity-field contract: ``net(image, t_map) -> (V, T_refined)``."""

    def __init__(self, seed: int = 0, dtype=np.float32, zero_heads: bool = True):
        rng = np.random.Generator(np.random.PCG64(seed))
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        for name, out_c, in_c, k in LAYERS:
            fan_in = in_c * k * k
            if zero_heads and name in HEADS:
                w = np.zeros((out_c, in_c, k, k))
            else:
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_c, in_c, k, k))
            self.params[f"{name}.weight"] = Tensor(w.astype(dtype), requires_grad=True)
            self.params[f"{name}.bias"] = Tensor(np.zeros(out_c, dtype=dtype), requires_grad=True)
        self.seed = seed

    # -- parameters -------------------------------------------------------
    def parameters(self):
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def copy(self) -> "ToyFlowNet":
        other = ToyFlowNet.__new__(ToyFlowNet)
        other.seed = self.seed
        other.params = OrderedDict(
            (k, Tensor(v.data.copy(), requires_grad=True)) for k, v in self.params.items()
        )
        return other

    def astype(self, dtype) -> "ToyFlowNet":
        other = self.copy()
        for p in other.params.values():
            p.data = p.data.astype(dtype)
        return other

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def _conv(self, name, x):
        return ad.conv2d(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"])

    # -- forward ----------------------------------------------------------
    def forward(self, image: Tensor, t_map: Tensor, memo=None, stale=frozenset()):
        """Batched forward on ``(B, 3, H, W)`` images and ``(B, 1, H, W)`` transmission maps.

        ``memo``/``stale`` let finite-difference checks reuse layer outputs that a
        single perturbed parameter cannot affect.
        """
        if image.shape[1] != 3 or t_map.shape[1] != 1 or image.shape[2:] != t_map.shape[2:]:
            raise ValueError(f"shape mismatch: image {image.shape}, transmission {t_map.shape}")

        def run(key, fn):
            if memo is not None and key in memo and key not in stale:
                return memo[key]
            out = fn()
            if memo is not None:
                memo[key] = out
            return out

        h = ad.concat([image, t_map], axis=1)
        for name in ("img1", "img2", "img3"):
            h = run(name, lambda h=h, name=name: ad.silu(self._conv(name, h)))
        t = run("proj1", lambda: ad.silu(self._conv("proj1", t_map)))
        t = run("proj2", lambda t=t: ad.silu(self._conv("proj2", t)))
        t = run("tblock_a", lambda t=t: ad.silu(self._conv("tblock_a", t)))
        t = run("tblock_b", lambda t=t: self._conv("tblock_b", t))
        fused = ad.concat([h, t], axis=1)
        velocity = run("head_v", lambda: self._conv("head_v", fused))
        t_refined = run(
            "head_t", lambda: T_LOW + (1.0 - T_LOW) * ad.sigmoid(self._conv("head_t", fused))
        )
        return velocity, t_refined

    def __call__(self, image, t_map):
        image = as_image(image)
        t_map = as_field(t_map)
        check_same_size(image, t_map)
        x = image_tensor(image, self.dtype)
        t = image_tensor(t_map, self.dtype)
        # detached weight views: no tape is recorded and shared tensors are never touched
        view = ToyFlowNet.__new__(ToyFlowNet)
        view.seed = self.seed
        view.params = OrderedDict((k, Tensor(p.data)) for k, p in self.params.items())
        v, t_ref = view.forward(x, t)
        return (
            v.data[0].transpose(1, 2, 0).astype(np.float32),
            t_ref.data[0, 0].astype(np.float32),
        )

    # -- checkpoint -------------------------------------------------------
    def to_bytes(self, config: dict | None = None) -> bytes:
        header = {
            "layers": [{"name": k, "shape": list(v.shape)} for k, v in self.params.items()],
            "config": config or {},
        }
        head = json.dumps(header, sort_keys=True).encode("utf-8")
        payload = b"".join(np.asarray(v.data, dtype="<f4").tobytes() for v in self.params.values())
        return CKPT_MAGIC + struct.pack("<I", len(head)) + head + payload

    def save(self, path, config: dict | None = None) -> None:
        atomic_write(path, self.to_bytes(config))

    @classmethod
    def from_bytes(cls, blob: bytes) -> tuple["ToyFlowNet", dict]:
        if blob[:4] != CKPT_MAGIC:
            raise CheckpointError("not a weight checkpoint (bad magic)")
        if len(blob) < 8:
            raise CheckpointError("truncated checkpoint")
        (n,) = struct.unpack_from("<I", blob, 4)
        if len(blob) < 8 + n:
            raise CheckpointError("truncated checkpoint header")
        try:
            header = json.loads(blob[8 : 8 + n].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
        net = cls()
        expected = [(k, list(v.shape)) for k, v in net.params.items()]
        try:
            found = [(d["name"], list(d["shape"])) for d in header["layers"]]
        except (KeyError, TypeError) as exc:
            raise CheckpointError(f"malformed checkpoint header: {exc}") from exc
        if found != expected:
            raise CheckpointError("checkpoint layout does not match ToyFlowNet")
        offset = 8 + n
        total = sum(int(np.prod(shape)) for _, shape in found)
        if len(blob) != offset + 4 * total:
            raise CheckpointError("checkpoint payload has trailing or missing bytes")
        for name, shape in found:
            count = int(np.prod(shape))
            chunk = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            net.params[name].data = chunk.reshape(shape).astype(np.float32)
            offset += 4 * count
        return net, header.get("config", {})

    @classmethod
    def load(cls, path) -> tuple["ToyFlowNet", dict]:
        try:
            blob = Path(path).read_bytes()
        except OSError as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        return cls.from_bytes(blob)
