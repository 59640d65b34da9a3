"""Toy three-stage run: pretrain on synthetic pairs, reflow and distill on "real" haze.

Writes one checkpoint and loss log per stage and prints held-out PSNR after each.

    python scripts/train_toy.py --out runs/toy --iters 2000 --stage-iters 200
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from hazeflow import dcp
from hazeflow.imaging import atomic_write, make_rng, psnr
from hazeflow.mcbm import generate_pair, synth_depth, synth_scene
from hazeflow.model import ToyFlowNet
from hazeflow.solver import solve
from hazeflow.train import TrainConfig, distill, pretrain, probe_loss, reflow


def pairs(seeds, size, light, degrade):
    out = []
    for seed in seeds:
        rng = make_rng(seed)
        clean = synth_scene(size, size, rng)
        out.append(generate_pair(clean, synth_depth(size, size, "fractal", rng), rng, seed=seed,
                                 degrade_enabled=degrade, light=light))
    return out


def one_step_psnr(net, held_out):
    scores = []
    for p in held_out:
        out, _ = solve(p.hazy, dcp.estimate(p.hazy)[0], net, 1)
        scores.append(psnr(out, p.clean))
    return float(np.mean(scores))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/toy"))
    ap.add_argument("--pairs", type=int, default=64)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--stage-iters", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    ones = (1.0, 1.0, 1.0)
    train = pairs(range(args.seed, args.seed + args.pairs), args.size, ones, False)
    held = pairs(range(args.seed + 10_000, args.seed + 10_016), args.size, ones, False)
    real = [p.hazy for p in pairs(range(args.seed + 20_000, args.seed + 20_016), args.size, None, True)]
    summary = {"hazy_psnr": float(np.mean([psnr(p.hazy, p.clean) for p in held]))}

    cfg = TrainConfig(iterations=args.iters, seed=args.seed)
    net = pretrain(ToyFlowNet(seed=args.seed), train, cfg)
    _save(args.out / "pretrain", net, cfg)
    net = net.net
    summary["pretrain_psnr"] = one_step_psnr(net, held)

    for stage, fn in (("reflow", reflow), ("distill", distill)):
        cfg = TrainConfig(stage=stage, iterations=args.stage_iters, seed=args.seed + 1)
        before = probe_loss(stage, net, net, real, cfg)
        res = fn(net, net.copy(), real, cfg)
        summary[f"{stage}_probe"] = [before, probe_loss(stage, net, res.net, real, cfg)]
        _save(args.out / stage, res, cfg)
        net = res.net
        summary[f"{stage}_psnr"] = one_step_psnr(net, held)

    text = json.dumps(summary, indent=2, sort_keys=True)
    atomic_write(args.out / "summary.json", (text + "\n").encode())
    print(text)


def _save(prefix: Path, result, cfg):
    result.net.save(prefix.with_suffix(".hzw"), config=cfg.to_dict())
    atomic_write(prefix.with_suffix(".csv"), result.log_csv().encode())


if __name__ == "__main__":
    main()
