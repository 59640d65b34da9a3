"""Quality and runtime versus Euler step count on synthetic pairs.

With ``--checkpoint`` the learned field is swept (DCP transmission input);
without it the exact oracle field is used, whose output must not depend on N.

    python scripts/step_sweep.py --steps 1 2 4 8 --out sweep.csv
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from hazeflow import dcp
from hazeflow.imaging import atomic_write, make_rng
from hazeflow.mcbm import generate_pair, synth_depth, synth_scene
from hazeflow.model import ToyFlowNet
from hazeflow.solver import OracleField, step_sweep, sweep_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, nargs="+", default=[1, 2, 4, 8])
    ap.add_argument("--checkpoint", type=Path)
    ap.add_argument("--samples", type=int, default=8)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--frozen-velocity", action="store_true")
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    net = ToyFlowNet.load(args.checkpoint)[0] if args.checkpoint else None
    light = (1.0, 1.0, 1.0) if net is not None else None
    totals = {n: {"N": n, "psnr": [], "ssim": [], "ms": []} for n in args.steps}
    for i in range(args.samples):
        rng = make_rng(args.seed + i)
        clean = synth_scene(args.size, args.size, rng)
        pair = generate_pair(clean, synth_depth(args.size, args.size, "fractal", rng), rng,
                             degrade_enabled=False, light=light)
        if net is None:
            field, t_in = OracleField(pair.clean, pair.light, pair.transmission), pair.transmission
        else:
            field, t_in = net, dcp.estimate(pair.hazy)[0]
        for row in step_sweep(pair.hazy, t_in, field, args.steps, pair.clean, not args.frozen_velocity):
            for key in ("psnr", "ssim", "ms"):
                totals[row["N"]][key].append(row[key])
    rows = [{k: (float(np.mean(v)) if isinstance(v, list) else v) for k, v in t.items()} for t in totals.values()]
    text = sweep_csv(rows)
    if args.out:
        atomic_write(args.out, text.encode())
    print(text, end="")


if __name__ == "__main__":
    main()
