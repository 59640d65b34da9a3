"""Command-line entry point: ``hazeflow {gen-haze,train,dehaze,eval,density}``.

Any flag can also come from a JSON file passed with ``--config`` (keys are the
flag destinations, e.g. ``"n_factor"``); explicit flags win. The default seed
is taken from ``HZF_SEED`` when set. Exit codes: 0 ok, 1 runtime failure,
2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path


from . import dcp
from .dataset import ManifestError, generate_dataset, list_images, load_manifest, load_pair
from .imaging import ImageFormatError, atomic_write, load_image, make_rng, save_field, save_png
from .mcbm import N_FACTORS, SIGMAS, generate_density
from .metrics import dehaze_sample, evaluate_manifest
from .model import CheckpointError, ToyFlowNet
from .solver import solve
from .train import TrainConfig, TrainingDiverged, distill, pretrain, reflow

log = logging.getLogger("hazeflow")

RUNTIME_ERRORS = (ValueError, OSError, ImageFormatError, CheckpointError, ManifestError, TrainingDiverged)


def _default_seed() -> int:
    raw = os.environ.get("HZF_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"HZF_SEED must be an integer, got {raw!r}")


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 128x96, got {text!r}")
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return h, w


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hazeflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    parser.set_defaults(_subparsers=sub)

    def common(p):
        p.add_argument("--log-level", default="INFO")
        p.add_argument("--config", type=Path, help="JSON file of flag defaults")
        p.add_argument("--seed", type=int, default=_default_seed())
        p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("gen-haze", help="synthesise a paired non-homogeneous haze dataset")
    common(p)
    p.add_argument("--clean-dir", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--depth", default="fractal", help="ramp | radial | fractal | directory of depth maps")
    p.add_argument("--count", type=int)
    p.add_argument("--no-degrade", action="store_true")
    p.add_argument("--fixed-light", action="store_true", help="use A = (1, 1, 1) (pretraining data)")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("train", help="run one training stage")
    common(p)
    p.add_argument("--stage", choices=("pretrain", "reflow", "distill"), required=True)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--hazy-dir", type=Path)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--teacher", type=Path)
    p.add_argument("--log-csv", type=Path, help="loss log path (default: <out>.csv)")
    p.add_argument("--lr-start", type=float, default=2e-3)
    p.add_argument("--lr-end", type=float, default=1e-5)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--patch-size", type=int, default=32)
    p.add_argument("--w-transmission", type=float, default=0.5)
    p.add_argument("--rounds", type=int, default=1)

    p = sub.add_parser("dehaze", help="dehaze images with a checkpoint or the oracle")
    common(p)
    p.add_argument("--in", dest="inputs", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--oracle-manifest", type=Path)
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--frozen-velocity", action="store_true")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--dump-t", action="store_true", help="also write the refined transmission (.hzf)")

    p = sub.add_parser("eval", help="score a manifest")
    common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--frozen-velocity", action="store_true")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("density", help="generate one density map and a preview")
    common(p)
    p.add_argument("--size", type=_size, required=True)
    p.add_argument("--n-factor", type=int, choices=N_FACTORS)
    p.add_argument("--sigma", type=float, choices=SIGMAS)
    p.add_argument("--out", type=Path, required=True, help="output prefix; writes <out>.hzf and <out>.png")
    return parser


def parse_args(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    early, _ = pre.parse_known_args(argv)
    choices = parser.get_default("_subparsers").choices
    if early.config is not None and argv and argv[0] in choices:
        try:
            overrides = json.loads(early.config.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {early.config}: {exc}")
        if not isinstance(overrides, dict):
            parser.error("config file must hold a JSON object")
        subparser = choices[argv[0]]
        known = {a.dest: a for a in subparser._actions}
        unknown = sorted(set(overrides) - set(known) - {"command"})
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        overrides.pop("command", None)
        # string defaults still pass through each flag's type converter
        subparser.set_defaults(**overrides)
        for action in subparser._actions:
            if action.dest in overrides:
                action.required = False
    args = parser.parse_args(argv)
    del args._subparsers
    return parser, args


def _resolved(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())}


# ---------------------------------------------------------------------------


def cmd_gen_haze(parser, args) -> int:
    if not args.clean_dir.is_dir():
        parser.error(f"--clean-dir {args.clean_dir} is not a directory")
    clean = list_images(args.clean_dir)
    if not clean:
        raise ManifestError(f"no images in {args.clean_dir}")
    path = generate_dataset(
        clean,
        args.out,
        count=args.count,
        seed=args.seed,
        depth=str(args.depth),
        degrade=not args.no_degrade,
        light=(1.0, 1.0, 1.0) if args.fixed_light else None,
        jobs=args.jobs,
        force=args.force,
    )
    log.info("wrote %s", path)
    return 0


def _hazy_images(args):
    if args.manifest is not None:
        return [load_pair(s).hazy for s in load_manifest(args.manifest)]
    return [load_image(p) for p in list_images(args.hazy_dir)]


def cmd_train(parser, args) -> int:
    if (args.manifest is None) == (args.hazy_dir is None):
        parser.error("give exactly one of --manifest or --hazy-dir")
    if args.stage == "pretrain":
        if args.manifest is None:
            parser.error("pretrain needs --manifest (clean/transmission ground truth)")
        if args.teacher is not None:
            parser.error("--teacher is only used by reflow and distill")
    elif args.teacher is None:
        parser.error(f"--stage {args.stage} requires --teacher")
    cfg = TrainConfig(
        stage=args.stage,
        iterations=args.iters,
        lr_start=args.lr_start,
        lr_end=args.lr_end,
        batch_size=args.batch_size,
        patch_size=args.patch_size,
        w_transmission=args.w_transmission,
        seed=args.seed,
        rounds=args.rounds,
    )
    rng = make_rng(args.seed)
    if args.stage == "pretrain":
        pairs = [load_pair(s) for s in load_manifest(args.manifest)]
        result = pretrain(ToyFlowNet(seed=args.seed), pairs, cfg, rng)
    else:
        teacher, _ = ToyFlowNet.load(args.teacher)
        images = _hazy_images(args)
        stage = reflow if args.stage == "reflow" else distill
        result = stage(teacher, teacher.copy(), images, cfg, rng)
    result.net.save(args.out, config=cfg.to_dict())
    log_path = args.log_csv or args.out.with_suffix(".csv")
    atomic_write(log_path, result.log_csv().encode("utf-8"))
    if result.log:
        log.info("loss %.5f -> %.5f over %d iterations", result.log[0]["total"], result.log[-1]["total"], len(result.log))
    log.info("wrote %s and %s", args.out, log_path)
    return 0


def _write_output(image, t_refined, out_dir: Path, stem: str, dump_t: bool):
    save_png(image, out_dir / f"{stem}.png")
    if dump_t:
        save_field(t_refined, out_dir / f"{stem}_t.hzf")


def cmd_dehaze(parser, args) -> int:
    if (args.checkpoint is None) == (args.oracle_manifest is None):
        parser.error("give exactly one of --checkpoint or --oracle-manifest")
    if args.steps < 1:
        parser.error("--steps must be >= 1")
    refresh = not args.frozen_velocity
    args.out.mkdir(parents=True, exist_ok=True)

    if args.oracle_manifest is not None:
        samples = load_manifest(args.oracle_manifest)

        def work(sample):
            out, trace = dehaze_sample(load_pair(sample), "oracle", args.steps, refresh)
            _write_output(out, trace.t_refined, args.out, sample.id, args.dump_t)

        items = samples
    else:
        if args.inputs is None:
            parser.error("--in is required with --checkpoint")
        net, _ = ToyFlowNet.load(args.checkpoint)
        if args.inputs.is_dir():
            items = list_images(args.inputs)
        elif args.inputs.is_file():
            items = [args.inputs]
        else:
            raise ImageFormatError(f"no such input: {args.inputs}")

        def work(path):
            hazy = load_image(path)
            t_in, _ = dcp.estimate(hazy)
            out, trace = solve(hazy, t_in, net, args.steps, refresh)
            _write_output(out, trace.t_refined, args.out, path.stem, args.dump_t)

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        list(pool.map(work, items))
    log.info("dehazed %d image(s) into %s", len(items), args.out)
    return 0


def cmd_eval(parser, args) -> int:
    if args.oracle == (args.checkpoint is not None):
        parser.error("give exactly one of --checkpoint or --oracle")
    source = "oracle" if args.oracle else ToyFlowNet.load(args.checkpoint)[0]
    report = evaluate_manifest(args.manifest, source, args.steps, not args.frozen_velocity, args.jobs)
    csv_path, json_path = report.write(args.out)
    agg = report.aggregates
    log.info("%d samples: psnr %.3f dB, ssim %.4f", agg["count"], agg["psnr_mean"], agg["ssim_mean"])
    log.info("wrote %s and %s", csv_path, json_path)
    return 0


def cmd_density(parser, args) -> int:
    h, w = args.size
    rng = make_rng(args.seed)
    n_factor = args.n_factor if args.n_factor is not None else int(rng.choice(N_FACTORS))
    sigma = args.sigma if args.sigma is not None else float(rng.choice(SIGMAS))
    density = generate_density(h, w, h * w * n_factor, sigma, rng)
    save_field(density, args.out.with_name(args.out.name + ".hzf"))
    save_png(density, args.out.with_name(args.out.name + ".png"))
    log.info("density %dx%d n=%d sigma=%g -> %s.{hzf,png}", h, w, h * w * n_factor, sigma, args.out)
    return 0


COMMANDS = {
    "gen-haze": cmd_gen_haze,
    "train": cmd_train,
    "dehaze": cmd_dehaze,
    "eval": cmd_eval,
    "density": cmd_density,
}


def _configure_logging(level: str) -> None:
    # fresh handler per run so in-process callers see output on the current stderr
    for h in list(log.handlers):
        log.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.addHandler(handler)
    log.setLevel(getattr(logging, str(level).upper(), logging.INFO))
    log.propagate = False


def main(argv=None) -> int:
    try:
        parser, args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    _configure_logging(args.log_level)
    log.info("seed=%d", args.seed)
    log.info("config %s", json.dumps(_resolved(args), sort_keys=True))
    try:
        return COMMANDS[args.command](parser, args)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    except RUNTIME_ERRORS as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
