"""Paired dataset generation and the JSON manifest that describes it.

Layout under the output directory::

    manifest.json
    clean/<stem>.png         copy of the source image
    depth/<id>.hzf           depth (raw field)
    hazy/<id>.hzf            hazy image at full precision (3-channel raw)
    hazy/<id>.png            8-bit preview
    transmission/<id>.hzf    ground-truth transmission

All manifest paths are relative to the manifest's directory.
"""
from __future__ import annotations

import json
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import (
    atomic_write,
    load_field,
    load_image,
    make_rng,
    save_field,
    save_png,
    save_raw_image,
)
from .mcbm import HazePair, HazeParams, generate_pair, synth_depth

MANIFEST_NAME = "manifest.json"
DEPTH_KINDS = ("ramp", "radial", "fractal")
IMAGE_SUFFIXES = (".png", ".hzf")


class ManifestError(ValueError):
    pass


@dataclass
class Sample:
    id: str
    clean: Path | None
    depth: Path
    hazy: Path
    transmission: Path
    params: HazeParams
    seed: int

    @property
    def light(self) -> np.ndarray:
        return np.asarray(self.params.light, dtype=np.float32)


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ManifestError(f"not a directory: {directory}")
    # one file per stem; the full-precision raw file wins over an 8-bit preview
    by_stem: dict[str, Path] = {}
    for p in sorted(directory.iterdir()):
        if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file():
            if p.stem not in by_stem or p.suffix.lower() == ".hzf":
                by_stem[p.stem] = p
    return [by_stem[s] for s in sorted(by_stem)]


def _depth_for(stem: str, depth: str, shape, rng) -> np.ndarray:
    if depth in DEPTH_KINDS:
        return synth_depth(shape[0], shape[1], depth, rng)
    for suffix in (".hzf", ".png"):
        candidate = Path(depth) / f"{stem}{suffix}"
        if candidate.is_file():
            field = load_field(candidate)
            if field.shape != tuple(shape):
                raise ManifestError(f"depth {candidate} is {field.shape}, image is {tuple(shape)}")
            return field
    raise ManifestError(f"no depth map for {stem!r} in {depth}")


def generate_dataset(
    clean_paths,
    out_dir,
    count: int | None = None,
    seed: int = 0,
    depth: str = "fractal",
    degrade: bool = True,
    light=None,
    jobs: int = 1,
    force: bool = False,
) -> Path:
    """Synthesise ``count`` pairs (cycling over ``clean_paths``); sample ``i`` uses seed ``seed + i``."""
    clean_paths = [Path(p) for p in clean_paths]
    if not clean_paths:
        raise ManifestError("no clean images given")
    out_dir = Path(out_dir)
    manifest_path = out_dir / MANIFEST_NAME
    if manifest_path.exists() and not force:
        raise ManifestError(f"{manifest_path} exists (use --force to overwrite)")
    count = len(clean_paths) if count is None else int(count)
    if count < 1:
        raise ManifestError("count must be >= 1")
    for sub in ("clean", "depth", "hazy", "transmission"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    copied = {}
    for src in clean_paths:
        dst = Path("clean") / src.name
        if dst.name in copied.values():
            raise ManifestError(f"duplicate clean image name {src.name}")
        shutil.copyfile(src, out_dir / dst)
        copied[src] = dst.name

    def make(i: int) -> dict:
        src = clean_paths[i % len(clean_paths)]
        sample_seed = seed + i
        rng = make_rng(sample_seed)
        clean = load_image(src)
        d = _depth_for(src.stem, depth, clean.shape[:2], rng)
        pair = generate_pair(clean, d, rng, seed=sample_seed, degrade_enabled=degrade, light=light)
        sid = f"{i:04d}_{src.stem}"
        rel = {
            "depth": f"depth/{sid}.hzf",
            "hazy": f"hazy/{sid}.hzf",
            "hazy_preview": f"hazy/{sid}.png",
            "transmission": f"transmission/{sid}.hzf",
        }
        save_field(pair.depth, out_dir / rel["depth"])
        save_raw_image(pair.hazy, out_dir / rel["hazy"])
        save_png(pair.hazy, out_dir / rel["hazy_preview"])
        save_field(pair.transmission, out_dir / rel["transmission"])
        return {"id": sid, "clean": f"clean/{copied[src]}", **rel, "seed": sample_seed, "params": pair.params.to_dict()}

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        samples = list(pool.map(make, range(count)))
    doc = {"version": 1, "seed": seed, "depth": depth if depth in DEPTH_KINDS else "dir", "samples": samples}
    atomic_write(manifest_path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return manifest_path


def load_manifest(path, check_files: bool = True) -> list[Sample]:
    """Parse a manifest; with ``check_files`` every missing file is reported in one error."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    root = path.parent
    samples = []
    for entry in doc.get("samples", []):
        try:
            samples.append(
                Sample(
                    id=entry["id"],
                    clean=root / entry["clean"] if entry.get("clean") else None,
                    depth=root / entry["depth"],
                    hazy=root / entry["hazy"],
                    transmission=root / entry["transmission"],
                    params=HazeParams.from_dict(entry["params"]),
                    seed=int(entry["seed"]),
                )
            )
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"malformed manifest entry {entry!r}: {exc}") from exc
    if not samples:
        raise ManifestError(f"manifest {path} lists no samples")
    if check_files:
        missing = [
            str(p)
            for s in samples
            for p in (s.clean, s.depth, s.hazy, s.transmission)
            if p is not None and not p.is_file()
        ]
        if missing:
            raise ManifestError("missing files:\n  " + "\n  ".join(missing))
    return samples


def load_pair(sample: Sample) -> HazePair:
    clean = load_image(sample.clean) if sample.clean is not None else None
    return HazePair(
        clean=clean,
        hazy=load_image(sample.hazy),
        transmission=load_field(sample.transmission),
        light=sample.light,
        depth=load_field(sample.depth),
        params=sample.params,
    )
