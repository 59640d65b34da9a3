"""Shared builders for tests that need files on disk."""
from pathlib import Path

from hazeflow.imaging import make_rng, save_png
from hazeflow.mcbm import synth_scene


def write_clean_dir(root: Path, count: int = 3, size: int = 32, seed: int = 0) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    rng = make_rng(seed)
    for i in range(count):
        save_png(synth_scene(size, size, rng), root / f"scene{i}.png")
    return root
