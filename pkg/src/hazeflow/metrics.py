"""Evaluation harness: haze-density proxy and batch scoring of manifests.

The proxy (mean dark channel) is an in-repo stand-in for a fog-density metric;
its values are not comparable to published fog-density numbers.
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dcp
from .dataset import load_manifest, load_pair
from .imaging import atomic_write, psnr, ssim
from .solver import OracleField, solve

REPORT_HEADER = ("id", "psnr", "ssim", "proxy_hazy", "proxy_dehazed")
METRIC_KEYS = REPORT_HEADER[1:]


def haze_density_proxy(image, patch_radius: int = 7) -> float:
    return float(np.mean(dcp.dark_channel(image, patch_radius), dtype=np.float64))


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)

    @property
    def aggregates(self) -> dict:
        out = {"count": len(self.rows)}
        for key in METRIC_KEYS:
            vals = np.array([r[key] for r in self.rows], dtype=np.float64)
            out[f"{key}_mean"] = float(np.mean(vals))
            out[f"{key}_std"] = float(np.std(vals))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for r in self.rows:
            writer.writerow([r["id"]] + [repr(float(r[k])) for k in METRIC_KEYS])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.aggregates, indent=2, sort_keys=True) + "\n"

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        csv_path, json_path = out_dir / "report.csv", out_dir / "summary.json"
        atomic_write(csv_path, self.to_csv().encode("utf-8"))
        atomic_write(json_path, self.to_json().encode("utf-8"))
        return csv_path, json_path


def dehaze_sample(pair, source, n_steps: int = 1, refresh_velocity: bool = True):
    """Dehaze one pair with either the oracle (``source == "oracle"``) or a velocity field.

    The oracle reads the true transmission; a learned field gets the DCP estimate.
    Returns ``(dehazed, trace)``.
    """
    if isinstance(source, str) and source == "oracle":
        if pair.clean is None:
            raise ValueError("oracle mode needs the clean image")
        velocity_field = OracleField(pair.clean, pair.light, pair.transmission)
        t_in = pair.transmission
    else:
        velocity_field = source
        t_in = dcp.estimate(pair.hazy)[0]
    return solve(pair.hazy, t_in, velocity_field, n_steps, refresh_velocity)


def evaluate_manifest(
    manifest_path, source, n_steps: int = 1, refresh_velocity: bool = True, jobs: int = 1
) -> EvalReport:
    """Score every sample of a manifest; ``source`` is ``"oracle"`` or a velocity field."""
    samples = load_manifest(manifest_path)

    def score(sample):
        pair = load_pair(sample)
        out, _ = dehaze_sample(pair, source, n_steps, refresh_velocity)
        if pair.clean is not None:
            p, s = psnr(out, pair.clean), ssim(out, pair.clean)
        else:
            p = s = float("nan")
        return {
            "id": sample.id,
            "psnr": p,
            "ssim": s,
            "proxy_hazy": haze_density_proxy(pair.hazy),
            "proxy_dehazed": haze_density_proxy(out),
        }

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        rows = list(pool.map(score, samples))
    rows.sort(key=lambda r: r["id"])
    return EvalReport(rows)
