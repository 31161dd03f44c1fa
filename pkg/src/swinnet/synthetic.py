"""Synthetic RGB-D pairs: a colored shape over a textured background, with a depth map
where the object pops out."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from . import dataio

SHAPES = ("disc", "rect", "triangle", "ellipse")


def shape_mask(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size] / size
    cy, cx = rng.uniform(0.35, 0.65, 2)
    r = rng.uniform(0.15, 0.25)
    if kind == "disc":
        m = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
    elif kind == "rect":
        hh, hw = rng.uniform(0.12, 0.25, 2)
        m = (np.abs(yy - cy) < hh) & (np.abs(xx - cx) < hw)
    elif kind == "triangle":
        m = (yy - cy < r) & (yy - cy > -r) & (np.abs(xx - cx) < (yy - cy + r) / 2)
    elif kind == "ellipse":
        a, b = rng.uniform(0.12, 0.3, 2)
        m = ((yy - cy) / a) ** 2 + ((xx - cx) / b) ** 2 < 1
    else:
        raise ValueError(f"unknown shape {kind!r}")
    return m.astype(np.float64)


def make_pair(index: int, size: int = 96, seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(rgb H x W x 3 in [0,1], depth H x W in [0,1], gt H x W binary)."""
    rng = np.random.default_rng([seed, index])
    gt = shape_mask(SHAPES[index % len(SHAPES)], size, rng)
    bg = rng.uniform(0.2, 0.8, 3)
    fg = rng.uniform(0, 1, 3)
    fg = np.where(np.abs(fg - bg) < 0.3, 1 - bg, fg)
    noise = rng.normal(0, 0.05, (size, size, 3))
    rgb = np.where(gt[..., None] > 0, fg, bg) + noise
    yy = np.linspace(0, 1, size)[:, None] * np.ones((1, size))
    depth = 0.2 + 0.3 * yy + 0.45 * gt + rng.normal(0, 0.02, (size, size))
    return np.clip(rgb, 0, 1), np.clip(depth, 0, 1), gt


def make_samples(n: int = 4, size: int = 96, seed: int = 0) -> list:
    out = []
    for i in range(n):
        rgb, depth, gt = make_pair(i, size, seed)
        out.append(dataio.make_sample(f"synth_{i:03d}", rgb, depth, gt, size))
    return out


def write_dataset(root, n: int = 4, size: int = 96, seed: int = 0) -> Path:
    """Write PNGs plus ``manifest.json`` under ``root``; returns the manifest path."""
    root = Path(root)
    for sub in ("rgb", "depth", "gt"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n):
        rgb, depth, gt = make_pair(i, size, seed)
        sid = f"synth_{i:03d}"
        Image.fromarray(np.round(rgb * 255).astype(np.uint8), mode="RGB").save(root / "rgb" / f"{sid}.png")
        dataio.write_gray_png(root / "depth" / f"{sid}.png", depth)
        dataio.write_gray_png(root / "gt" / f"{sid}.png", gt)
        entries.append(dataio.Entry(sid, root / "rgb" / f"{sid}.png", root / "depth" / f"{sid}.png",
                                    root / "gt" / f"{sid}.png"))
    manifest = root / "manifest.json"
    dataio.write_manifest(manifest, entries)
    return manifest
