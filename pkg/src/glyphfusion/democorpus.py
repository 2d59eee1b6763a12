"""Procedural demo style corpus: textured warm-toned blobs on white.

The bundled images under ``assets/demo_style`` were produced by
``python -m glyphfusion.democorpus``; regenerate with the same seed to
reproduce them exactly.
"""

from __future__ import annotations

import colorsys
import sys
from pathlib import Path

import numpy as np

from .io import write_png

DEMO_STYLE_DIR = Path(__file__).parent / "assets" / "demo_style"
DEMO_COUNT = 25
DEMO_SEED = 2023


def style_image(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    cx, cy = rng.uniform(0.4, 0.6, 2)
    base_r = rng.uniform(0.2, 0.36)
    ang = np.arctan2(yy - cy, xx - cx)
    rad = np.hypot(xx - cx, yy - cy)
    # radius perturbed by a few random Fourier modes gives an organic outline
    r = np.full_like(ang, base_r)
    for k in range(2, 6):
        r += rng.uniform(0, 0.05) * np.cos(k * ang + rng.uniform(0, 2 * np.pi))
    edge = np.clip((r - rad) * size * 0.8, 0, 1)

    h0 = rng.uniform(0.0, 0.12)
    h1 = (h0 + rng.uniform(0.03, 0.1)) % 1.0
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(6, 14)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)))
    c0 = np.array(colorsys.hsv_to_rgb(h0, rng.uniform(0.75, 1.0), rng.uniform(0.7, 0.95)))
    c1 = np.array(colorsys.hsv_to_rgb(h1, rng.uniform(0.6, 1.0), rng.uniform(0.85, 1.0)))
    tex = c0[:, None, None] * (1 - stripes) + c1[:, None, None] * stripes
    for _ in range(int(rng.integers(2, 6))):
        sx, sy = rng.uniform(0.25, 0.75, 2)
        sr = rng.uniform(0.02, 0.06)
        spot = np.exp(-((xx - sx) ** 2 + (yy - sy) ** 2) / (2 * sr * sr))
        tex = tex * (1 - 0.6 * spot) + 0.6 * spot * np.array([0.35, 0.08, 0.02])[:, None, None]
    img = 1.0 + edge[None] * (tex - 1.0)
    return np.clip(img, 0, 1)


def make_corpus(n: int = DEMO_COUNT, seed: int = DEMO_SEED, size: int = 64) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [style_image(rng, size) for _ in range(n)]


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    dest = Path(argv[0]) if argv else DEMO_STYLE_DIR
    for i, img in enumerate(make_corpus()):
        write_png(dest / f"style_{i:02d}.png", img)
    print(f"wrote {DEMO_COUNT} images to {dest}")


if __name__ == "__main__":
    main()
