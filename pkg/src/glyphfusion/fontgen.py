"""Generator for the bundled stroke fonts.

The skeletons below are hand-placed polylines in the unit square (x to the
right, y downward).  Five variants are derived from them by changing stroke
thickness, baking in a shear, condensing, and corner-smoothing, so the set
has visibly different shapes for multi-font training.

Run ``python -m glyphfusion.fontgen <dir>`` to regenerate the font files.
"""

from __future__ import annotations

import math
import sys
from pathlib import Path

import numpy as np

L, R, T, B = 0.22, 0.78, 0.12, 0.88
CX, MY = 0.5, 0.5


def arc(cx, cy, rx, ry, a0, a1, step=45.0):
    """Points on an ellipse arc from angle ``a0`` to ``a1`` (degrees, y down)."""
    n = max(2, int(math.ceil(abs(a1 - a0) / step)) + 1)
    ang = np.radians(np.linspace(a0, a1, n))
    return [(cx + rx * math.cos(a), cy - ry * math.sin(a)) for a in ang]


def skeletons(step: float = 45.0) -> dict[str, list[list[tuple[float, float]]]]:
    a = lambda *args: arc(*args, step=step)  # noqa: E731
    g = {
        "A": [[(L, B), (CX, T), (R, B)], [(0.34, 0.62), (0.66, 0.62)]],
        "B": [[(L, T), (L, B)],
              [(L, T), (0.58, T)] + a(0.58, 0.31, 0.18, 0.19, 90, -90) + [(L, MY)],
              [(L, MY), (0.6, MY)] + a(0.6, 0.69, 0.18, 0.19, 90, -90) + [(L, B)]],
        "C": [a(CX, MY, 0.28, 0.38, 45, 315)],
        "D": [[(L, T), (L, B)], [(L, T), (0.45, T)] + a(0.45, MY, 0.33, 0.38, 90, -90) + [(L, B)]],
        "E": [[(R, T), (L, T), (L, B), (R, B)], [(L, MY), (0.68, MY)]],
        "F": [[(R, T), (L, T), (L, B)], [(L, MY), (0.68, MY)]],
        "G": [a(CX, MY, 0.28, 0.38, 40, 360) + [(0.55, MY)]],
        "H": [[(L, T), (L, B)], [(R, T), (R, B)], [(L, MY), (R, MY)]],
        "I": [[(CX, T), (CX, B)], [(0.35, T), (0.65, T)], [(0.35, B), (0.65, B)]],
        "J": [[(0.4, T), (R, T)], [(0.66, T), (0.66, 0.68)] + a(0.45, 0.68, 0.21, 0.2, 0, -180)],
        "K": [[(L, T), (L, B)], [(R, T), (L, 0.6)], [(0.4, 0.45), (R, B)]],
        "L": [[(L, T), (L, B), (R, B)]],
        "M": [[(L, B), (L, T), (CX, 0.6), (R, T), (R, B)]],
        "N": [[(L, B), (L, T), (R, B), (R, T)]],
        "O": [a(CX, MY, 0.28, 0.38, 0, 360)],
        "P": [[(L, B), (L, T), (0.58, T)] + a(0.58, 0.31, 0.2, 0.19, 90, -90) + [(L, MY)]],
        "Q": [a(CX, MY, 0.28, 0.38, 0, 360), [(0.56, 0.7), (0.82, 0.92)]],
        "R": [[(L, B), (L, T), (0.58, T)] + a(0.58, 0.31, 0.2, 0.19, 90, -90) + [(L, MY)],
              [(0.5, MY), (R, B)]],
        "S": [a(0.5, 0.31, 0.26, 0.19, 30, 270) + a(0.5, 0.69, 0.26, 0.19, 90, -150)[1:]],
        "T": [[(L, T), (R, T)], [(CX, T), (CX, B)]],
        "U": [[(L, T), (L, 0.62)] + a(CX, 0.62, 0.28, 0.26, 180, 360) + [(R, T)]],
        "V": [[(L, T), (CX, B), (R, T)]],
        "W": [[(0.15, T), (0.32, B), (CX, 0.4), (0.68, B), (0.85, T)]],
        "X": [[(L, T), (R, B)], [(R, T), (L, B)]],
        "Y": [[(L, T), (CX, MY), (R, T)], [(CX, MY), (CX, B)]],
        "Z": [[(L, T), (R, T), (L, B), (R, B)]],
        "0": [a(CX, MY, 0.26, 0.38, 0, 360), [(0.65, 0.25), (0.35, 0.75)]],
        "1": [[(0.35, 0.25), (0.52, T), (0.52, B)], [(0.35, B), (0.69, B)]],
        "2": [a(0.5, 0.33, 0.27, 0.21, 160, -35) + [(L, B), (R, B)]],
        "3": [a(0.5, 0.31, 0.25, 0.19, 150, -90) + a(0.5, 0.69, 0.27, 0.19, 90, -150)[1:]],
        "4": [[(0.62, B), (0.62, T), (L, 0.66), (R, 0.66)]],
        "5": [[(R, T), (0.28, T), (0.26, MY)] + a(0.5, 0.66, 0.28, 0.22, 140, -150)],
        "6": [[(0.62, T), (0.27, 0.6)], a(0.5, 0.66, 0.27, 0.22, 0, 360)],
        "7": [[(L, T), (R, T), (0.42, B)]],
        "8": [a(0.5, 0.31, 0.22, 0.19, -90, 270), a(0.5, 0.69, 0.26, 0.19, 90, 450)],
        "9": [a(0.5, 0.34, 0.27, 0.22, 0, 360), [(0.77, 0.36), (0.42, B)]],
    }
    return g


def chaikin(poly, rounds=2):
    pts = np.asarray(poly, dtype=float)
    closed = len(pts) > 2 and np.allclose(pts[0], pts[-1])
    for _ in range(rounds):
        if len(pts) < 3:
            break
        q = 0.75 * pts[:-1] + 0.25 * pts[1:]
        r = 0.25 * pts[:-1] + 0.75 * pts[1:]
        mid = np.empty((2 * len(q), 2))
        mid[0::2], mid[1::2] = q, r
        pts = np.vstack([mid, mid[:1]]) if closed else np.vstack([pts[:1], mid, pts[-1:]])
    return pts


def _transform(glyphs, fn):
    return {ch: [np.clip(fn(np.asarray(p, dtype=float)), 0.0, 1.0) for p in polys]
            for ch, polys in glyphs.items()}


def variants() -> dict[str, tuple[float, dict]]:
    angular = skeletons(step=45.0)
    smooth = skeletons(step=12.0)
    out = {}
    out["mono-a"] = (0.09, _transform(angular, lambda p: p))
    out["mono-bold"] = (0.15, _transform(angular, lambda p: p))
    out["round-light"] = (0.06, _transform(smooth, lambda p: chaikin(p, rounds=1)))

    def shear(p, k=0.18):
        q = p.copy()
        q[:, 0] = 0.09 + 0.82 * q[:, 0] + k * (0.5 - q[:, 1])
        return q

    out["slant-a"] = (0.08, _transform(angular, shear))

    def condense(p):
        q = chaikin(p, rounds=1)
        q[:, 0] = 0.5 + 0.72 * (q[:, 0] - 0.5)
        return q

    out["narrow-round"] = (0.12, _transform(smooth, condense))
    return out


def main(argv=None):
    from .glyphs import StrokeFont

    argv = sys.argv[1:] if argv is None else argv
    dest = Path(argv[0]) if argv else Path(__file__).parent / "assets" / "fonts"
    dest.mkdir(parents=True, exist_ok=True)
    for name, (thick, glyphs) in variants().items():
        font = StrokeFont(name, {ch: [np.round(p, 4) for p in ps] for ch, ps in glyphs.items()}, thick)
        font.save(dest / f"{name}.sf")
        print(dest / f"{name}.sf")


if __name__ == "__main__":
    main()
