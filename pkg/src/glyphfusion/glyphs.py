"""Stroke fonts, glyph rasterization, colour augmentation and word composition.

Stroke-font file format (plain text, ``#`` starts a comment)::

    strokefont v1 <name> <default_thickness>
    glyph <char> <n_polylines>
    <k> x1 y1 x2 y2 ... xk yk        # one line per polyline
    ...

Coordinates live in the unit square with x to the right and y downward.
Images are float arrays of shape ``3 x H x W`` with values in [0, 1].
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ArgumentError, ConfigurationError, GlyphMissingError, ParseError

ASSET_DIR = Path(__file__).parent / "assets"
FONT_DIR = ASSET_DIR / "fonts"
CHARSET = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
SUPERSAMPLE = 4


@dataclass
class StrokeFont:
    name: str
    glyphs: dict[str, list[np.ndarray]]
    default_thickness: float

    def __post_init__(self):
        if not 0 < self.default_thickness < 0.5:
            raise ParseError(f"default_thickness {self.default_thickness} not in (0, 0.5)")
        for ch, polys in self.glyphs.items():
            if not polys:
                raise ParseError(f"glyph {ch!r} has no polylines")
            for p in polys:
                if np.any(p < 0) or np.any(p > 1):
                    raise ParseError(f"glyph {ch!r}: coordinate out of unit square")

    def __contains__(self, ch: str) -> bool:
        return ch in self.glyphs

    def polylines(self, ch: str) -> list[np.ndarray]:
        if ch == " ":
            return []
        try:
            return self.glyphs[ch]
        except KeyError:
            raise GlyphMissingError(f"font {self.name!r} has no glyph for {ch!r}") from None

    def supports(self, text: str) -> bool:
        return all(ch == " " or ch in self.glyphs for ch in text)

    def to_text(self) -> str:
        lines = [f"strokefont v1 {self.name} {self.default_thickness:g}"]
        for ch, polys in self.glyphs.items():
            lines.append(f"glyph {ch} {len(polys)}")
            for p in polys:
                coords = " ".join(f"{v:.6g}" for v in np.asarray(p).reshape(-1))
                lines.append(f"{len(p)} {coords}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        from .io import atomic_write_text

        atomic_write_text(Path(path), self.to_text())


def parse_stroke_font(text: str) -> StrokeFont:
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line.split()))
    if not rows:
        raise ParseError("empty font file", line=1)
    lineno, head = rows[0]
    if len(head) != 4 or head[0] != "strokefont" or head[1] != "v1":
        raise ParseError("expected header 'strokefont v1 <name> <default_thickness>'", line=lineno)
    name = head[2]
    try:
        thickness = float(head[3])
    except ValueError:
        raise ParseError(f"bad thickness {head[3]!r}", line=lineno) from None
    if not 0 < thickness < 0.5:
        raise ParseError("default_thickness must lie in (0, 0.5)", line=lineno)

    glyphs: dict[str, list[np.ndarray]] = {}
    i = 1
    while i < len(rows):
        lineno, tok = rows[i]
        if tok[0] != "glyph" or len(tok) != 3:
            raise ParseError("expected 'glyph <char> <n_polylines>'", line=lineno)
        ch = tok[1]
        if len(ch) != 1:
            raise ParseError(f"glyph key must be one character, got {ch!r}", line=lineno)
        if ch in glyphs:
            raise ParseError(f"duplicate glyph {ch!r}", line=lineno)
        try:
            n = int(tok[2])
        except ValueError:
            raise ParseError(f"bad polyline count {tok[2]!r}", line=lineno) from None
        if n < 1:
            raise ParseError(f"glyph {ch!r} needs at least one polyline", line=lineno)
        polys = []
        for _ in range(n):
            i += 1
            if i >= len(rows):
                raise ParseError(f"glyph {ch!r}: missing polyline lines", line=lineno)
            lineno, tok = rows[i]
            try:
                k = int(tok[0])
                vals = [float(v) for v in tok[1:]]
            except ValueError:
                raise ParseError("non-numeric polyline data", line=lineno) from None
            if k < 1 or len(vals) != 2 * k:
                raise ParseError(f"polyline declares {k} points but has {len(vals)} numbers",
                                 line=lineno)
            pts = np.array(vals, dtype=float).reshape(k, 2)
            if np.any(pts < 0) or np.any(pts > 1):
                raise ParseError("coordinate out of unit square", line=lineno)
            polys.append(pts)
        glyphs[ch] = polys
        i += 1
    return StrokeFont(name, glyphs, thickness)


def load_stroke_font(path) -> StrokeFont:
    return parse_stroke_font(Path(path).read_text())


def bundled_font_names() -> list[str]:
    return sorted(p.stem for p in FONT_DIR.glob("*.sf"))


def bundled_font(name: str) -> StrokeFont:
    path = FONT_DIR / f"{name}.sf"
    if not path.exists():
        raise ConfigurationError(f"no bundled font named {name!r}; have {bundled_font_names()}")
    return load_stroke_font(path)


def bundled_fonts() -> list[StrokeFont]:
    return [bundled_font(n) for n in bundled_font_names()]


def resolve_font(ref) -> StrokeFont:
    """Accept a font object, a bundled font name, or a path to a font file."""
    if isinstance(ref, StrokeFont):
        return ref
    path = Path(ref)
    if path.suffix == ".sf" or path.exists():
        return load_stroke_font(path)
    return bundled_font(str(ref))


# -- rasterization --------------------------------------------------------------


@dataclass
class GlyphSpec:
    text: str
    font: StrokeFont
    image_size: int = 64
    foreground_color: tuple[float, float, float] = (0.0, 0.0, 0.0)
    background_color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    thickness_scale: float = 1.0
    slant: float = 0.0
    margin: float = 0.06

    def __post_init__(self):
        if not self.text:
            raise ArgumentError("glyph text must be non-empty")
        if self.image_size < 16:
            raise ArgumentError("image_size must be >= 16")
        if tuple(self.foreground_color) == tuple(self.background_color):
            raise ArgumentError("foreground and background colours must differ")
        if self.thickness_scale <= 0:
            raise ArgumentError("thickness_scale must be positive")
        if not 0 <= self.margin < 0.5:
            raise ArgumentError("margin must lie in [0, 0.5)")


def _segment_min_dist2(px, py, segs) -> np.ndarray:
    best = np.full(px.shape, np.inf)
    for (x0, y0), (x1, y1) in segs:
        dx, dy = x1 - x0, y1 - y0
        ll = dx * dx + dy * dy
        if ll == 0:
            d2 = (px - x0) ** 2 + (py - y0) ** 2
        else:
            t = np.clip(((px - x0) * dx + (py - y0) * dy) / ll, 0.0, 1.0)
            d2 = (px - x0 - t * dx) ** 2 + (py - y0 - t * dy) ** 2
        np.minimum(best, d2, out=best)
    return best


def stroke_coverage(polylines: Sequence[np.ndarray], radius: float, height: int, width: int,
                    supersample: int = SUPERSAMPLE) -> np.ndarray:
    """Fraction of each pixel covered by round-capped strokes of ``radius``.

    ``polylines`` are already in pixel coordinates (x, y).  Coverage is
    estimated on a regular ``supersample x supersample`` grid per pixel.
    """
    segs = []
    for p in polylines:
        p = np.asarray(p, dtype=float)
        if len(p) == 1:
            segs.append((p[0], p[0]))
        segs.extend(zip(p[:-1], p[1:]))
    if not segs:
        return np.zeros((height, width))
    offs = (np.arange(supersample) + 0.5) / supersample
    ys = (np.arange(height)[:, None] + offs[None, :]).reshape(-1)
    xs = (np.arange(width)[:, None] + offs[None, :]).reshape(-1)
    py, px = np.meshgrid(ys, xs, indexing="ij")
    inside = _segment_min_dist2(px, py, segs) <= radius * radius
    return inside.reshape(height, supersample, width, supersample).mean(axis=(1, 3))


def _layout(spec: GlyphSpec, width: int, height: int):
    """Place the text's polylines in pixel space; returns (polylines, stroke radius)."""
    n = len(spec.text)
    polys = []
    for i, ch in enumerate(spec.text):
        for p in spec.font.polylines(ch):
            q = np.asarray(p, dtype=float).copy()
            q[:, 0] += i + spec.slant * (1.0 - q[:, 1])
            polys.append(q)
    box_w = n + abs(spec.slant)
    min_x = min(0.0, spec.slant)
    avail_w = width * (1 - 2 * spec.margin)
    avail_h = height * (1 - 2 * spec.margin)
    scale = min(avail_w / box_w, avail_h)
    ox = (width - box_w * scale) / 2 - min_x * scale
    oy = (height - scale) / 2
    placed = [np.column_stack([ox + q[:, 0] * scale, oy + q[:, 1] * scale]) for q in polys]
    radius = 0.5 * spec.font.default_thickness * spec.thickness_scale * scale
    return placed, radius


def coverage(spec: GlyphSpec, supersample: int = SUPERSAMPLE) -> np.ndarray:
    """Anti-aliased stroke coverage in [0, 1] for the whole text, fit into the square."""
    s = spec.image_size
    polys, radius = _layout(spec, s, s)
    return stroke_coverage(polys, radius, s, s, supersample)


def colorize(cov: np.ndarray, fg, bg) -> np.ndarray:
    fg = np.asarray(fg, dtype=float).reshape(3, 1, 1)
    bg = np.asarray(bg, dtype=float).reshape(3, 1, 1)
    return np.clip(bg + cov[None] * (fg - bg), 0.0, 1.0)


def rasterize(spec: GlyphSpec, supersample: int = SUPERSAMPLE) -> np.ndarray:
    """Render ``spec.text`` into a ``3 x S x S`` image.

    The slant shear is applied to the glyph geometry first; the sheared text
    box is then scaled uniformly to fit inside the margins and centred.
    """
    return colorize(coverage(spec, supersample), spec.foreground_color, spec.background_color)


def rasterize_strip(spec: GlyphSpec, supersample: int = SUPERSAMPLE) -> np.ndarray:
    """Render each character into its own ``S x S`` cell, side by side."""
    cells = [rasterize(replace(spec, text=ch), supersample) for ch in spec.text]
    return np.concatenate(cells, axis=2)


# -- augmentation ---------------------------------------------------------------------


@dataclass
class AugmentPolicy:
    mode: str
    font_pool: list[StrokeFont] = field(default_factory=list)
    randomize_color: bool = True
    image_size: int = 64
    background_color: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.mode not in ("single_font", "multi_font"):
            raise ConfigurationError(f"unknown augment mode {self.mode!r}", key="mode")
        if not self.font_pool:
            raise ConfigurationError("font pool is empty", key="fonts")
        if self.mode == "single_font" and len(self.font_pool) != 1:
            raise ConfigurationError("single_font mode needs exactly one font", key="fonts")
        if self.mode == "multi_font" and len(self.font_pool) < 2:
            raise ConfigurationError("multi_font mode needs at least two fonts", key="fonts")


def random_color(rng: np.random.Generator) -> tuple[float, float, float]:
    """Uniform HSV draw with value >= 0.3, converted to RGB."""
    h, s, v = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.3, 1.0)
    return colorsys.hsv_to_rgb(h, s, v)


def contrasting_color(rng: np.random.Generator, background, min_distance: float = 0.25):
    bg = np.asarray(background, dtype=float)
    while True:
        c = random_color(rng)
        if np.linalg.norm(np.asarray(c) - bg) / np.sqrt(3) >= min_distance:
            return c


def sample_augmented_glyph(policy: AugmentPolicy, text: str, rng: np.random.Generator,
                           return_font: bool = False):
    """Render ``text`` with the policy's font choice and a random colour.

    Draw order per call is fixed: font index (multi-font only), then colour.
    """
    if not policy.font_pool:
        raise ConfigurationError("font pool is empty", key="fonts")
    if policy.mode == "multi_font":
        font = policy.font_pool[int(rng.integers(len(policy.font_pool)))]
    else:
        font = policy.font_pool[0]
    if policy.randomize_color:
        fg = contrasting_color(rng, policy.background_color)
    else:
        fg = (0.0, 0.0, 0.0)
    spec = GlyphSpec(text, font, policy.image_size, tuple(fg), tuple(policy.background_color))
    img = rasterize(spec)
    return (img, font) if return_font else img


# -- segmentation and composition ---------------------------------------------------


def segment_foreground(image: np.ndarray, background_color=(1.0, 1.0, 1.0),
                       tau: float = 0.5) -> np.ndarray:
    """Boolean mask of pixels whose RGB distance to the background exceeds ``tau``.

    Distance is Euclidean divided by sqrt(3), so it lies in [0, 1].
    """
    if not 0 < tau < 1:
        raise ArgumentError("tau must lie in (0, 1)")
    bg = np.asarray(background_color, dtype=float).reshape(3, 1, 1)
    dist = np.sqrt(((np.asarray(image) - bg) ** 2).sum(axis=0) / 3.0)
    return dist > tau


def dominant_color(image: np.ndarray, background_color=(1.0, 1.0, 1.0), tau: float = 0.25,
                   levels: int = 8) -> tuple[float, float, float]:
    """Most frequent foreground colour, found by coarse histogram then exact mode."""
    mask = segment_foreground(image, background_color, tau)
    if not mask.any():
        return (0.0, 0.0, 0.0)
    pix = np.asarray(image)[:, mask].T
    q8 = np.round(pix * 255).astype(np.int64)
    bins = np.minimum(pix * levels, levels - 1).astype(np.int64)
    codes = (bins[:, 0] * levels + bins[:, 1]) * levels + bins[:, 2]
    top = np.bincount(codes).argmax()
    members = q8[codes == top]
    exact, counts = np.unique(members, axis=0, return_counts=True)
    return tuple(float(v) / 255 for v in exact[counts.argmax()])


def _fit_cell(img: np.ndarray, size: int) -> np.ndarray:
    if img.shape[1:] == (size, size):
        return img
    from PIL import Image

    arr = (np.clip(img, 0, 1).transpose(1, 2, 0) * 255).round().astype(np.uint8)
    out = Image.fromarray(arr).resize((size, size), Image.BILINEAR)
    return np.asarray(out, dtype=float).transpose(2, 0, 1) / 255


def compose_word(stylized: np.ndarray, position: int, word_spec: GlyphSpec,
                 color="dominant") -> np.ndarray:
    """Place a stylised letter among plain renders of the rest of the word.

    Every letter gets an ``S x S`` cell so the output is ``3 x S x (n*S)``.
    ``color`` picks the plain letters' colour: ``"dominant"`` (dominant colour
    of the stylised image), ``"spec"`` (``word_spec.foreground_color``) or an
    explicit RGB triple.
    """
    n = len(word_spec.text)
    if not 0 <= position < n:
        raise ArgumentError(f"position {position} outside word of length {n}")
    s = word_spec.image_size
    if isinstance(color, str):
        if color == "dominant":
            fg = dominant_color(_fit_cell(stylized, s), word_spec.background_color)
        elif color == "spec":
            fg = word_spec.foreground_color
        else:
            raise ArgumentError(f"unknown colour policy {color!r}")
    else:
        fg = tuple(float(c) for c in color)
    if tuple(fg) == tuple(word_spec.background_color):
        fg = word_spec.foreground_color
    cells = []
    for i, ch in enumerate(word_spec.text):
        if i == position:
            cells.append(_fit_cell(np.asarray(stylized, dtype=float), s))
        else:
            cells.append(rasterize(replace(word_spec, text=ch, foreground_color=tuple(fg))))
    return np.concatenate(cells, axis=2)
