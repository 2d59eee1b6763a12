"""Candidate scoring and ranking.

Two scores place each generated image on a plane: how recognisable the
target character is (a small CNN classifier trained on augmented stroke-font
renders) and how close the image's style statistics are to the style corpus
(cosine similarity of random-convolution feature statistics to the corpus
centroid).  Candidates are ordered by the sum of both scores and the
non-dominated set is reported alongside.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from . import tensor as T
from .errors import ArgumentError, ConfigurationError, ContractError
from .glyphs import CHARSET, GlyphSpec, StrokeFont, contrasting_color, rasterize
from .nn import Conv2d, Linear, Module
from .optim import Adam
from .tensor import Tensor

logger = logging.getLogger(__name__)

CLASSIFIER_SIZE = 32


def blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Per-channel Gaussian blur; ``sigma`` in pixels, 0 returns the input unchanged."""
    if sigma < 0:
        raise ArgumentError("blur_sigma must be >= 0")
    if sigma == 0:
        return image
    return np.stack([gaussian_filter(ch, sigma, mode="nearest") for ch in np.asarray(image)])


def ink_map(images: np.ndarray, background=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Colour-invariant classifier input: distance to the background colour,
    average-pooled to 32 x 32 and scaled so each image's maximum is 1."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    bg = np.asarray(background, dtype=float).reshape(1, 3, 1, 1)
    d = np.sqrt(((arr - bg) ** 2).sum(axis=1) / 3.0)
    n, h, w = d.shape
    f = h // CLASSIFIER_SIZE
    if f > 1:
        d = d.reshape(n, CLASSIFIER_SIZE, f, CLASSIFIER_SIZE, f).mean(axis=(2, 4))
    peak = d.reshape(n, -1).max(axis=1).reshape(n, 1, 1)
    d = d / np.maximum(peak, 0.05)
    return d[:, None]


# -- glyph classifier ------------------------------------------------------------------


@dataclass
class ClassifierConfig:
    epochs: int = 12
    samples_per_class: int = 40
    batch_size: int = 64
    lr: float = 2e-3
    width: int = 16
    noise_fraction: float = 0.08


class GlyphClassifier(Module):
    def __init__(self, rng: np.random.Generator, classes: str = CHARSET, width: int = 16):
        self.classes = classes
        self.width = width
        self.conv1 = Conv2d(1, width, 3, rng)
        self.conv2 = Conv2d(width, 2 * width, 3, rng, stride=2)
        self.conv3 = Conv2d(2 * width, 4 * width, 3, rng, stride=2)
        self.head = Linear(4 * width * 4 * 4, len(classes), rng, gain=1.0)
        self.holdout_accuracy: float | None = None

    def logits(self, x) -> Tensor:
        h = T.silu(self.conv1(x))
        h = T.silu(self.conv2(h))
        h = T.silu(self.conv3(h))
        h = T.avg_pool2d(h, 2)
        return self.head(T.reshape(h, (h.shape[0], -1)))

    def predict_proba(self, images: np.ndarray, blur_sigma: float = 0.0) -> np.ndarray:
        arr = np.asarray(images, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[None]
        if blur_sigma:
            arr = np.stack([blur(im, blur_sigma) for im in arr])
        dt = self.conv1.weight.dtype
        with T.no_grad():
            logits = self.logits(Tensor(ink_map(arr), dtype=dt)).data
        return T.softmax(logits.astype(np.float64), axis=1)

    def index(self, ch: str) -> int:
        i = self.classes.find(ch)
        if len(ch) != 1 or i < 0:
            raise ArgumentError(f"{ch!r} is not in the classifier's class set")
        return i


def _augmented_render(font: StrokeFont, ch: str, rng: np.random.Generator) -> np.ndarray:
    fg = contrasting_color(rng, (1.0, 1.0, 1.0), min_distance=0.35)
    spec = GlyphSpec(ch, font, 64, tuple(fg), thickness_scale=float(rng.uniform(0.7, 1.5)),
                     slant=float(rng.uniform(-0.25, 0.25)), margin=float(rng.uniform(0.02, 0.16)))
    return rasterize(spec)


def clean_renders(fonts: Sequence[StrokeFont], classes: str = CHARSET):
    images, labels = [], []
    for font in fonts:
        for i, ch in enumerate(classes):
            images.append(rasterize(GlyphSpec(ch, font, 64)))
            labels.append(i)
    return np.stack(images), np.array(labels)


def _training_set(fonts, classes, n_per_class, rng):
    images, labels = [], []
    for i, ch in enumerate(classes):
        for k in range(n_per_class):
            font = fonts[k % len(fonts)]
            images.append(_augmented_render(font, ch, rng))
            labels.append(i)
    return np.stack(images), np.array(labels)


def train_glyph_classifier(fonts: Sequence[StrokeFont], cfg: ClassifierConfig | None = None,
                           rng: np.random.Generator | None = None,
                           classes: str = CHARSET) -> GlyphClassifier:
    """Train on augmented renders (random colour, thickness, slant, scale).

    A small share of uniform-noise images with a uniform target keeps the
    classifier from being confident on non-glyph input.  Accuracy on clean
    renders of ``fonts`` is stored in ``holdout_accuracy`` (percent).
    """
    if not fonts:
        raise ConfigurationError("glyph classifier needs at least one font", key="fonts")
    cfg = cfg or ClassifierConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    init_rng, data_rng, shuffle_rng = rng.spawn(3)
    clf = GlyphClassifier(init_rng, classes, cfg.width)
    images, labels = _training_set(list(fonts), classes, cfg.samples_per_class, data_rng)
    x_all = ink_map(images)
    k = len(classes)
    targets = np.eye(k)[labels]
    n_noise = int(round(cfg.noise_fraction * len(x_all)))
    if n_noise:
        noise = ink_map(data_rng.uniform(0, 1, (n_noise, 3, 64, 64)))
        x_all = np.concatenate([x_all, noise])
        targets = np.concatenate([targets, np.full((n_noise, k), 1.0 / k)])
    dt = T.get_default_dtype()
    x_all = x_all.astype(dt)
    targets = targets.astype(dt)

    opt = Adam(clf.parameters(), lr=cfg.lr)
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(x_all))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logp = T.log_softmax(clf.logits(Tensor(x_all[idx])), axis=1)
            loss = -(logp * targets[idx]).sum() * (1.0 / len(idx))
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        logger.info("classifier epoch %d loss %.4f", epoch, total / len(x_all))
    clean_x, clean_y = clean_renders(fonts, classes)
    clf.holdout_accuracy = ocr_accuracy(clean_x, [classes[i] for i in clean_y], clf)
    return clf


def glyph_score(clf: GlyphClassifier, image: np.ndarray, target_char: str,
                blur_sigma: float = 0.0) -> float:
    """Softmax probability of ``target_char``, optionally after a Gaussian blur."""
    idx = clf.index(target_char)
    if blur_sigma < 0:
        raise ArgumentError("blur_sigma must be >= 0")
    return float(clf.predict_proba(image, blur_sigma)[0, idx])


def ocr_accuracy(images, labels: Sequence[str], clf: GlyphClassifier,
                 blur_sigma: float = 0.0) -> float:
    """Percentage of images whose most probable class equals the label."""
    if len(images) != len(labels):
        raise ArgumentError(f"{len(images)} images but {len(labels)} labels")
    if len(images) == 0:
        return 0.0
    probs = clf.predict_proba(np.asarray(images), blur_sigma)
    pred = probs.argmax(axis=1)
    truth = np.array([clf.index(c) for c in labels])
    return 100.0 * float((pred == truth).mean())


# -- style scorer -----------------------------------------------------------------------


class StyleScorer(Module):
    """Feature statistics from a fixed random conv stack, compared to a corpus centroid."""

    def __init__(self, rng: np.random.Generator, width: int = 16):
        self.conv1 = Conv2d(3, width, 3, rng)
        self.conv2 = Conv2d(width, 2 * width, 3, rng, stride=2)
        self.conv3 = Conv2d(2 * width, 4 * width, 3, rng, stride=2)
        ref_rng = np.random.default_rng(rng.integers(2**63))
        self.centroid: np.ndarray | None = None
        self._ref_mean, self._ref_std = self._reference_stats(ref_rng)

    def _raw(self, images: np.ndarray) -> np.ndarray:
        arr = np.asarray(images, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[None]
        feats = [arr.mean(axis=(2, 3)), arr.std(axis=(2, 3))]
        with T.no_grad():
            h = Tensor(arr, dtype=self.conv1.weight.dtype)
            for conv in (self.conv1, self.conv2, self.conv3):
                h = T.relu(conv(h))
                feats += [h.data.mean(axis=(2, 3)), h.data.std(axis=(2, 3))]
        return np.concatenate(feats, axis=1).astype(np.float64)

    def _reference_stats(self, rng):
        # generic images (noise, flat colours, gradients) fix the feature origin and scale
        refs = [rng.uniform(0, 1, (3, 64, 64)) for _ in range(8)]
        refs += [np.broadcast_to(rng.uniform(0, 1, (3, 1, 1)), (3, 64, 64)) for _ in range(8)]
        ramp = np.linspace(0, 1, 64)
        refs += [np.broadcast_to(ramp[None, None, :], (3, 64, 64)),
                 np.broadcast_to(ramp[None, :, None], (3, 64, 64))]
        raw = self._raw(np.stack(refs))
        return raw.mean(axis=0), raw.std(axis=0) + 1e-3

    def embed(self, images: np.ndarray) -> np.ndarray:
        return (self._raw(images) - self._ref_mean) / self._ref_std

    def fit(self, corpus: np.ndarray) -> "StyleScorer":
        self.centroid = self.embed(np.asarray(corpus)).mean(axis=0)
        return self

    def score(self, images: np.ndarray) -> np.ndarray:
        if self.centroid is None:
            raise ContractError("style scorer has not been fitted to a style corpus")
        e = self.embed(images)
        c = self.centroid
        cos = e @ c / (np.linalg.norm(e, axis=1) * np.linalg.norm(c) + 1e-12)
        return np.clip((cos + 1.0) / 2.0, 0.0, 1.0)


def fit_style_scorer(corpus, rng: np.random.Generator | None = None) -> StyleScorer:
    rng = rng if rng is not None else np.random.default_rng(0)
    with T.default_dtype(np.float64):
        return StyleScorer(rng).fit(np.asarray(corpus))


def style_score(scorer: StyleScorer, image: np.ndarray) -> float:
    return float(scorer.score(image)[0])


# -- ranking -------------------------------------------------------------------------------


@dataclass
class Candidate:
    image: np.ndarray | None
    glyph_score: float
    style_score: float
    seed: int = 0
    tag: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.glyph_score + self.style_score


def dominates(a: Candidate, b: Candidate) -> bool:
    return (a.glyph_score >= b.glyph_score and a.style_score >= b.style_score
            and (a.glyph_score > b.glyph_score or a.style_score > b.style_score))


def pareto_front(candidates: Sequence[Candidate]) -> list[Candidate]:
    """Non-dominated candidates, in input order (sort-and-sweep, O(n log n))."""
    order = sorted(range(len(candidates)),
                   key=lambda i: (-candidates[i].glyph_score, -candidates[i].style_score))
    keep = set()
    best_style = -np.inf
    i = 0
    while i < len(order):
        # candidates sharing a glyph score are compared against earlier groups only
        j = i
        g = candidates[order[i]].glyph_score
        while j < len(order) and candidates[order[j]].glyph_score == g:
            j += 1
        group = order[i:j]
        top = candidates[group[0]].style_score
        for k in group:
            if candidates[k].style_score == top and top > best_style:
                keep.add(k)
        best_style = max(best_style, top)
        i = j
    return [c for i, c in enumerate(candidates) if i in keep]


def rank_candidates(candidates: Sequence[Candidate]) -> tuple[list[Candidate], list[Candidate]]:
    """Order by descending ``glyph_score + style_score`` and return the Pareto front.

    Equal sums fall back to glyph score, then style score, so a dominated
    candidate can never outrank its dominator through rounding; full ties
    keep input order.
    """
    if not candidates:
        raise ArgumentError("no candidates to rank")
    for c in candidates:
        if c.glyph_score is None or c.style_score is None:
            raise ContractError("candidate scores must be populated before ranking")
    ordered = sorted(candidates, key=lambda c: (-c.total, -c.glyph_score, -c.style_score))
    return ordered, pareto_front(candidates)
