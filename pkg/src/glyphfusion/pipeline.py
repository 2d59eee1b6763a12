"""End-to-end stages shared by the command line and the experiment harness."""

from __future__ import annotations

import hashlib
import logging
import math
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .adversary import pretrain_generator, train_fusion
from .bundle import ModelBundle, pack_tensors, unpack_tensors
from .codec import Codec, CodecConfig, codec_corpus, decode, encode, train_codec
from .config import RunConfig
from .democorpus import DEMO_STYLE_DIR
from .diffusion import sample_ddim, sample_ddpm
from .errors import ArgumentError, ConfigurationError, CorruptionError, FormatError
from .glyphs import (AugmentPolicy, GlyphSpec, StrokeFont, bundled_fonts, coverage, resolve_font,
                     segment_foreground)
from .io import atomic_write_bytes, list_images, read_image
from .ranking import (Candidate, ClassifierConfig, GlyphClassifier, StyleScorer, fit_style_scorer,
                      glyph_score, rank_candidates, train_glyph_classifier)
from .rng import stream

logger = logging.getLogger(__name__)

IOU_TAU = 0.2


def style_images(cfg: RunConfig, count: int | None = None) -> list[np.ndarray]:
    directory = Path(cfg.style_dir) if cfg.style_dir else DEMO_STYLE_DIR
    count = cfg.style_image_count if count is None else count
    paths = list_images(directory)
    if len(paths) < count:
        raise ConfigurationError(f"style_dir {directory} has {len(paths)} images, need {count}",
                                 key="style_dir")
    return [read_image(p, 64) for p in paths[:count]]


def fonts(cfg: RunConfig) -> list[StrokeFont]:
    return [resolve_font(ref) for ref in cfg.fonts]


def glyph_policy(cfg: RunConfig) -> AugmentPolicy:
    return AugmentPolicy(cfg.mode, fonts(cfg))


def corpus_fonts(cfg: RunConfig) -> list[StrokeFont]:
    """Every bundled font plus the run's own, for stages that should know all glyph shapes."""
    pool = {f.name: f for f in bundled_fonts()}
    for f in fonts(cfg):
        pool.setdefault(f.name, f)
    return list(pool.values())


def _codec_corpus(cfg: RunConfig):
    data_rng, train_rng = stream(cfg.seed, "codec").spawn(2)
    return codec_corpus(style_images(cfg), corpus_fonts(cfg), data_rng, cfg.codec_renders), train_rng


def build_codec(cfg: RunConfig) -> Codec:
    """Train the codec on the style corpus plus random glyph renders."""
    corpus, rng = _codec_corpus(cfg)
    with T.default_dtype(cfg.numpy_dtype):
        return train_codec(corpus, CodecConfig(epochs=cfg.codec_epochs), rng)


def build_base(cfg: RunConfig, codec: Codec, progress=None) -> dict | None:
    """Pretrain the denoiser on the codec corpus; ``None`` when ``base_steps`` is 0."""
    if cfg.base_steps == 0:
        return None
    corpus, _ = _codec_corpus(cfg)
    with T.default_dtype(cfg.numpy_dtype), T.no_grad():
        latents = np.concatenate([encode(codec, corpus[i:i + 64].astype(cfg.numpy_dtype)).data
                                  for i in range(0, len(corpus), 64)])
    with T.default_dtype(cfg.numpy_dtype):
        return pretrain_generator(latents, cfg.train_config(), cfg.base_steps, cfg.base_lr,
                                  progress=progress)


def train(cfg: RunConfig, codec: Codec, images: Sequence[np.ndarray] | None = None,
          progress=None, base: dict | None = None) -> ModelBundle:
    images = style_images(cfg) if images is None else images
    with T.default_dtype(cfg.numpy_dtype):
        return train_fusion(images, glyph_policy(cfg), cfg.text, cfg.train_config(), codec,
                            progress=progress, init=base)


def sample_latents(bundle: ModelBundle, n: int, seed: int, sampler: str = "ddim",
                   steps: int = 50, eta: float = 0.0) -> np.ndarray:
    rng = stream(seed, "sampler")
    dtype = bundle.unet.conv_in.weight.dtype
    if sampler == "ddim":
        return sample_ddim(bundle.unet, bundle.sched, bundle.cond, steps, rng, n=n, eta=eta,
                           dtype=dtype)
    if sampler == "ddpm":
        return np.stack(sample_ddpm(bundle.unet, bundle.sched, bundle.cond, n, rng, dtype=dtype))
    raise ArgumentError(f"unknown sampler {sampler!r}")


def sample_images(bundle: ModelBundle, n: int, seed: int, sampler: str = "ddim",
                  steps: int = 50, eta: float = 0.0) -> np.ndarray:
    z = sample_latents(bundle, n, seed, sampler, steps, eta)
    with T.no_grad():
        return decode(bundle.codec, z.astype(bundle.unet.conv_in.weight.dtype)).data.astype(np.float64)


# -- measurements -------------------------------------------------------------------------


def glyph_mask(text: str, font: StrokeFont, size: int = 64) -> np.ndarray:
    return coverage(GlyphSpec(text, font, size)) > 0.5


def foreground_iou(image: np.ndarray, mask: np.ndarray, tau: float = IOU_TAU) -> float:
    fg = segment_foreground(image, (1.0, 1.0, 1.0), tau)
    union = (fg | mask).sum()
    return float((fg & mask).sum() / union) if union else 1.0


def diversity(images: np.ndarray) -> float:
    """Mean pairwise L2 distance between flattened images."""
    flat = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    if len(flat) < 2:
        return 0.0
    sq = (flat ** 2).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * flat @ flat.T, 0.0)
    iu = np.triu_indices(len(flat), 1)
    return float(np.sqrt(d2[iu]).mean())


@dataclass
class AblationRow:
    value: float
    seed: int
    metric: float
    seconds: float


def ablate_lambda(cfg: RunConfig, codec: Codec, lambdas: Sequence[float], seeds: Sequence[int],
                  n_samples: int = 8, base: dict | None = None) -> list[AblationRow]:
    """Foreground IoU of decoded samples against the glyph mask, per (lambda, seed).

    Every run fine-tunes from the same ``base`` weights when given.
    """
    mask = glyph_mask(cfg.text, fonts(cfg)[0])
    images = style_images(cfg)
    rows = []
    for seed in seeds:
        for lam in lambdas:
            t0 = time.perf_counter()
            run = cfg.with_overrides(lam=float(lam), seed=int(seed))
            bundle = train(run, codec, images, base=base)
            samples = sample_images(bundle, n_samples, seed, run.sampler, run.sampler_steps, run.eta)
            iou = float(np.mean([foreground_iou(im, mask) for im in samples]))
            rows.append(AblationRow(float(lam), int(seed), iou, time.perf_counter() - t0))
            logger.info("lambda %g seed %d iou %.4f", lam, seed, iou)
    return rows


def ablate_style_count(cfg: RunConfig, codec: Codec, counts: Sequence[int], seeds: Sequence[int],
                       n_samples: int = 8, base: dict | None = None,
                       steps: int | None = None) -> list[AblationRow]:
    """Sample diversity per (style image count, seed).

    With ``steps`` every count gets about that many generator updates: epochs are
    set to ``steps / ceil(count / batch_size)``.  Otherwise all counts share the
    configured epoch count, so small corpora see far fewer updates.
    """
    if steps is not None and steps < 1:
        raise ArgumentError("steps must be >= 1")
    rows = []
    for seed in seeds:
        for count in counts:
            t0 = time.perf_counter()
            run = cfg.with_overrides(style_image_count=int(count), seed=int(seed))
            if steps is not None:
                per_epoch = math.ceil(count / run.batch_size)
                run = run.with_overrides(epochs=max(1, round(steps / per_epoch)))
            bundle = train(run, codec, base=base)
            samples = sample_images(bundle, n_samples, seed, run.sampler, run.sampler_steps, run.eta)
            rows.append(AblationRow(float(count), int(seed), diversity(samples),
                                    time.perf_counter() - t0))
            logger.info("count %d seed %d diversity %.4f", count, seed, rows[-1].metric)
    return rows


def summarize(rows: Sequence[AblationRow]) -> dict[float, tuple[float, float]]:
    """Per-value mean and standard deviation of the metric, in first-seen order."""
    groups: dict[float, list[float]] = {}
    for r in rows:
        groups.setdefault(r.value, []).append(r.metric)
    return {v: (float(np.mean(m)), float(np.std(m))) for v, m in groups.items()}


# -- scorers ------------------------------------------------------------------------------

CLASSIFIER_MAGIC = b"DSFK"


def save_classifier(clf: GlyphClassifier, path) -> None:
    arrays = clf.state_dict()
    arrays["meta.width"] = np.array([clf.width], dtype=np.int64)
    arrays["meta.holdout"] = np.array([clf.holdout_accuracy or 0.0], dtype=np.float64)
    payload = pack_tensors(arrays)
    classes = clf.classes.encode("utf-8")
    body = CLASSIFIER_MAGIC + struct.pack("<H", len(classes)) + classes + payload
    atomic_write_bytes(Path(path), body + hashlib.sha256(body).digest())


def load_classifier(path) -> GlyphClassifier:
    data = Path(path).read_bytes()
    if len(data) < 38 or data[:4] != CLASSIFIER_MAGIC:
        raise FormatError("not a classifier checkpoint")
    body, trailer = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != trailer:
        raise CorruptionError("classifier checkpoint checksum mismatch")
    (n,) = struct.unpack("<H", body[4:6])
    classes = body[6:6 + n].decode("utf-8")
    arrays = unpack_tensors(body[6 + n:])
    width = int(arrays.pop("meta.width")[0])
    holdout = float(arrays.pop("meta.holdout")[0])
    dtype = next(iter(arrays.values())).dtype
    with T.default_dtype(dtype):
        clf = GlyphClassifier(np.random.default_rng(0), classes, width)
    clf.load_state_dict(arrays)
    clf.holdout_accuracy = holdout
    return clf


def classifier_for(cfg: RunConfig, cache: Path | None = None) -> GlyphClassifier:
    """Train (or load from ``cache``) the glyph classifier over every bundled font
    plus the run's fonts."""
    if cache is not None and cache.is_file():
        return load_classifier(cache)
    with T.default_dtype(cfg.numpy_dtype):
        clf = train_glyph_classifier(corpus_fonts(cfg),
                                     ClassifierConfig(epochs=cfg.classifier_epochs),
                                     stream(cfg.seed, "classifier"))
    logger.info("glyph classifier holdout accuracy %.2f%%", clf.holdout_accuracy)
    if cache is not None:
        save_classifier(clf, cache)
    return clf


def scorer_for(cfg: RunConfig) -> StyleScorer:
    return fit_style_scorer(np.stack(style_images(cfg)), stream(cfg.seed, "scorer"))


def score_candidates(images: Sequence[np.ndarray], target: str, clf: GlyphClassifier,
                     scorer: StyleScorer, seeds: Sequence[int] | None = None,
                     tags: Sequence[str] | None = None, blur_sigma: float = 0.0) -> list[Candidate]:
    if len(target) != 1:
        raise ArgumentError(f"candidates are scored against a single character, got {target!r}")
    style = scorer.score(np.stack(images))
    out = []
    for i, img in enumerate(images):
        out.append(Candidate(img, glyph_score(clf, img, target, blur_sigma), float(style[i]),
                             seed=seeds[i] if seeds is not None else i,
                             tag=tags[i] if tags is not None else str(i)))
    return out

