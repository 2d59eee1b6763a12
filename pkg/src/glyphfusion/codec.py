"""Tiny convolutional autoencoder used as the frozen image <-> latent codec.

Images are ``3 x 64 x 64`` in [0, 1]; latents are ``4 x 16 x 16``.  After
training, latents are rescaled by a fixed factor so the corpus latents have
unit standard deviation, which keeps the diffusion noise scale meaningful.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ContractError, DimensionError
from .nn import Conv2d, Module
from .optim import Adam
from .tensor import Tensor

logger = logging.getLogger(__name__)

IMAGE_SHAPE = (3, 64, 64)
LATENT_SHAPE = (4, 16, 16)


@dataclass
class CodecConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    width: int = 32


class Codec(Module):
    def __init__(self, rng: np.random.Generator, width: int = 32):
        w = width
        self.width = width
        # 64x64 work is done in space-to-depth form to keep convolutions at <= 32x32
        self.enc = [
            Conv2d(12, w, 3, rng),
            Conv2d(w, 2 * w, 3, rng, stride=2),
            Conv2d(2 * w, 2 * w, 3, rng),
            Conv2d(2 * w, LATENT_SHAPE[0], 1, rng, gain=1.0),
        ]
        self.dec = [
            Conv2d(LATENT_SHAPE[0], 2 * w, 3, rng),
            Conv2d(2 * w, 2 * w, 3, rng),
            Conv2d(2 * w, w, 3, rng),
            Conv2d(w, 12, 3, rng, gain=0.5),
        ]
        self.latent_scale = 1.0
        self.frozen = False
        self.history: list[float] = []

    def freeze(self) -> None:
        super().freeze()
        self.frozen = True

    def encode_raw(self, x):
        h = T.pixel_unshuffle(x, 2)
        for i, conv in enumerate(self.enc):
            h = conv(h)
            if i < len(self.enc) - 1:
                h = T.silu(h)
        return h

    def decode_raw(self, z):
        h = T.silu(self.dec[0](z))
        h = T.silu(self.dec[1](h))
        h = T.upsample2d(h, 2)
        h = T.silu(self.dec[2](h))
        return T.pixel_shuffle(self.dec[3](h), 2) + 0.5


def _check_shape(x: Tensor, expected: tuple[int, ...], what: str) -> None:
    if x.shape[-3:] != expected or x.ndim not in (3, 4):
        raise DimensionError(f"{what} must have shape {expected} (optionally batched), got {x.shape}")


def _as_input(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=T.get_default_dtype())


def encode(codec: Codec, image) -> Tensor:
    """Image(s) ``[N x] 3 x 64 x 64`` -> scaled latent(s) ``[N x] 4 x 16 x 16``."""
    x = _as_input(image)
    _check_shape(x, IMAGE_SHAPE, "image")
    return codec.encode_raw(x) * codec.latent_scale


def decode(codec: Codec, latent) -> Tensor:
    """Scaled latent(s) -> image(s) with values in [0, 1]."""
    z = _as_input(latent)
    _check_shape(z, LATENT_SHAPE, "latent")
    return T.clamp(codec.decode_raw(z * (1.0 / codec.latent_scale)), 0.0, 1.0)


def reconstruction_mse(codec: Codec, images: np.ndarray, batch_size: int = 32) -> float:
    total, count = 0.0, 0
    with T.no_grad():
        for i in range(0, len(images), batch_size):
            x = Tensor(images[i:i + batch_size], dtype=T.get_default_dtype())
            rec = codec.decode_raw(codec.encode_raw(x))
            total += float(((rec.data - x.data) ** 2).sum())
            count += x.size
    return total / count


def train_codec(corpus, cfg: CodecConfig | None = None,
                rng: np.random.Generator | None = None) -> Codec:
    """Fit the autoencoder on ``corpus`` by reconstruction MSE, then freeze it.

    Per-epoch mean training MSE is stored on ``codec.history``.
    """
    cfg = cfg or CodecConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    images = np.asarray(corpus, dtype=T.get_default_dtype())
    if images.ndim != 4 or len(images) == 0:
        raise ConfigurationError("codec corpus is empty", key="corpus")
    if images.shape[1:] != IMAGE_SHAPE:
        raise DimensionError(f"codec corpus images must be {IMAGE_SHAPE}, got {images.shape[1:]}")
    if len(images) < 64:
        raise ConfigurationError(f"codec corpus needs >= 64 images, got {len(images)}", key="corpus")

    init_rng, shuffle_rng = rng.spawn(2)
    codec = Codec(init_rng, cfg.width)
    opt = Adam(codec.parameters(), lr=cfg.lr)
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(images))
        total, seen = 0.0, 0
        for start in range(0, len(images), cfg.batch_size):
            batch = Tensor(images[order[start:start + cfg.batch_size]])
            rec = codec.decode_raw(codec.encode_raw(batch))
            loss = ((rec - batch) ** 2).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(batch)
            seen += len(batch)
        codec.history.append(total / seen)
        logger.info("codec epoch %d mse %.5f", epoch, codec.history[-1])

    with T.no_grad():
        lat = np.concatenate([codec.encode_raw(Tensor(images[i:i + 64])).data
                              for i in range(0, len(images), 64)])
    std = float(lat.std())
    codec.latent_scale = 1.0 / std if std > 0 else 1.0
    codec.freeze()
    return codec


def require_frozen(codec: Codec) -> None:
    if not codec.frozen:
        raise ContractError("codec must be frozen before adversarial training")


def codec_corpus(style_images, fonts, rng: np.random.Generator, renders: int = 192,
                 text_pool: str | None = None) -> np.ndarray:
    """Union of style images and randomly coloured glyph renders over the fonts."""
    from .glyphs import CHARSET, GlyphSpec, contrasting_color, rasterize

    pool = text_pool or CHARSET
    out = [np.asarray(img, dtype=float) for img in style_images]
    for _ in range(renders):
        font = fonts[int(rng.integers(len(fonts)))]
        ch = pool[int(rng.integers(len(pool)))]
        fg = contrasting_color(rng, (1.0, 1.0, 1.0))
        out.append(rasterize(GlyphSpec(ch, font, 64, tuple(fg))))
    return np.stack(out)
