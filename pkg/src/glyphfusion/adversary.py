"""Latent-space discriminator and the alternating generator/discriminator trainer.

Glyph latents are the discriminator's real class; one-shot denoised style
latents (the predicted clean latent at the sampled training timestep) are
the fake class.  The generator minimises the diffusion loss plus
``lambda`` times the non-saturating adversarial term ``-log D(z_hat)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as T
from .codec import Codec, encode, require_frozen
from .diffusion import (Conditioning, NoiseSchedule, UNet, diffusion_loss, forward_noise,
                        make_schedule, predict_eps, predicted_z0)
from .errors import ArgumentError, ConfigurationError, DimensionError, TrainingAborted
from .glyphs import AugmentPolicy, sample_augmented_glyph
from .nn import Conv2d, Linear, Module
from .optim import Adam
from .rng import stream
from .tensor import Tensor

logger = logging.getLogger(__name__)

LOGIT_CLAMP = 20.0
DEFAULT_LAMBDA = 0.01
DEFAULT_STYLE_COUNT = 25
DEFAULT_LR_G = 1e-5
DEFAULT_LR_D = 1e-4


class Discriminator(Module):
    """Three convs and a linear head mapping a latent to one real/fake logit."""

    def __init__(self, rng: np.random.Generator, latent_shape=(4, 16, 16), width: int = 32,
                 zero_final: bool = False):
        c, h, w = latent_shape
        if h % 4 or w % 4:
            raise DimensionError(f"latent size {h}x{w} must be divisible by 4")
        self.latent_shape = tuple(latent_shape)
        self.width = width
        self.conv1 = Conv2d(c, width, 3, rng)
        self.conv2 = Conv2d(width, 2 * width, 3, rng, stride=2)
        self.conv3 = Conv2d(2 * width, 2 * width, 3, rng, stride=2)
        self.head = Linear(2 * width * (h // 4) * (w // 4), 1, rng, zero=zero_final, gain=1.0)

    def logits(self, z) -> Tensor:
        """Clamped logits, one per batch row."""
        z = T.as_tensor(z)
        if z.shape[-3:] != self.latent_shape or z.ndim != 4:
            raise DimensionError(f"discriminator expects N x {self.latent_shape}, got {z.shape}")
        h = T.silu(self.conv1(z))
        h = T.silu(self.conv2(h))
        h = T.silu(self.conv3(h))
        out = self.head(T.reshape(h, (h.shape[0], -1)))
        return T.clamp(T.reshape(out, (-1,)), -LOGIT_CLAMP, LOGIT_CLAMP)


def _batched(latent) -> tuple[Tensor, bool]:
    z = T.as_tensor(latent)
    if z.ndim == 3:
        return T.reshape(z, (1,) + z.shape), True
    return z, False


def discriminate(d: Discriminator, latent) -> Tensor:
    """Probability that ``latent`` is a real glyph latent; strictly inside (0, 1)."""
    z, single = _batched(latent)
    p = T.sigmoid(d.logits(z))
    return T.reshape(p, ()) if single else p


def bce_objective(p_real, p_fake) -> float:
    """``log p_real + log(1 - p_fake)`` evaluated directly from probabilities."""
    return float(np.mean(np.log(p_real)) + np.mean(np.log1p(-np.asarray(p_fake))))


def discriminator_objective(d: Discriminator, z_g, z_hat_s) -> Tensor:
    """Batch mean of ``log D(z_g) + log(1 - D(z_hat_s))``; D ascends this."""
    zg, _ = _batched(z_g)
    zf, _ = _batched(z_hat_s)
    real = T.log_sigmoid(d.logits(zg)).mean()
    fake = T.log_sigmoid(-d.logits(zf)).mean()
    return real + fake


def fusion_objective(l_diff, l_dis, lam: float = DEFAULT_LAMBDA):
    """``l_diff + lam * l_dis``."""
    if lam < 0:
        raise ArgumentError("lambda must be >= 0")
    return l_diff + lam * l_dis


# -- configuration -----------------------------------------------------------------------


@dataclass
class FusionTrainConfig:
    lam: float = DEFAULT_LAMBDA
    lr_generator: float = DEFAULT_LR_G
    lr_discriminator: float = DEFAULT_LR_D
    epochs: int | None = None
    batch_size: int = 8
    mode: str = "single_font"
    d_steps_per_g_step: int = 1
    style_image_count: int = DEFAULT_STYLE_COUNT
    seed: int = 0
    timesteps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    unet_widths: tuple[int, ...] = (32, 64, 128)
    blocks_per_level: int = 2
    d_cond: int = 128
    disc_width: int = 32
    prompt: str | None = None

    def __post_init__(self):
        self.unet_widths = tuple(int(w) for w in self.unet_widths)
        checks = [
            ("lambda", self.lam >= 0, "must be >= 0"),
            ("lr_generator", self.lr_generator > 0, "must be > 0"),
            ("lr_discriminator", self.lr_discriminator > 0, "must be > 0"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("mode", self.mode in ("single_font", "multi_font"), "must be single_font or multi_font"),
            ("d_steps_per_g_step", self.d_steps_per_g_step >= 1, "must be >= 1"),
            ("style_image_count", self.style_image_count >= 1, "must be >= 1"),
            ("timesteps", self.timesteps >= 1, "must be >= 1"),
            ("epochs", self.epochs is None or self.epochs >= 1, "must be >= 1"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigurationError(f"{key} {msg}", key=key)

    @property
    def effective_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return 200 if self.mode == "single_font" else 300

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.timesteps, self.beta_start, self.beta_end)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["unet_widths"] = list(self.unet_widths)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "FusionTrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


# -- single steps ---------------------------------------------------------------------


def _latents(codec: Codec, batch) -> np.ndarray:
    arr = batch.data if isinstance(batch, Tensor) else np.asarray(batch)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.shape[1] == 3:
        with T.no_grad():
            return encode(codec, arr).data
    return arr.astype(T.get_default_dtype(), copy=False)


def _draw_noise(rng: np.random.Generator, n: int, shape, sched: NoiseSchedule, dtype):
    # draw order is fixed: timesteps, then noise
    t = rng.integers(0, sched.T, size=n)
    eps = rng.standard_normal((n,) + tuple(shape)).astype(dtype)
    return t, eps


def train_step_d(d: Discriminator, unet: UNet, codec: Codec, style_batch, glyph_batch,
                 sched: NoiseSchedule, cond: Conditioning, opt: Adam,
                 rng: np.random.Generator) -> float:
    """One ascent step on the discriminator objective; the generator is read-only here."""
    require_frozen(codec)
    zs = _latents(codec, style_batch)
    zg = _latents(codec, glyph_batch)
    t, eps = _draw_noise(rng, len(zs), zs.shape[1:], sched, zs.dtype)
    with T.no_grad():
        z_t = forward_noise(zs, t, eps, sched)
        eps_hat = predict_eps(unet, Tensor(z_t, dtype=zs.dtype), t, cond).data
        z_hat = predicted_z0(z_t, t, eps_hat, sched)
    objective = discriminator_objective(d, Tensor(zg, dtype=zs.dtype), Tensor(z_hat, dtype=zs.dtype))
    opt.zero_grad()
    (-objective).backward()
    opt.step()
    return objective.item()


def train_step_g(d: Discriminator, unet: UNet, cond: Conditioning, codec: Codec, style_batch,
                 sched: NoiseSchedule, opt: Adam, rng: np.random.Generator,
                 lam: float = DEFAULT_LAMBDA) -> tuple[float, float]:
    """One descent step on ``L_diff + lam * (-log D(z_hat))``; D's weights are not stepped."""
    require_frozen(codec)
    if lam < 0:
        raise ArgumentError("lambda must be >= 0")
    zs = _latents(codec, style_batch)
    t, eps = _draw_noise(rng, len(zs), zs.shape[1:], sched, zs.dtype)
    z_t = Tensor(forward_noise(zs, t, eps, sched), dtype=zs.dtype)
    eps_hat = predict_eps(unet, z_t, t, cond)
    l_diff = diffusion_loss(eps_hat, Tensor(eps, dtype=zs.dtype))
    z_hat = predicted_z0(z_t, t, eps_hat, sched)
    l_adv = -T.log_sigmoid(d.logits(z_hat)).mean()
    loss = l_diff + lam * l_adv
    opt.zero_grad()
    loss.backward()
    opt.step()
    d.zero_grad()
    return l_diff.item(), l_adv.item()


def train_step_diffusion(unet: UNet, cond: Conditioning, style_latents, sched: NoiseSchedule,
                         opt: Adam, rng: np.random.Generator) -> float:
    """Plain diffusion fine-tuning step (no discriminator involved)."""
    zs = np.asarray(style_latents)
    t, eps = _draw_noise(rng, len(zs), zs.shape[1:], sched, zs.dtype)
    z_t = Tensor(forward_noise(zs, t, eps, sched), dtype=zs.dtype)
    l_diff = diffusion_loss(predict_eps(unet, z_t, t, cond), Tensor(eps, dtype=zs.dtype))
    opt.zero_grad()
    l_diff.backward()
    opt.step()
    return l_diff.item()


# -- full loop --------------------------------------------------------------------------


@dataclass
class TrainState:
    unet: UNet
    cond: Conditioning
    disc: Discriminator
    opt_g: Adam
    opt_d: Adam
    sched: NoiseSchedule


def build_models(cfg: FusionTrainConfig, latent_shape=(4, 16, 16),
                 init: dict | None = None) -> TrainState:
    """Fresh models and optimisers; ``init`` (from ``pretrain_generator``) seeds the
    generator weights."""
    unet = UNet(stream(cfg.seed, "unet-init"), widths=cfg.unet_widths,
                blocks_per_level=cfg.blocks_per_level, latent_channels=latent_shape[0],
                d_cond=cfg.d_cond)
    cond = Conditioning(cfg.d_cond, prompt=cfg.prompt, rng=stream(cfg.seed, "cond-init"))
    if init is not None:
        unet.load_state_dict(init["unet"])
        cond.load_state_dict(init["conditioning"])
    disc = Discriminator(stream(cfg.seed, "disc-init"), latent_shape, cfg.disc_width)
    opt_g = Adam(unet.parameters() + cond.parameters(), lr=cfg.lr_generator)
    opt_d = Adam(disc.parameters(), lr=cfg.lr_discriminator)
    return TrainState(unet, cond, disc, opt_g, opt_d, cfg.schedule())


def generator_checksum(unet: UNet, cond: Conditioning) -> str:
    return unet.checksum() + cond.checksum()


def _batches(order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        yield order[start:start + size]


def _finite(value: float, what: str, epoch: int, step: int) -> None:
    if not math.isfinite(value):
        raise TrainingAborted(f"non-finite {what} ({value}) at epoch {epoch}, step {step}; "
                              "lower the learning rates or lambda")


def train_fusion(style_images, glyph_policy: AugmentPolicy, text: str, cfg: FusionTrainConfig,
                 codec: Codec, progress=None, init: dict | None = None):
    """Alternate discriminator and generator updates over the style corpus.

    ``style_images`` is either a directory or a sequence of ``3 x 64 x 64``
    arrays; the first ``cfg.style_image_count`` are used.  ``init`` holds
    pretrained generator weights to fine-tune from.  Returns a
    ``ModelBundle`` with per-epoch ``(epoch, l_diff, l_dis, l_total)`` rows.
    """
    from .bundle import ModelBundle
    from .io import list_images, read_image

    require_frozen(codec)
    if isinstance(style_images, (str, bytes)) or hasattr(style_images, "is_dir"):
        paths = list_images(style_images)
        if len(paths) < cfg.style_image_count:
            raise ConfigurationError(
                f"style directory {style_images} has {len(paths)} images, "
                f"need {cfg.style_image_count}", key="style_dir")
        images = [read_image(p, 64) for p in paths[:cfg.style_image_count]]
    else:
        images = list(style_images)
        if len(images) < cfg.style_image_count:
            raise ConfigurationError(
                f"got {len(images)} style images, need {cfg.style_image_count}", key="style_dir")
        images = images[:cfg.style_image_count]
    if not glyph_policy.font_pool or not all(f.supports(text) for f in glyph_policy.font_pool):
        raise ConfigurationError(f"text {text!r} not supported by every font in the pool", key="text")

    style_latents = _latents(codec, np.stack(images))
    state = build_models(cfg, style_latents.shape[1:], init)
    noise_rng = stream(cfg.seed, "noise")
    disc_rng = stream(cfg.seed, "disc-noise")
    aug_rng = stream(cfg.seed, "augment")
    shuffle_rng = stream(cfg.seed, "shuffle")

    history = []
    step = 0
    for epoch in range(cfg.effective_epochs):
        sums = np.zeros(3)
        count = 0
        for idx in _batches(shuffle_rng.permutation(len(style_latents)), cfg.batch_size):
            zs = style_latents[idx]
            l_dis = 0.0
            for _ in range(cfg.d_steps_per_g_step):
                glyphs = np.stack([sample_augmented_glyph(glyph_policy, text, aug_rng)
                                   for _ in range(len(idx))])
                l_dis = train_step_d(state.disc, state.unet, codec, zs, glyphs, state.sched,
                                     state.cond, state.opt_d, disc_rng)
                _finite(l_dis, "discriminator objective", epoch, step)
            l_diff, l_adv = train_step_g(state.disc, state.unet, state.cond, codec, zs,
                                         state.sched, state.opt_g, noise_rng, cfg.lam)
            _finite(l_diff, "diffusion loss", epoch, step)
            _finite(l_adv, "adversarial loss", epoch, step)
            sums += (l_diff, l_dis, l_adv)
            count += 1
            step += 1
        l_diff, l_dis, _ = sums / count
        history.append((epoch, l_diff, l_dis, float(fusion_objective(l_diff, l_dis, cfg.lam))))
        if progress is not None:
            progress(epoch, history[-1])
        logger.debug("epoch %d l_diff %.4f l_dis %.4f", epoch, l_diff, l_dis)

    return ModelBundle(codec=codec, unet=state.unet, cond=state.cond, disc=state.disc,
                       sched=state.sched, config=cfg.to_dict(), history=history)


def train_diffusion_only(style_latents: np.ndarray, cfg: FusionTrainConfig,
                         init: dict | None = None) -> TrainState:
    """Reference trainer without a discriminator, consuming the same RNG streams as
    ``train_fusion``'s generator side."""
    state = build_models(cfg, style_latents.shape[1:], init)
    noise_rng = stream(cfg.seed, "noise")
    shuffle_rng = stream(cfg.seed, "shuffle")
    for _ in range(cfg.effective_epochs):
        for idx in _batches(shuffle_rng.permutation(len(style_latents)), cfg.batch_size):
            train_step_diffusion(state.unet, state.cond, style_latents[idx], state.sched,
                                 state.opt_g, noise_rng)
    return state


def pretrain_generator(latents: np.ndarray, cfg: FusionTrainConfig, steps: int,
                       lr: float = 1e-3, batch_size: int = 8, progress=None) -> dict:
    """Plain diffusion training on a broad latent corpus (styles and glyphs alike).

    This plays the part of a generator that already knows what glyphs and
    textures look like before it is fine-tuned on one style.  Returns
    ``{"unet": ..., "conditioning": ..., "loss": ...}``; the first two are
    state dicts accepted by ``train_fusion(init=...)``.
    """
    if steps < 1:
        raise ArgumentError("steps must be >= 1")
    latents = np.asarray(latents)
    if len(latents) < batch_size:
        raise ConfigurationError(f"pretraining needs >= {batch_size} latents, got {len(latents)}",
                                 key="corpus")
    state = build_models(cfg, latents.shape[1:])
    opt = Adam(state.unet.parameters() + state.cond.parameters(), lr=lr)
    rng = stream(cfg.seed, "pretrain")
    losses = []
    for step in range(steps):
        idx = rng.choice(len(latents), batch_size, replace=False)
        losses.append(train_step_diffusion(state.unet, state.cond, latents[idx], state.sched, opt, rng))
        _finite(losses[-1], "pretraining loss", 0, step)
        if progress is not None:
            progress(step, losses[-1])
    return {"unet": state.unet.state_dict(), "conditioning": state.cond.state_dict(),
            "loss": np.asarray(losses)}
