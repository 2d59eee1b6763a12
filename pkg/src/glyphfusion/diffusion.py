"""Noise schedule, epsilon-prediction U-Net and DDPM / DDIM samplers.

Latents are ``4 x H x W`` (``16 x 16`` in the full pipeline).  Timesteps are
0-based: ``t = 0`` is the least noisy level, ``t = T - 1`` the noisiest.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ArgumentError, DimensionError
from .nn import Conv2d, GroupNorm, Linear, Module
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def check_t(self, t) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(t))
        if not np.issubdtype(ts.dtype, np.integer):
            raise ArgumentError(f"timesteps must be integers, got {ts.dtype}")
        if ts.size == 0 or ts.min() < 0 or ts.max() >= self.T:
            raise ArgumentError(f"timestep out of range [0, {self.T})")
        return ts


def make_schedule(T_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule; ``alpha_bar`` is the cumulative product of ``1 - beta``."""
    if T_steps < 1:
        raise ArgumentError("T must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ArgumentError("need 0 < beta_start <= beta_end < 1")
    beta = np.linspace(beta_start, beta_end, T_steps, dtype=np.float64)
    alpha = 1.0 - beta
    return NoiseSchedule(T_steps, beta, alpha, np.cumprod(alpha))


def _coef(values: np.ndarray, t, ndim: int, dtype):
    """Per-example coefficient shaped to broadcast over ``[N x] C x H x W``."""
    c = np.asarray(values[np.asarray(t)], dtype=dtype)
    if c.ndim == 0:
        return c
    return c.reshape((-1,) + (1,) * (ndim - 1))


def _dtype_of(x):
    return x.dtype if hasattr(x, "dtype") else np.float64


def forward_noise(z0, t, eps, sched: NoiseSchedule):
    """``sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps``; ``t`` may be one int per batch row."""
    sched.check_t(t)
    if np.shape(z0) != np.shape(eps):
        raise DimensionError(f"eps shape {np.shape(eps)} != z0 shape {np.shape(z0)}")
    nd, dt = len(np.shape(z0)), _dtype_of(z0)
    a = _coef(np.sqrt(sched.alpha_bar), t, nd, dt)
    b = _coef(np.sqrt(1.0 - sched.alpha_bar), t, nd, dt)
    return z0 * a + eps * b


def predicted_z0(z_t, t, eps_hat, sched: NoiseSchedule):
    """Invert the forward process given a noise estimate; differentiable in ``eps_hat``."""
    sched.check_t(t)
    nd, dt = len(np.shape(z_t)), _dtype_of(z_t)
    inv_a = _coef(1.0 / np.sqrt(sched.alpha_bar), t, nd, dt)
    b = _coef(np.sqrt(1.0 - sched.alpha_bar), t, nd, dt)
    return (z_t - eps_hat * b) * inv_a


def diffusion_loss(eps_hat, eps) -> Tensor:
    """Mean squared error between predicted and injected noise."""
    eps_hat, eps = T.as_tensor(eps_hat), T.as_tensor(eps)
    if eps_hat.shape != eps.shape:
        raise DimensionError(f"shape mismatch {eps_hat.shape} vs {eps.shape}")
    diff = eps_hat - eps
    return (diff * diff).mean()


# -- network ------------------------------------------------------------------------


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding, ``N x dim``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def _groups(ch: int) -> int:
    for g in (8, 4, 2, 1):
        if ch % g == 0:
            return g
    return 1


class ResBlock(Module):
    """GN-SiLU-conv twice, with a FiLM (scale, shift) from the embedding in between."""

    def __init__(self, c_in: int, c_out: int, d_emb: int, rng: np.random.Generator):
        self.norm1 = GroupNorm(_groups(c_in), c_in)
        self.conv1 = Conv2d(c_in, c_out, 3, rng)
        self.film = Linear(d_emb, 2 * c_out, rng, gain=0.5)
        self.norm2 = GroupNorm(_groups(c_out), c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, gain=0.5)
        self.skip = Conv2d(c_in, c_out, 1, rng, gain=1.0) if c_in != c_out else None
        self.c_out = c_out

    def __call__(self, x, emb):
        h = self.conv1(T.silu(self.norm1(x)))
        ss = self.film(T.silu(emb))
        n = ss.shape[0]
        scale = T.reshape(ss[:, :self.c_out], (n, self.c_out, 1, 1))
        shift = T.reshape(ss[:, self.c_out:], (n, self.c_out, 1, 1))
        h = h * (scale + 1.0) + shift
        h = self.conv2(T.silu(self.norm2(h)))
        return h + (self.skip(x) if self.skip is not None else x)


class UNet(Module):
    """Epsilon-prediction U-Net; ``widths[i]`` channels at resolution ``/2**i``."""

    def __init__(self, rng: np.random.Generator, widths=(32, 64, 128), blocks_per_level: int = 2,
                 latent_channels: int = 4, d_cond: int = 128, d_time: int = 64):
        self.widths = tuple(widths)
        self.blocks_per_level = blocks_per_level
        self.latent_channels = latent_channels
        self.d_cond = d_cond
        self.d_time = d_time
        d_emb = d_cond
        self.time1 = Linear(d_time, d_emb, rng)
        self.time2 = Linear(d_emb, d_emb, rng, gain=1.0)
        self.cond_proj = Linear(d_cond, d_emb, rng, gain=1.0)
        self.conv_in = Conv2d(latent_channels, widths[0], 3, rng, gain=1.0)

        self.down_blocks: list[ResBlock] = []
        self.downsamples: list[Conv2d] = []
        ch = widths[0]
        skips = []
        for level, w in enumerate(widths):
            for _ in range(blocks_per_level):
                self.down_blocks.append(ResBlock(ch, w, d_emb, rng))
                ch = w
            if level < len(widths) - 1:
                skips.append(ch)
                self.downsamples.append(Conv2d(ch, widths[level + 1], 3, rng, stride=2))
                ch = widths[level + 1]

        self.up_blocks: list[ResBlock] = []
        for level in reversed(range(len(widths) - 1)):
            w = widths[level]
            self.up_blocks.append(ResBlock(ch + skips[level], w, d_emb, rng))
            ch = w
            for _ in range(blocks_per_level - 1):
                self.up_blocks.append(ResBlock(ch, w, d_emb, rng))
        self.norm_out = GroupNorm(_groups(ch), ch)
        self.conv_out = Conv2d(ch, latent_channels, 3, rng, zero=True)
        logger.info("UNet widths=%s parameters=%d", self.widths, self.num_parameters())

    @property
    def parameter_count(self) -> int:
        return self.num_parameters()

    def embed(self, t, cond, n: int):
        temb = Tensor(timestep_embedding(t, self.d_time), dtype=self.conv_in.weight.dtype)
        if temb.shape[0] == 1 and n > 1:
            temb = Tensor(np.repeat(temb.data, n, axis=0), dtype=temb.dtype)
        e = self.time2(T.silu(self.time1(temb)))
        c = self.cond_proj(T.reshape(cond, (1, -1)))
        return e + c

    def __call__(self, z, t, cond):
        n = z.shape[0]
        emb = self.embed(t, cond, n)
        h = self.conv_in(z)
        skips = []
        bi = 0
        for level in range(len(self.widths)):
            for _ in range(self.blocks_per_level):
                h = self.down_blocks[bi](h, emb)
                bi += 1
            if level < len(self.widths) - 1:
                skips.append(h)
                h = self.downsamples[level](h)
        ui = 0
        for level in reversed(range(len(self.widths) - 1)):
            h = T.upsample2d(h, 2)
            h = T.concat([h, skips[level]], axis=1)
            for _ in range(self.blocks_per_level):
                h = self.up_blocks[ui](h, emb)
                ui += 1
        return self.conv_out(T.silu(self.norm_out(h)))


class Conditioning(Module):
    """Learned conditioning vector standing in for an encoded text prompt."""

    def __init__(self, d_cond: int = 128, prompt: str | None = None,
                 rng: np.random.Generator | None = None, trainable: bool = True):
        if prompt is not None:
            seed = int.from_bytes(hashlib.sha256(prompt.encode("utf-8")).digest()[:8], "little")
            vec = np.random.default_rng(seed).normal(size=d_cond)
        elif rng is not None:
            vec = rng.normal(size=d_cond)
        else:
            vec = np.zeros(d_cond)
        self.embedding = Tensor(vec.astype(T.get_default_dtype()), requires_grad=True)
        self.trainable = trainable
        if not trainable:
            self.embedding.requires_grad = False
            self.embedding.frozen = True

    @property
    def d_cond(self) -> int:
        return self.embedding.shape[0]


def _latent_batch(z_t) -> tuple[Tensor, bool]:
    z = T.as_tensor(z_t)
    if z.ndim == 3:
        return T.reshape(z, (1,) + z.shape), True
    if z.ndim == 4:
        return z, False
    raise DimensionError(f"latent must be C x H x W or N x C x H x W, got {z.shape}")


def predict_eps(unet: UNet, z_t, t, cond: Conditioning, sched: NoiseSchedule | None = None) -> Tensor:
    """Noise estimate with the same shape as ``z_t``."""
    z, squeeze = _latent_batch(z_t)
    if z.shape[1] != unet.latent_channels:
        raise DimensionError(f"U-Net expects {unet.latent_channels} latent channels, got {z.shape[1]}")
    div = 2 ** (len(unet.widths) - 1)
    if z.shape[2] % div or z.shape[3] % div:
        raise DimensionError(f"latent size {z.shape[2:]} must be divisible by {div}")
    ts = np.atleast_1d(np.asarray(t))
    if sched is not None:
        sched.check_t(ts)
    if ts.size not in (1, z.shape[0]):
        raise DimensionError("need one timestep or one per batch row")
    emb_cond = cond.embedding if isinstance(cond, Conditioning) else T.as_tensor(cond)
    if emb_cond.shape != (unet.d_cond,):
        raise DimensionError(f"conditioning must have length {unet.d_cond}, got {emb_cond.shape}")
    out = unet(z, ts, emb_cond)
    return T.reshape(out, out.shape[1:]) if squeeze else out


# -- samplers -------------------------------------------------------------------------

EpsFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _eps_fn(model, cond) -> EpsFn:
    if isinstance(model, UNet):
        def fn(z, t):
            with T.no_grad():
                return predict_eps(model, Tensor(z, dtype=z.dtype), t, cond).data
        return fn
    return model


def ddpm_step(z: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule,
              noise: np.ndarray | None) -> np.ndarray:
    """One ancestral step ``t -> t-1`` with posterior variance; ``noise`` ignored at t = 0."""
    a, ab, b = sched.alpha[t], sched.alpha_bar[t], sched.beta[t]
    mean = (z - b / math.sqrt(1.0 - ab) * eps) / math.sqrt(a)
    if t == 0 or noise is None:
        return mean
    ab_prev = sched.alpha_bar[t - 1]
    var = b * (1.0 - ab_prev) / (1.0 - ab)
    return mean + math.sqrt(var) * noise


def ddim_step(z: np.ndarray, t: int, t_prev: int, eps: np.ndarray, sched: NoiseSchedule,
              eta: float = 0.0, noise: np.ndarray | None = None) -> np.ndarray:
    """DDIM update from ``t`` to ``t_prev`` (``t_prev = -1`` means the clean end)."""
    ab = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[t_prev] if t_prev >= 0 else 1.0
    z0 = (z - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)
    sigma = eta * math.sqrt((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev))
    direction = math.sqrt(max(1.0 - ab_prev - sigma * sigma, 0.0)) * eps
    out = math.sqrt(ab_prev) * z0 + direction
    if sigma > 0 and noise is not None:
        out = out + sigma * noise
    return out


def _start_noise(rng: np.random.Generator, n: int, shape, dtype) -> np.ndarray:
    return rng.standard_normal((n,) + tuple(shape)).astype(dtype)


def sample_ddpm(unet, sched: NoiseSchedule, cond, n: int, rng: np.random.Generator,
                shape=(4, 16, 16), dtype=None) -> list[np.ndarray]:
    """Ancestral sampling of ``n`` chains, run as one batch."""
    if n < 1:
        raise ArgumentError("n must be >= 1")
    dtype = dtype or T.get_default_dtype()
    fn = _eps_fn(unet, cond)
    z = _start_noise(rng, n, shape, dtype)
    for t in reversed(range(sched.T)):
        eps = fn(z, np.full(n, t))
        noise = rng.standard_normal(z.shape).astype(dtype) if t > 0 else None
        z = ddpm_step(z, t, eps, sched, noise).astype(dtype)
    return list(z)


def ddim_timesteps(T_steps: int, steps: int) -> np.ndarray:
    """``steps`` timesteps spread uniformly over ``[0, T)``, descending, ending at ``T-1``."""
    if not 1 <= steps <= T_steps:
        raise ArgumentError(f"steps must lie in [1, {T_steps}]")
    if steps == 1:
        return np.array([T_steps - 1])
    ts = np.round(np.linspace(0, T_steps - 1, steps)).astype(int)
    return ts[::-1]


def sample_ddim(unet, sched: NoiseSchedule, cond, steps: int, rng: np.random.Generator,
                n: int = 1, shape=(4, 16, 16), eta: float = 0.0, dtype=None,
                initial_noise: np.ndarray | None = None) -> np.ndarray:
    """Deterministic (``eta = 0``) DDIM sampling; returns ``n x C x H x W``."""
    ts = ddim_timesteps(sched.T, steps)
    dtype = dtype or T.get_default_dtype()
    fn = _eps_fn(unet, cond)
    z = (np.asarray(initial_noise, dtype=dtype).reshape((-1,) + tuple(shape))
         if initial_noise is not None else _start_noise(rng, n, shape, dtype))
    for i, t in enumerate(ts):
        t_prev = int(ts[i + 1]) if i + 1 < len(ts) else -1
        eps = fn(z, np.full(len(z), t))
        noise = rng.standard_normal(z.shape).astype(dtype) if eta > 0 else None
        z = ddim_step(z, int(t), t_prev, eps, sched, eta, noise).astype(dtype)
    return z
