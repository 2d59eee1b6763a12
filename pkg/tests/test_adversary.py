import math

import numpy as np
import pytest

from glyphfusion import tensor as T
from glyphfusion.adversary import (Discriminator, FusionTrainConfig, bce_objective, build_models,
                                   discriminate, discriminator_objective, fusion_objective,
                                   generator_checksum, pretrain_generator, train_diffusion_only, train_fusion,
                                   train_step_d, train_step_diffusion, train_step_g)
from glyphfusion.codec import Codec, encode
from glyphfusion.democorpus import make_corpus
from glyphfusion.diffusion import Conditioning, UNet, make_schedule
from glyphfusion.errors import ArgumentError, ConfigurationError, ContractError, TrainingAborted
from glyphfusion.glyphs import AugmentPolicy, bundled_font
from glyphfusion.gradcheck import check_gradients
from glyphfusion.optim import Adam

SHAPE = (4, 16, 16)
TINY = dict(unet_widths=(8, 16), d_cond=8, disc_width=4, blocks_per_level=1)


@pytest.fixture(scope="module")
def codec():
    c = Codec(np.random.default_rng(0), 4)
    c.freeze()
    return c


@pytest.fixture(scope="module")
def policy():
    return AugmentPolicy("single_font", [bundled_font("mono-a")])


@pytest.fixture(scope="module")
def images():
    return make_corpus(8)


def tiny_models(seed=0):
    rng = np.random.default_rng(seed)
    unet = UNet(rng, widths=(8, 16), blocks_per_level=1, d_cond=8, d_time=8)
    cond = Conditioning(8, rng=rng)
    disc = Discriminator(rng, SHAPE, width=4)
    return unet, cond, disc


# -- discriminator and objectives ----------------------------------------------------------

def test_zero_head_discriminates_at_one_half():
    d = Discriminator(np.random.default_rng(0), SHAPE, zero_final=True)
    z = np.random.default_rng(1).normal(size=(3,) + SHAPE)
    assert np.allclose(discriminate(d, z).data, 0.5)
    assert discriminate(d, z[0]).shape == ()
    value = discriminator_objective(d, z, z[::-1]).item()
    assert value == pytest.approx(2 * math.log(0.5), abs=1e-4)
    assert value == pytest.approx(-1.3863, abs=1e-4)


def test_bce_objective_oracle():
    assert bce_objective(0.5, 0.5) == pytest.approx(-1.3863, abs=1e-4)
    assert bce_objective(np.array([0.9, 0.8]), np.array([0.1, 0.3])) == pytest.approx(
        (math.log(0.9) + math.log(0.8)) / 2 + (math.log(0.9) + math.log(0.7)) / 2)


def test_logits_are_clamped():
    d = Discriminator(np.random.default_rng(0), SHAPE, zero_final=True)
    z = np.zeros((2,) + SHAPE)
    d.head.bias.data[:] = 1e3
    p = discriminate(d, z).data
    assert np.allclose(d.logits(z).data, 20.0)
    assert np.all(p < 1.0) and np.all(p > 0.5)
    d.head.bias.data[:] = -1e3
    assert np.all(discriminate(d, z).data > 0.0)
    # the objective stays finite even when D is saturated
    assert math.isfinite(discriminator_objective(d, z, z).item())


def test_fusion_objective():
    assert fusion_objective(0.5, -1.0, 0.01) == 0.49
    assert fusion_objective(0.5, -1.0, 0.0) == 0.5
    with pytest.raises(ArgumentError):
        fusion_objective(0.5, -1.0, -0.1)


def test_discriminator_objective_gradients():
    d = Discriminator(np.random.default_rng(2), SHAPE, width=4)
    rng = np.random.default_rng(3)
    real, fake = rng.normal(size=(2,) + SHAPE), rng.normal(size=(2,) + SHAPE)
    errors = check_gradients(lambda: discriminator_objective(d, real, fake), d.parameters(),
                             max_entries=6)
    assert max(errors) < 1e-3


def test_discriminator_rejects_wrong_shape():
    d = Discriminator(np.random.default_rng(0), SHAPE, width=4)
    with pytest.raises(Exception):
        d.logits(np.zeros((1, 4, 8, 8)))


# -- single steps ---------------------------------------------------------------------------

def test_discriminator_step_leaves_generator_untouched(codec):
    unet, cond, disc = tiny_models()
    sched = make_schedule(50)
    rng = np.random.default_rng(4)
    before = generator_checksum(unet, cond)
    d_before = disc.checksum()
    opt = Adam(disc.parameters(), lr=1e-3)
    train_step_d(disc, unet, codec, rng.normal(size=(2,) + SHAPE), rng.normal(size=(2,) + SHAPE),
                 sched, cond, opt, rng)
    assert generator_checksum(unet, cond) == before
    assert disc.checksum() != d_before
    assert all(p.grad is None for p in unet.parameters())


def test_generator_step_leaves_discriminator_untouched(codec):
    unet, cond, disc = tiny_models()
    sched = make_schedule(50)
    rng = np.random.default_rng(5)
    d_before = disc.checksum()
    before = generator_checksum(unet, cond)
    opt = Adam(unet.parameters() + cond.parameters(), lr=1e-3)
    l_diff, l_adv = train_step_g(disc, unet, cond, codec, rng.normal(size=(2,) + SHAPE), sched,
                                 opt, rng, lam=1.0)
    assert disc.checksum() == d_before
    assert all(p.grad is None for p in disc.parameters())
    assert generator_checksum(unet, cond) != before
    assert l_diff > 0 and l_adv > 0


def test_discriminator_learns_to_separate(codec):
    unet, cond, disc = tiny_models(6)
    sched = make_schedule(50)
    rng = np.random.default_rng(7)
    opt = Adam(disc.parameters(), lr=1e-3)
    values = []
    for _ in range(50):
        style = rng.normal(size=(4,) + SHAPE)
        glyph = rng.normal(size=(4,) + SHAPE) * 0.2 + 1.5
        values.append(train_step_d(disc, unet, codec, style, glyph, sched, cond, opt, rng))
    assert np.mean(values[-10:]) > np.mean(values[:10])
    assert values[-1] > -0.5


def test_diffusion_loss_decreases():
    unet, cond, _ = tiny_models(8)
    sched = make_schedule(50)
    data = np.random.default_rng(9).normal(size=(4,) + SHAPE) * 0.3
    data[:, 0] += 1.0
    opt = Adam(unet.parameters() + cond.parameters(), lr=2e-3)
    rng = np.random.default_rng(10)
    losses = [train_step_diffusion(unet, cond, data, sched, opt, rng) for _ in range(200)]
    assert np.mean(losses[-20:]) < 0.8 * np.mean(losses[:20])


def test_generator_step_rejects_negative_lambda(codec):
    unet, cond, disc = tiny_models()
    opt = Adam(unet.parameters(), lr=1e-3)
    with pytest.raises(ArgumentError):
        train_step_g(disc, unet, cond, codec, np.zeros((1,) + SHAPE), make_schedule(10), opt,
                     np.random.default_rng(0), lam=-1.0)


def test_unfrozen_codec_is_refused(images, policy):
    with pytest.raises(ContractError):
        train_fusion(images, policy, "A", FusionTrainConfig(epochs=1, **TINY),
                     Codec(np.random.default_rng(0), 4))


# -- full trainer -----------------------------------------------------------------------------

def test_lambda_zero_matches_diffusion_only(codec, images, policy):
    cfg = FusionTrainConfig(lam=0.0, epochs=5, batch_size=2, style_image_count=8, seed=3,
                            lr_generator=1e-3, **TINY)
    bundle = train_fusion(images, policy, "A", cfg, codec)
    with T.no_grad():
        latents = encode(codec, np.stack(images)).data
    ref = train_diffusion_only(latents, cfg)
    # 8 images at batch 2 over 5 epochs: 20 generator steps
    assert len(bundle.history) == 5
    assert generator_checksum(bundle.unet, bundle.cond) == generator_checksum(ref.unet, ref.cond)


def test_lambda_changes_the_generator(codec, images, policy):
    base = dict(epochs=1, batch_size=4, style_image_count=8, seed=3, lr_generator=1e-3, **TINY)
    a = train_fusion(images, policy, "A", FusionTrainConfig(lam=0.0, **base), codec)
    b = train_fusion(images, policy, "A", FusionTrainConfig(lam=1.0, **base), codec)
    assert generator_checksum(a.unet, a.cond) != generator_checksum(b.unet, b.cond)


def test_training_is_reproducible_and_reports_history(codec, images, policy):
    cfg = FusionTrainConfig(epochs=2, batch_size=4, style_image_count=8, seed=1, **TINY)
    seen = []
    a = train_fusion(images, policy, "A", cfg, codec, progress=lambda e, row: seen.append(e))
    b = train_fusion(images, policy, "A", cfg, codec)
    assert seen == [0, 1]
    assert a.history == b.history
    assert generator_checksum(a.unet, a.cond) == generator_checksum(b.unet, b.cond)
    for epoch, l_diff, l_dis, total in a.history:
        assert total == pytest.approx(l_diff + cfg.lam * l_dis)


def test_non_finite_loss_aborts(codec, images, policy):
    bad = [np.full_like(images[0], np.nan)] + list(images[1:])
    cfg = FusionTrainConfig(epochs=1, batch_size=8, style_image_count=8, **TINY)
    with pytest.raises(TrainingAborted, match="epoch 0"):
        train_fusion(bad, policy, "A", cfg, codec)


def test_input_validation(codec, images, policy):
    cfg = FusionTrainConfig(epochs=1, style_image_count=8, **TINY)
    with pytest.raises(ConfigurationError) as err:
        train_fusion(images[:4], policy, "A", cfg, codec)
    assert err.value.key == "style_dir"
    with pytest.raises(ConfigurationError) as err:
        train_fusion(images, policy, "a", cfg, codec)
    assert err.value.key == "text"


@pytest.mark.parametrize("kwargs,key", [
    ({"lam": -0.5}, "lambda"), ({"lr_generator": 0}, "lr_generator"),
    ({"batch_size": 0}, "batch_size"), ({"mode": "any_font"}, "mode"),
    ({"d_steps_per_g_step": 0}, "d_steps_per_g_step"), ({"epochs": 0}, "epochs"),
])
def test_config_errors_name_the_key(kwargs, key):
    with pytest.raises(ConfigurationError) as err:
        FusionTrainConfig(**kwargs)
    assert err.value.key == key


def test_config_defaults_and_round_trip():
    cfg = FusionTrainConfig()
    assert cfg.lam == 0.01 and cfg.style_image_count == 25 and cfg.timesteps == 200
    assert cfg.effective_epochs == 200
    assert FusionTrainConfig(mode="multi_font").effective_epochs == 300
    back = FusionTrainConfig.from_dict(cfg.to_dict())
    assert back == cfg


def test_build_models_is_seeded():
    cfg = FusionTrainConfig(seed=4, **TINY)
    a, b = build_models(cfg), build_models(cfg)
    assert generator_checksum(a.unet, a.cond) == generator_checksum(b.unet, b.cond)
    assert a.disc.checksum() == b.disc.checksum()
    c = build_models(FusionTrainConfig(seed=5, **TINY))
    assert a.unet.checksum() != c.unet.checksum()


# -- base pretraining ------------------------------------------------------------------------

def test_pretraining_lowers_loss_and_seeds_fine_tuning(codec, images, policy):
    cfg = FusionTrainConfig(epochs=1, batch_size=4, style_image_count=8, seed=5, **TINY)
    latents = np.random.default_rng(0).normal(size=(16,) + SHAPE) * 0.5
    base = pretrain_generator(latents, cfg, 60, lr=3e-3, batch_size=4)
    assert base["loss"].shape == (60,)
    assert base["loss"][-15:].mean() < base["loss"][:15].mean()
    again = pretrain_generator(latents, cfg, 60, lr=3e-3, batch_size=4)
    assert all(np.array_equal(base["unet"][k], again["unet"][k]) for k in base["unet"])

    state = build_models(cfg, init=base)
    assert all(np.array_equal(p, base["unet"][k]) for k, p in state.unet.state_dict().items())
    tuned = train_fusion(images, policy, "A", cfg, codec, init=base)
    scratch = train_fusion(images, policy, "A", cfg, codec)
    assert generator_checksum(tuned.unet, tuned.cond) != generator_checksum(scratch.unet, scratch.cond)


def test_pretraining_input_errors():
    cfg = FusionTrainConfig(**TINY)
    with pytest.raises(ArgumentError):
        pretrain_generator(np.zeros((8,) + SHAPE), cfg, 0)
    with pytest.raises(ConfigurationError) as err:
        pretrain_generator(np.zeros((3,) + SHAPE), cfg, 1)
    assert err.value.key == "corpus"
