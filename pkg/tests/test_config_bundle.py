import struct

import numpy as np
import pytest

from glyphfusion import tensor as T
from glyphfusion.adversary import FusionTrainConfig, build_models, pretrain_generator
from glyphfusion.bundle import (ModelBundle, decode_bundle, encode_bundle, encode_codec, load_bundle,
                                load_base, load_codec, pack_tensors, save_base, save_bundle, save_codec, unpack_tensors)
from glyphfusion.codec import Codec
from glyphfusion.config import (RunConfig, config_text, deterministic_mode, load_config,
                                parse_config, save_config)
from glyphfusion.errors import ConfigurationError, CorruptionError, FormatError

TINY = dict(unet_widths=(8, 16), d_cond=8, disc_width=4, blocks_per_level=1)


def tiny_bundle(dtype=np.float32):
    with T.default_dtype(dtype):
        codec = Codec(np.random.default_rng(0), 2)
        codec.latent_scale = 1.7
        codec.history = [0.5, 0.25]
        codec.freeze()
        cfg = FusionTrainConfig(seed=2, **TINY)
        state = build_models(cfg)
    return ModelBundle(codec, state.unet, state.cond, state.disc, state.sched, cfg.to_dict(),
                       [(0, 0.9, -1.3, 0.887)])


@pytest.fixture(scope="module")
def blob():
    return encode_bundle(tiny_bundle())


# -- tensor packing ---------------------------------------------------------------------------

def test_pack_round_trip():
    arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array(3.5),
              "idx": np.array([1, -2], dtype=np.int64)}
    back = unpack_tensors(pack_tensors(arrays))
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].dtype == arrays[k].dtype and np.array_equal(back[k], arrays[k])


def test_pack_rejects_unsupported_dtype():
    with pytest.raises(FormatError):
        pack_tensors({"x": np.zeros(2, dtype=np.int8)})


# -- bundle format --------------------------------------------------------------------------------

@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_bundle_round_trip_is_bitwise_stable(tmp_path, dtype):
    bundle = tiny_bundle(dtype)
    data = encode_bundle(bundle)
    back = decode_bundle(data)
    assert encode_bundle(back) == data
    assert back.unet.checksum() == bundle.unet.checksum()
    assert back.cond.checksum() == bundle.cond.checksum()
    assert back.disc.checksum() == bundle.disc.checksum()
    assert back.codec.checksum() == bundle.codec.checksum()
    assert back.codec.latent_scale == 1.7 and back.codec.frozen
    assert np.array_equal(back.sched.alpha_bar, bundle.sched.alpha_bar)
    assert back.history == [(0, 0.9, -1.3, 0.887)]
    assert back.config["lam"] == 0.01
    path = tmp_path / "b.dsfb"
    save_bundle(bundle, path)
    assert path.read_bytes() == data
    assert load_bundle(path).unet.checksum() == bundle.unet.checksum()


def test_every_single_byte_corruption_is_detected(blob):
    data = bytearray(blob)
    missed = []
    for i in range(len(data)):
        data[i] ^= 0x5A
        try:
            decode_bundle(bytes(data))
            missed.append(i)
        except FormatError:
            pass
        data[i] ^= 0x5A
    assert missed == []


@pytest.mark.parametrize("cut", [0, 10, 43, -1, -33])
def test_truncation_detected(blob, cut):
    with pytest.raises(FormatError):
        decode_bundle(blob[:cut])


def test_bad_magic_and_version(blob):
    with pytest.raises(FormatError, match="magic"):
        decode_bundle(b"XXXX" + blob[4:])
    bumped = blob[:4] + struct.pack("<I", 99) + blob[8:]
    with pytest.raises(FormatError, match="version 99"):
        decode_bundle(bumped)


def test_trailer_mismatch_is_corruption(blob):
    with pytest.raises(CorruptionError):
        decode_bundle(blob[:-1] + bytes([blob[-1] ^ 1]))


def test_codec_checkpoint_round_trip(tmp_path):
    codec = tiny_bundle().codec
    path = tmp_path / "c.dsfc"
    save_codec(codec, path)
    back = load_codec(path)
    assert back.checksum() == codec.checksum() and back.latent_scale == codec.latent_scale
    assert encode_codec(back) == path.read_bytes()
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 1
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptionError):
        load_codec(path)
    path.write_bytes(b"DSFB" + bytes(100))
    with pytest.raises(FormatError):
        load_codec(path)


def test_base_checkpoint_round_trip_and_corruption(tmp_path):
    cfg = FusionTrainConfig(seed=4, batch_size=2, **TINY)
    base = pretrain_generator(np.random.default_rng(0).normal(size=(4, 4, 16, 16)), cfg, 2,
                              batch_size=2)
    path = tmp_path / "b.dsfp"
    save_base(base, path)
    back = load_base(path)
    assert np.array_equal(back["loss"], base["loss"])
    for part in ("unet", "conditioning"):
        assert list(back[part]) == list(base[part])
        assert all(np.array_equal(back[part][k], base[part][k]) for k in base[part])
    good = path.read_bytes()
    for i in range(0, len(good), max(1, len(good) // 200)):
        path.write_bytes(good[:i] + bytes([good[i] ^ 0x5A]) + good[i + 1:])
        with pytest.raises(FormatError):
            load_base(path)
    path.write_bytes(good[:-5])
    with pytest.raises(FormatError):
        load_base(path)
    path.write_bytes(b"DSFB" + good[4:])
    with pytest.raises(FormatError, match="not a generator checkpoint"):
        load_base(path)


# -- run configuration ---------------------------------------------------------------------------

def test_defaults():
    cfg = RunConfig()
    assert cfg.lam == 0.01 and cfg.style_image_count == 25 and cfg.effective_epochs == 200
    assert cfg.sampler == "ddim" and cfg.fonts == ("mono-a",)


def test_parse_file(tmp_path):
    (tmp_path / "styles").mkdir()
    text = """
    # demo
    text = A
    lambda = 0.5      # heavier glyph pull
    fonts = mono-a, mono-bold
    style_dir = styles
    unet_widths = 8,16
    deterministic = yes
    prompt = none
    epochs = 3
    """
    cfg = parse_config(text, tmp_path)
    assert cfg.lam == 0.5 and cfg.fonts == ("mono-a", "mono-bold")
    assert cfg.style_dir == str(tmp_path / "styles")
    assert cfg.unet_widths == (8, 16) and cfg.deterministic is True
    assert cfg.prompt is None and cfg.epochs == 3


@pytest.mark.parametrize("text,key", [
    ("lam = 0.1", "lam"),
    ("colour = red", "colour"),
    ("epochs = 2\nepochs = 3", "epochs"),
    ("epochs = two", "epochs"),
    ("lambda = -1", "lambda"),
    ("sampler = euler", "sampler"),
    ("sampler_steps = 500", "sampler_steps"),
    ("mode = multi_font", "fonts"),
    ("fonts = nosuchfont", "fonts"),
    ("style_dir = /nonexistent/dir", "style_dir"),
    ("deterministic = maybe", "deterministic"),
])
def test_parse_errors_name_the_key(text, key):
    with pytest.raises(ConfigurationError) as err:
        parse_config(text)
    assert err.value.key == key


def test_line_without_equals():
    with pytest.raises(ConfigurationError, match="line 2"):
        parse_config("epochs = 1\njust words\n")


def test_round_trip(tmp_path):
    cfg = RunConfig(lam=0.25, fonts=("mono-a", "mono-bold"), mode="multi_font", epochs=7,
                    unet_widths=(8, 16), eta=0.5, deterministic=True, prompt="lava lamp")
    path = tmp_path / "run.cfg"
    save_config(cfg, path)
    assert "lambda = 0.25" in path.read_text()
    assert load_config(path) == cfg
    assert config_text(load_config(path)) == config_text(cfg)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError) as err:
        load_config(tmp_path / "absent.cfg")
    assert err.value.key == "config"


def test_overrides_and_train_config():
    cfg = RunConfig(epochs=4).with_overrides(lam=1.0, seed=9)
    assert cfg.lam == 1.0 and cfg.seed == 9 and cfg.epochs == 4
    train = cfg.train_config()
    assert type(train) is FusionTrainConfig and train.lam == 1.0
    with pytest.raises(ConfigurationError):
        cfg.with_overrides(n_candidates=0)


def test_deterministic_flag_from_environment(monkeypatch):
    assert not RunConfig().is_deterministic
    monkeypatch.setenv("DSF_DETERMINISTIC", "1")
    assert RunConfig().is_deterministic


def test_deterministic_mode_limits_threads():
    from threadpoolctl import threadpool_info

    with deterministic_mode(True):
        assert all(p["num_threads"] == 1 for p in threadpool_info())
    with deterministic_mode(False):
        pass
