"""Model bundle container and its binary checkpoint format.

Layout (all integers little-endian)::

    magic      4 bytes   b"DSFB"
    version    u32       FORMAT_VERSION
    n_sections u32
    section * n_sections:
        name_len  u16, name (utf-8)
        size      u64, payload (size bytes)
        sha256    32 bytes over the payload
    trailer    32 bytes  sha256 over every preceding byte

Tensor-dict payloads are ``u32 count`` followed by, per entry,
``u16 name_len, name, u8 dtype (0=f32, 1=f64, 2=i64), u8 ndim,
u32 dims[ndim], raw data``.  The ``config`` section is UTF-8 JSON.
Sections: ``codec``, ``unet``, ``conditioning``, ``discriminator``,
``schedule``, ``config``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .codec import Codec
from .diffusion import Conditioning, NoiseSchedule, UNet
from .errors import CorruptionError, FormatError
from .io import atomic_write_bytes

MAGIC = b"DSFB"
FORMAT_VERSION = 1
SECTIONS = ("codec", "unet", "conditioning", "discriminator", "schedule", "config")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


@dataclass
class ModelBundle:
    codec: Codec
    unet: UNet
    cond: Conditioning
    disc: object
    sched: NoiseSchedule
    config: dict = field(default_factory=dict)
    history: list = field(default_factory=list)


def pack_tensors(arrays: dict[str, np.ndarray]) -> bytes:
    out = [struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise FormatError(f"cannot serialise dtype {arr.dtype} for {name!r}")
        key = name.encode("utf-8")
        out.append(struct.pack("<H", len(key)) + key)
        out.append(struct.pack("<BB", code, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError("unexpected end of data")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def unpack_tensors(payload: bytes) -> dict[str, np.ndarray]:
    r = _Reader(payload)
    (count,) = r.unpack("<I")
    out = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8")
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise FormatError(f"unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}I")
        dt = _DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        out[name] = np.frombuffer(r.take(size), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if r.pos != len(payload):
        raise FormatError("trailing bytes in tensor section")
    return out


def _codec_arrays(codec: Codec) -> dict[str, np.ndarray]:
    arrays = codec.state_dict()
    arrays["meta.latent_scale"] = np.array([codec.latent_scale], dtype=np.float64)
    arrays["meta.width"] = np.array([codec.width], dtype=np.int64)
    arrays["meta.history"] = np.asarray(codec.history, dtype=np.float64)
    return arrays


def encode_bundle(bundle: ModelBundle) -> bytes:
    dtype = str(bundle.unet.conv_in.weight.dtype)
    config = dict(bundle.config)
    config["dtype"] = dtype
    config["history"] = [list(map(float, row)) for row in bundle.history]
    payloads = {
        "codec": pack_tensors(_codec_arrays(bundle.codec)),
        "unet": pack_tensors(bundle.unet.state_dict()),
        "conditioning": pack_tensors(bundle.cond.state_dict()),
        "discriminator": pack_tensors(bundle.disc.state_dict()),
        "schedule": pack_tensors({"beta": bundle.sched.beta}),
        "config": json.dumps(config, sort_keys=True).encode("utf-8"),
    }
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(payloads))]
    for name in SECTIONS:
        key = name.encode("utf-8")
        payload = payloads[name]
        parts += [struct.pack("<H", len(key)), key, struct.pack("<Q", len(payload)), payload,
                  hashlib.sha256(payload).digest()]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_bundle(bundle: ModelBundle, path) -> None:
    atomic_write_bytes(Path(path), encode_bundle(bundle))


def decode_sections(data: bytes) -> dict[str, bytes]:
    """Verify framing and checksums; return raw section payloads."""
    if len(data) < 12 + 32:
        raise FormatError("file too short to be a bundle")
    if data[:4] != MAGIC:
        raise FormatError("bad magic; not a bundle file")
    version, n_sections = struct.unpack("<II", data[4:12])
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported bundle version {version} (expected {FORMAT_VERSION})")
    body, trailer = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != trailer:
        raise CorruptionError("bundle checksum mismatch")
    r = _Reader(body)
    r.pos = 12
    sections = {}
    for _ in range(n_sections):
        (n,) = r.unpack("<H")
        name = r.take(n).decode("utf-8", errors="replace")
        (size,) = r.unpack("<Q")
        payload = r.take(size)
        if hashlib.sha256(payload).digest() != r.take(32):
            raise CorruptionError(f"checksum mismatch in section {name!r}")
        sections[name] = payload
    if r.pos != len(body):
        raise FormatError("trailing bytes after sections")
    missing = [s for s in SECTIONS if s not in sections]
    if missing:
        raise FormatError(f"bundle is missing sections {missing}")
    return sections


def decode_bundle(data: bytes) -> ModelBundle:
    from .adversary import Discriminator

    sections = decode_sections(data)
    config = json.loads(sections["config"].decode("utf-8"))
    history = [tuple(row) for row in config.pop("history", [])]
    dtype = np.dtype(config.get("dtype", "float64"))
    rng = np.random.default_rng(0)
    codec_arrays = unpack_tensors(sections["codec"])
    beta = unpack_tensors(sections["schedule"])["beta"]
    alpha = 1.0 - beta
    sched = NoiseSchedule(len(beta), beta, alpha, np.cumprod(alpha))
    with T.default_dtype(dtype):
        codec = Codec(rng, int(codec_arrays.pop("meta.width")[0]))
        codec.latent_scale = float(codec_arrays.pop("meta.latent_scale")[0])
        codec.history = codec_arrays.pop("meta.history").tolist()
        codec.load_state_dict(codec_arrays)
        codec.freeze()
        unet = UNet(rng, widths=config.get("unet_widths", (32, 64, 128)),
                    blocks_per_level=config.get("blocks_per_level", 2),
                    d_cond=config.get("d_cond", 128))
        unet.load_state_dict(unpack_tensors(sections["unet"]))
        cond = Conditioning(config.get("d_cond", 128))
        cond.load_state_dict(unpack_tensors(sections["conditioning"]))
        disc = Discriminator(rng, width=config.get("disc_width", 32))
        disc.load_state_dict(unpack_tensors(sections["discriminator"]))
    return ModelBundle(codec, unet, cond, disc, sched, config, history)


def load_bundle(path) -> ModelBundle:
    return decode_bundle(Path(path).read_bytes())


# -- standalone codec checkpoints (written by ``train-codec``) ---------------------------

CODEC_MAGIC = b"DSFC"


def encode_codec(codec: Codec) -> bytes:
    payload = pack_tensors(_codec_arrays(codec))
    dtype = str(codec.enc[0].weight.dtype).encode()
    body = (CODEC_MAGIC + struct.pack("<IH", FORMAT_VERSION, len(dtype)) + dtype
            + struct.pack("<Q", len(payload)) + payload)
    return body + hashlib.sha256(body).digest()


def save_codec(codec: Codec, path) -> None:
    atomic_write_bytes(Path(path), encode_codec(codec))


def load_codec(path) -> Codec:
    data = Path(path).read_bytes()
    if len(data) < 14 + 32 or data[:4] != CODEC_MAGIC:
        raise FormatError("not a codec checkpoint")
    body, trailer = data[:-32], data[-32:]
    version, n = struct.unpack("<IH", body[4:10])
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported codec checkpoint version {version}")
    if hashlib.sha256(body).digest() != trailer:
        raise CorruptionError("codec checkpoint checksum mismatch")
    r = _Reader(body)
    r.pos = 10
    dtype = np.dtype(r.take(n).decode())
    (size,) = r.unpack("<Q")
    arrays = unpack_tensors(r.take(size))
    with T.default_dtype(dtype):
        codec = Codec(np.random.default_rng(0), int(arrays.pop("meta.width")[0]))
    codec.latent_scale = float(arrays.pop("meta.latent_scale")[0])
    codec.history = arrays.pop("meta.history").tolist()
    codec.load_state_dict(arrays)
    codec.freeze()
    return codec


# -- pretrained generator weights (written by ``train-codec``) ---------------------------

BASE_MAGIC = b"DSFP"


def encode_base(base: dict) -> bytes:
    arrays = {f"unet.{k}": v for k, v in base["unet"].items()}
    arrays.update({f"conditioning.{k}": v for k, v in base["conditioning"].items()})
    arrays["meta.loss"] = np.asarray(base.get("loss", []), dtype=np.float64)
    body = BASE_MAGIC + struct.pack("<I", FORMAT_VERSION) + pack_tensors(arrays)
    return body + hashlib.sha256(body).digest()


def save_base(base: dict, path) -> None:
    atomic_write_bytes(Path(path), encode_base(base))


def load_base(path) -> dict:
    data = Path(path).read_bytes()
    if len(data) < 8 + 32 or data[:4] != BASE_MAGIC:
        raise FormatError("not a generator checkpoint")
    body, trailer = data[:-32], data[-32:]
    (version,) = struct.unpack("<I", body[4:8])
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported generator checkpoint version {version}")
    if hashlib.sha256(body).digest() != trailer:
        raise CorruptionError("generator checkpoint checksum mismatch")
    out: dict = {"unet": {}, "conditioning": {}}
    for name, arr in unpack_tensors(body[8:]).items():
        group, _, key = name.partition(".")
        if group == "meta":
            out["loss"] = arr
        elif group in out:
            out[group][key] = arr
        else:
            raise FormatError(f"unexpected tensor {name!r} in generator checkpoint")
    return out
