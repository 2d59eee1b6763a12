"""Named random sub-streams derived from one integer seed.

Each component draws from its own stream, so adding draws in one place
(say, extra augmentation) leaves every other stream untouched.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("codec", "unet-init", "cond-init", "disc-init", "noise", "disc-noise", "augment", "shuffle",
           "sampler", "classifier", "scorer", "pretrain")


def stream(seed: int, name: str) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))


def streams(seed: int, names=STREAMS) -> dict[str, np.random.Generator]:
    return {name: stream(seed, name) for name in names}
