"""Named random streams derived from a single root seed.

Every consumer (controller init, episode sampling, PCM programming, PCM
reads, ...) gets its own generator so one source of randomness can be varied
without perturbing the others.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("init", "episodes", "validation", "test", "pcm-program", "pcm-read", "data", "sigma-lambda")


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Return a generator for ``name`` under root ``seed``.

    ``extra`` integers (episode index, sweep level, ...) derive sub-streams.
    """
    key = [int(seed), zlib.crc32(name.encode("utf-8"))]
    key.extend(int(e) for e in extra)
    return np.random.default_rng(np.random.SeedSequence(key))
