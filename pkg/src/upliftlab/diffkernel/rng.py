"""Seedable, splittable random streams.

Each stream is a Philox (counter-based) generator keyed by a
``SeedSequence`` built from the root seed followed by a path of stream
labels, e.g. ``substream(7, "datagen", "user", 42)``.  Integer labels are
used verbatim; string labels are mapped through CRC-32 so the derivation is
stable across processes and Python versions.  Two different paths give
statistically independent streams, and the same path always replays the
same numbers, so work can be split per user or per layer without changing
results.
"""

from __future__ import annotations

import zlib

import numpy as np


def _word(label) -> int:
    if isinstance(label, (bool, np.bool_)):
        return int(label)
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("stream labels must be non-negative")
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def substream(seed: int, *path) -> np.random.Generator:
    words = [_word(seed)] + [_word(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
