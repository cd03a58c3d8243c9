"""Seed splitting.

Every random stream is ``SeedSequence([root_seed, *label_words])`` where a string
label contributes the CRC32 of its UTF-8 bytes and an integer label contributes
itself. Streams with different labels are statistically independent, and the
mapping does not depend on call order.
"""

from __future__ import annotations

import zlib

import numpy as np


def _word(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("integer stream labels must be nonnegative")
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def rng_for(root_seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(root_seed), *(_word(x) for x in labels)]))
