"""Named random streams derived from one master seed."""
from __future__ import annotations

import zlib

import numpy as np


def stream_seed(master: int, name: str) -> np.random.SeedSequence:
    """Independent seed sequence for stream ``name``; stable across processes."""
    return np.random.SeedSequence([int(master) & (2**64 - 1), zlib.crc32(name.encode())])


def stream(master: int, name: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(master, name))
