"""Seeded random streams.

All stochastic pieces (dropout, zoneout, initialisation, shuffling, vocoder
noise) draw from ``numpy.random.Generator`` over the Philox-4x64 counter-based
bit generator keyed directly by the integer seed. ``Philox(key=seed)`` is
specified by its key and counter alone, so a stream can be reproduced in any
implementation of Philox-4x64-10.
"""
import numpy as np


def make_rng(seed):
    return np.random.Generator(np.random.Philox(key=int(seed) & 0xFFFFFFFFFFFFFFFF))


def spawn(seed, stream):
    """Independent stream ``stream`` derived from ``seed`` (second key word)."""
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
