"""Named random streams derived from a single run seed."""

import zlib
from typing import Union

import numpy as np

StreamKey = Union[int, str]


def _key(part: StreamKey) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode('utf-8'))
    return int(part) & 0xFFFFFFFFFFFFFFFF


def substream(seed: int, name: str, *extra: StreamKey) -> np.random.Generator:
    """
    Derive an independent Generator for a named purpose.

    Args:
        seed: Run seed
        name: Stream name ('data', 'init', 'noise', 'probe', 'shuffle', ...)
        *extra: Further keys such as epoch or cloud index

    Returns:
        A Generator that depends only on (seed, name, extra)
    """
    entropy = [_key(seed), _key(name)] + [_key(p) for p in extra]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed: int, name: str, *extra: StreamKey) -> int:
    """Derive a 63-bit integer seed from a named stream."""
    return int(substream(seed, name, *extra).integers(0, 2 ** 63 - 1))
