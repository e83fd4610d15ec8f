"""
Keyed, counter-based random streams.

Every random draw in the toolkit comes from a Philox generator keyed by the experiment
seed plus a tuple of labels (stream name, view id, step, ...). Nothing touches global
random state, so results never depend on call order.
"""

import zlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _key_word(key: Key) -> int:
    if isinstance(key, (bool, np.bool_)):
        raise TypeError("boolean keys are ambiguous")
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("integer keys must be non-negative")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def generator(seed: int, *keys: Key) -> np.random.Generator:
    """Independent stream for (seed, *keys)."""
    entropy = [_key_word(seed)] + [_key_word(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def normal_field(seed: int, shape, *keys: Key) -> np.ndarray:
    """Standard normal array whose element i depends only on (seed, keys, i)."""
    return generator(seed, *keys).standard_normal(shape)


def uniform_scores(seed: int, labels, *keys: Key) -> np.ndarray:
    """One uniform draw per label, keyed by the label itself rather than its position."""
    return np.array([generator(seed, *keys, label).random() for label in labels])
