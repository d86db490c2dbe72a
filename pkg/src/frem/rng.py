"""Deterministic random-stream derivation.

Every stochastic routine in the package draws from a generator derived from
a single master seed plus a key path.  Two different key paths give
statistically independent streams, and the mapping (seed, key) -> stream does
not depend on execution order or worker count, so parallel and serial runs
of the same experiment produce bit-identical output.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_word(part) -> int:
    """Map one key component to an unsigned 32-bit word.

    Integers in range pass through unchanged; strings (and out-of-range
    integers) are hashed, so named streams like ``("bridge", 3)`` work and
    remain stable across runs and platforms.
    """
    if isinstance(part, (int, np.integer)) and 0 <= part < 2 ** 32:
        return int(part)
    blob = str(part).encode("utf-8")
    return int.from_bytes(hashlib.blake2s(blob, digest_size=4).digest(), "big")


def substream(master_seed: int, *key) -> np.random.Generator:
    """Return the generator for ``(master_seed, key)``.

    The same arguments always yield a generator in the same state.  Distinct
    key tuples (of any length) yield independent streams.
    """
    if master_seed < 0:
        raise ValueError("master_seed must be a nonnegative integer")
    seq = np.random.SeedSequence(master_seed,
                                 spawn_key=tuple(_key_word(k) for k in key))
    # SFC64 draws normals ~3x faster than the default bit generator and has
    # no known statistical weaknesses; streams are keyed by SeedSequence.
    return np.random.Generator(np.random.SFC64(seq))


def as_generator(rng) -> np.random.Generator:
    """Coerce ``rng`` (Generator or integer seed) to a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return substream(int(rng))
