"""Seedable, splittable random streams.

Every stream is a numpy ``Generator`` over the Philox-4x64 counter-based bit
generator, keyed through ``SeedSequence``. A stream is identified by a 64-bit
root seed plus an optional tuple of integer stream indices; the split function
is ``SeedSequence([seed, *indices])``. Identical (seed, indices) give
bit-identical draws on every platform numpy supports.
"""
import numpy as np

MASK64 = (1 << 64) - 1


def make_rng(seed, *stream):
    """Return the generator for ``seed`` and sub-stream indices ``stream``."""
    if isinstance(seed, np.random.Generator):
        if stream:
            raise TypeError("cannot derive a sub-stream from an existing Generator")
        return seed
    key = [int(seed) & MASK64] + [int(i) & MASK64 for i in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def split(rng, count):
    """Split ``rng`` into ``count`` independent child generators."""
    return [np.random.Generator(np.random.Philox(s))
            for s in rng.bit_generator.seed_seq.spawn(count)]
