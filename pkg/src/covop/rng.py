"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by a
seed that is a stateless function of a master seed and a tuple of integer
indices (replicate number, dataset number, ...).  Work items can therefore
be executed in any order, on any number of threads, and still produce the
same values.

The scheme is::

    derive_seed(master, *keys) = first 64 bits of
        SeedSequence(entropy=master, spawn_key=keys).generate_state(2, uint32)

and a stream is ``Generator(Philox(SeedSequence(seed)))``.
"""

from __future__ import annotations

import numpy as np

SCHEME = (
    "derive_seed(master, *keys) = low 64 bits of "
    "numpy.random.SeedSequence(entropy=master, spawn_key=keys).generate_state(2, uint32); "
    "stream = numpy.random.Generator(numpy.random.Philox(seed))"
)

# Stream tags used by the harness as the first key after the master seed.
TAG_REFERENCE = 0
TAG_DATASET = 1
TAG_BOOTSTRAP = 2
TAG_SELF_TEST = 3
TAG_GAUSSIAN = 4
TAG_PROBE = 5


def _check_key(value) -> int:
    v = int(value)
    if v < 0:
        raise ValueError(f"seed keys must be non-negative integers, got {value!r}")
    return v


def derive_seed(master: int, *keys: int) -> int:
    """Mix ``master`` and ``keys`` into a 64-bit seed.

    >>> derive_seed(1, 2) == derive_seed(1, 2)
    True
    >>> derive_seed(1, 2) != derive_seed(1, 3)
    True
    """
    ss = np.random.SeedSequence(entropy=_check_key(master), spawn_key=tuple(_check_key(k) for k in keys))
    lo, hi = ss.generate_state(2, np.uint32)
    return int(lo) | (int(hi) << 32)


def stream(seed: int) -> np.random.Generator:
    """Return the Philox generator for a (derived) seed."""
    return np.random.Generator(np.random.Philox(_check_key(seed)))
