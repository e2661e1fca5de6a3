"""Named, reproducible random streams.

Every source of randomness in the package (parameter init, shuffling,
temporal dropout, pixel sampling, subsample ablation) draws from a stream
derived from (seed, name), so runs are reproducible under any execution
order that keeps the stream split fixed.
"""

from __future__ import annotations

import zlib

import numpy as np


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Return a generator for the stream `name` rooted at `seed`."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([seed, tag]))


def child_seed(seed: int, name: str) -> int:
    """Derive a child integer seed for handing to other components."""
    return int(rng_stream(seed, name).integers(0, 2**31 - 1))
