"""Deterministic random streams.

Every source of randomness in the package flows through `stream`, which
builds a counter-based (Philox) generator from an explicit integer key
path.  Nothing ever reads ambient entropy, so any run is reproducible
from its recorded seeds alone.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def stream(*key: int) -> np.random.Generator:
    """Return a Philox generator keyed by the given integers.

    Distinct key tuples yield statistically independent streams; the same
    tuple always yields the same stream.
    """
    if not key:
        raise ConfigError("random stream requires at least one key integer")
    if any(k < 0 for k in key):
        raise ConfigError(f"random stream keys must be non-negative, got {key}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def derive_seed(*key: int) -> int:
    """Collapse a key path to a single non-negative integer seed."""
    return int(np.random.SeedSequence(key).generate_state(1, np.uint64)[0])
