"""Deterministic random streams.

Every replicate draws from its own generator derived from a master seed and
an integer key path, so results never depend on scheduling or worker count.
"""

import logging

import numpy as np

log = logging.getLogger(__name__)


def stream(seed, *keys):
    """Independent ``Generator`` for ``(seed, *keys)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def fresh_seed():
    """A random 63-bit seed from OS entropy (logged so the run can be replayed)."""
    seed = int(np.random.SeedSequence().entropy % (2**63))
    log.info("no seed given; using seed %d", seed)
    return seed
