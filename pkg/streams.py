"""
Counter-derived random streams

Every random quantity is drawn from a generator keyed by the master seed
and the integer coordinates of the work item (t index, point, repetition,
...), so results do not depend on how work is scheduled across threads.
"""
import numpy as np


def derive_rng(master_seed: int, *counters: int) -> np.random.Generator:
    """
    Build an independent Philox stream for one work item.

    Args:
        master_seed: Run-wide seed (unsigned 64-bit)
        *counters: Non-negative integer coordinates of the work item

    Returns:
        A numpy Generator unique to (master_seed, counters)
    """
    entropy = [int(master_seed) & 0xFFFFFFFFFFFFFFFF] + [int(c) for c in counters]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
