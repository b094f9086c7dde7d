"""Deterministic random-stream derivation for parallel sampling.

Every randomized operation draws from a counter-based Philox stream that
is keyed by (master seed, purpose tags, sample index).  Sample ``j`` of a
batch always reads substream ``j`` regardless of how the batch is split
across workers, so results are bit-identical for any worker count.
"""

import numpy as np

# Purpose tags keep streams for different stages of a run disjoint.
TAG_OPT = 1
TAG_MC = 2
TAG_PRIOR = 3
TAG_PLANT = 4
TAG_PLOT = 5
TAG_INTERVAL = 6


def stream_key(seed, *tags):
    """Derive a 64-bit stream key from a master seed and integer tags."""
    entropy = [int(seed)] + [int(t) for t in tags]
    ss = np.random.SeedSequence(entropy)
    return int(ss.generate_state(1, np.uint64)[0])


def sample_stream(key, index):
    """Return the generator for substream ``index`` under ``key``.

    Distinct (key, index) pairs give independent Philox streams.
    """
    return np.random.Generator(
        np.random.Philox(key=np.array([key, index], dtype=np.uint64))
    )
