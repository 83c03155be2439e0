"""Counter-based random substreams.

Provides:
- substream: Generator over Philox keyed by (seed, *counters).

Every parallel unit of work (posterior draw l, predictive block (l, b)) gets
its own stream derived only from the seed and its counters, so the output
does not depend on thread count or scheduling order.
"""

import numpy as np


def substream(seed: int, *counters: int) -> np.random.Generator:
    if seed is None:
        raise ValueError("seed is mandatory for reproducible sampling")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(c) for c in counters))
    return np.random.Generator(np.random.Philox(ss))
