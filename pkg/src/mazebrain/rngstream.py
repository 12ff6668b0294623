"""Deterministic random-stream derivation.

Every stochastic component of a run draws from its own substream, derived
from the master seed plus a small tuple of integer keys:

    (seed, generation, individual_index, mapping_index, purpose_tag)

The keys are fed to ``numpy.random.SeedSequence``, whose mixing is fixed and
platform independent, and the stream itself is PCG64.  Because substreams
are keyed rather than sequential, results are byte-identical regardless of
evaluation order or worker count.
"""

import numpy as np

# purpose tags (last key of a substream tuple)
TAG_FOUNDER = 1   # initial random genomes
TAG_REPRO = 2     # tournament selection + mutation of one offspring slot
TAG_TRIAL = 3     # one fitness trial (world gen, placement, gate sampling)
TAG_LOD = 4       # picking the line-of-descent anchor in the final generation
TAG_ABLATE = 5    # re-evaluation repeats for ablation / MI reports
TAG_TESTBED = 6   # single-gate learning testbed


def substream(seed, *keys):
    """Return a ``numpy.random.Generator`` keyed by (seed, *keys)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed),) + tuple(int(k) for k in keys))))


def trial_streams(seed, generation, index, n_mappings=24):
    """One generator per mapping trial of one individual."""
    return [substream(seed, generation, index, m, TAG_TRIAL) for m in range(n_mappings)]


def randint(rng, n):
    """Integer in [0, n) from a single uniform draw.

    Uses floor(u * n) instead of ``Generator.integers`` so the jitted engine
    and the reference path consume the stream identically.
    """
    v = int(rng.random() * n)
    return n - 1 if v >= n else v
