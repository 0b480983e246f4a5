"""Counter-based random streams.

Every draw is a pure function of ``(seed, stream, trajectory, step)``: a
splitmix64 finalizer chain hashes the key to 64 bits. Sampling N trajectories
in any chunking or thread layout therefore yields bit-identical letters.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

# stream ids; one per independent source of randomness
LETTERS = 1
LETTERS_AUX = 2
PAIRS = 3
GRID = 4
SUBSAMPLE = 5


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash64(seed, stream, traj, step):
    """64-bit hash of the counter key; ``traj`` and ``step`` broadcast."""
    with np.errstate(over="ignore"):
        k = _mix(np.asarray([seed], dtype=np.uint64) + _GOLDEN)
        k = _mix(k ^ (np.uint64(stream) * _GOLDEN + np.uint64(0x2545F4914F6CDD1D)))
        t = np.asarray(traj, dtype=np.uint64)
        s = np.asarray(step, dtype=np.uint64)
        h = _mix(k ^ (t * _GOLDEN))
        h = _mix(h ^ (s * _M2 + np.uint64(1)))
    return h


def uniform(seed, stream, traj, step):
    """Uniform doubles in [0, 1) keyed by the counter."""
    h = hash64(seed, stream, traj, step)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def categorical(cdf, seed, stream, traj, step):
    """Indices drawn from a cumulative distribution, one per broadcast key."""
    u = uniform(seed, stream, traj, step)
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, len(cdf) - 1)


def generator(seed, *purpose):
    """A numpy Generator for non-walk randomness (grids, test instances)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, purpose)]))
