"""Portable seeded random streams.

Every random draw in maskfuse (weight init, mini-batch shuffling, fold
assignment, synthetic data) goes through ``Stream`` so results can be
reproduced bit-for-bit by any implementation that follows the recipe below.

Generator: SplitMix64 in counter form. Output ``k`` (k = 0, 1, 2, ...) of a
stream with key ``K`` is ``mix64(K + (k + 1) * 0x9E3779B97F4A7C15)`` with all
arithmetic mod 2**64, where::

    mix64(z):
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        return z ^ (z >> 31)

The stream key is ``mix64(seed) ^ mix64(stream_id + 0x5851F42D4C957F2D)``.
Uniform doubles in [0, 1) are ``(x >> 11) * 2**-53``.
"""

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_STREAM_SALT = 0x5851F42D4C957F2D
_MASK = (1 << 64) - 1
_INV_2_53 = 1.0 / 9007199254740992.0

# stream ids, one per consumer
INIT = 1
SHUFFLE = 2
FOLDS = 3
SYNTH = 4


def mix64(z):
    """SplitMix64 finalizer on a Python int."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def _mix64_array(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


class Stream:
    """Counter-based SplitMix64 stream."""

    def __init__(self, seed, stream_id=0):
        self.key = mix64(int(seed)) ^ mix64(int(stream_id) + _STREAM_SALT)
        self.counter = 0

    def next_u64(self, n):
        ks = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        z = np.uint64(self.key) + ks * np.uint64(GOLDEN)
        return _mix64_array(z)

    def uniform(self, n):
        """``n`` doubles in [0, 1)."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def uniform_open(self, n):
        """``n`` doubles in (0, 1], safe for ``log``."""
        return ((self.next_u64(n) >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53

    def normal(self, n):
        """Standard normals by Box-Muller; both outputs of each pair are used.

        Pair ``j`` consumes ``u1 = uniform_open``, ``u2 = uniform`` (in that
        order) and yields ``r cos(2 pi u2)``, ``r sin(2 pi u2)`` with
        ``r = sqrt(-2 ln u1)``.
        """
        pairs = (n + 1) // 2
        u = self.next_u64(2 * pairs) >> np.uint64(11)
        u1 = (u[0::2].astype(np.float64) + 1.0) * _INV_2_53
        u2 = u[1::2].astype(np.float64) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``.

        For ``i = n-1 .. 1`` draw ``u`` and swap positions ``i`` and
        ``floor(u * (i + 1))``.
        """
        perm = list(range(n))
        if n < 2:
            return np.array(perm, dtype=np.int64)
        u = self.uniform(n - 1)
        for step, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[step] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return np.array(perm, dtype=np.int64)
