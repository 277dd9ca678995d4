"""SplitMix64 stream, vectorized.

Each draw advances the state by the golden-gamma constant and applies the
standard SplitMix64 finalizer, so ``stream.u64(n)`` returns exactly the next
``n`` outputs of the scalar generator. Derived variates:

* ``uniform``: top 53 bits scaled to [0, 1)
* ``normal``: Box-Muller on consecutive uniform pairs, cosine branch only
* ``permutation``: stable argsort of fresh u64 keys
"""
import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    def __init__(self, seed=0):
        self.state = int(seed) & _MASK

    def u64(self, n):
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * GAMMA
            out = _mix(z)
        self.state = (self.state + n * int(GAMMA)) & _MASK
        return out

    def uniform(self, n, low=0.0, high=1.0):
        u = (self.u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return low + (high - low) * u

    def normal(self, n, sd=1.0):
        u = self.uniform(2 * n).reshape(n, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        return sd * r * np.cos(2.0 * np.pi * u[:, 1])

    def permutation(self, n):
        return np.argsort(self.u64(n), kind="stable")

    def integers(self, n, high):
        """``n`` integers in ``[0, high)`` (modulo reduction; bias is below 2**-40 for small ``high``)."""
        return (self.u64(n) % np.uint64(high)).astype(np.int64)

    def spawn(self, tag):
        """Independent child stream keyed by ``tag``."""
        with np.errstate(over="ignore"):
            key = _mix(np.uint64(self.state) ^ _mix(np.uint64(tag & _MASK) + GAMMA))
        return SplitMix64(int(key))
