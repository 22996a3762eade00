"""Deterministic xoshiro256** generator seeded through splitmix64."""
import math

import numpy as np

from . import kernels

_MASK = (1 << 64) - 1


def splitmix64(x):
    """Return ``(next_state, output)`` for one splitmix64 step."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


class Rng:
    """xoshiro256** stream. Identical seeds give identical streams everywhere.

    Bulk draws go through the compiled kernel when available.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        sm = self.seed
        words = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            words.append(out)
        self.state = np.array(words, dtype=np.uint64)

    def spawn(self, *keys: int) -> "Rng":
        """Child stream derived from this generator's seed and integer keys.

        Depends only on ``(seed, keys)``, never on how much of the parent
        stream has been consumed.
        """
        h = self.seed
        for k in keys:
            h, _ = splitmix64(h ^ (int(k) & _MASK))
            _, h = splitmix64(h)
        return Rng(h)

    def next_u64(self) -> int:
        out = np.empty(1, dtype=np.uint64)
        kernels.xoshiro_fill_u64(self.state, out)
        return int(out[0])

    def u64s(self, n: int) -> np.ndarray:
        out = np.empty(int(n), dtype=np.uint64)
        kernels.xoshiro_fill_u64(self.state, out)
        return out

    def uniform(self, low=0.0, high=1.0, size=None):
        """Uniform draws in ``[low, high)`` (scalar when ``size`` is None)."""
        n = 1 if size is None else int(np.prod(size))
        out = np.empty(n, dtype=np.float64)
        kernels.xoshiro_fill_uniform(self.state, out)
        out = low + (high - low) * out
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def normal(self, mean=0.0, std=1.0, size=1):
        """Gaussian draws via Box-Muller."""
        n = int(np.prod(size))
        m = (n + 1) // 2
        u = self.uniform(size=2 * m)
        u1 = 1.0 - u[:m]  # (0, 1]
        u2 = u[m:]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * math.pi * u2), r * np.sin(2 * math.pi * u2)])[:n]
        return (mean + std * z).reshape(size)

    def integers(self, high: int, size=None):
        """Integers in ``[0, high)``."""
        u = self.uniform(size=size)
        return np.minimum(np.floor(np.asarray(u) * high), high - 1).astype(np.int64) if size is not None \
            else min(int(u * high), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.uniform(size=n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[k] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def choice(self, p: np.ndarray, size: int) -> np.ndarray:
        """Sample indices with replacement from probability vector ``p``."""
        cdf = np.cumsum(np.asarray(p, dtype=np.float64))
        cdf /= cdf[-1]
        idx = np.searchsorted(cdf, self.uniform(size=size), side="right")
        return np.minimum(idx, len(cdf) - 1)
