"""SCBS content store with frequency-weighted Gibbs eviction."""
from __future__ import annotations

import numpy as np

from .exceptions import ContentTooLarge, EmptyCache

__all__ = ["CacheState"]


class CacheState:
    """Storage of one small cell.

    Parameters
    ----------
    capacity_bits : float
        Storage size ``f_b``.
    sizes : array-like
        Size in bits of every content in the catalog.
    removal_beta_numerator : float, default=10
        Eviction inverse temperature at instant ``t`` is this value over ``t``.
    """

    def __init__(self, capacity_bits, sizes, removal_beta_numerator=10.0):
        if not capacity_bits > 0:
            raise ValueError("capacity must be positive")
        self.capacity_bits = float(capacity_bits)
        self.sizes = np.asarray(sizes, dtype=float)
        self.removal_beta_numerator = float(removal_beta_numerator)
        self.request_counts = np.zeros(len(self.sizes), dtype=np.int64)
        self._cached = np.zeros(len(self.sizes), dtype=bool)
        self.used_bits = 0.0

    @classmethod
    def with_file_capacity(cls, n_files, sizes, removal_beta_numerator=10.0):
        """Capacity of ``n_files`` contents of the catalog's largest size."""
        return cls(n_files * float(np.max(sizes)), sizes, removal_beta_numerator)

    @property
    def cached(self) -> np.ndarray:
        """Cached content ids, ascending."""
        return np.flatnonzero(self._cached)

    @property
    def mask(self) -> np.ndarray:
        return self._cached

    def __len__(self):
        return int(self._cached.sum())

    def contains(self, c) -> bool:
        return bool(self._cached[c])

    __contains__ = contains

    def record_request(self, c):
        self.request_counts[c] += 1

    def removal_beta(self, t) -> float:
        return self.removal_beta_numerator / t

    def eviction_distribution(self, t):
        """Removal probabilities over the cached contents at instant ``t``.

        Returns
        -------
        ids : ndarray
            Cached content ids, ascending.
        probs : ndarray
            ``exp(-beta n_c)`` normalized over the cached set; rarely
            requested contents are the likeliest to go.
        """
        ids = self.cached
        if ids.size == 0:
            raise EmptyCache("no cached content to evict")
        z = -self.removal_beta(t) * self.request_counts[ids].astype(float)
        z = np.exp(z - z.max())
        return ids, z / z.sum()

    def _evict(self, c):
        self._cached[c] = False
        self.used_bits -= self.sizes[c]

    def insert_with_eviction(self, c, t, rng, *, uniform=False) -> list:
        """Cache content ``c``, evicting until it fits.

        Victims are drawn from :meth:`eviction_distribution`, or uniformly when
        ``uniform`` is set. Returns the evicted ids (empty when nothing left).
        """
        size = self.sizes[c]
        if size > self.capacity_bits:
            raise ContentTooLarge(f"content {c} ({size} bits) exceeds capacity {self.capacity_bits}")
        if self._cached[c]:
            return []
        evicted = []
        while self.used_bits + size > self.capacity_bits * (1 + 1e-12):
            if uniform:
                ids = self.cached
                victim = int(ids[min(int(rng.random() * ids.size), ids.size - 1)])
            else:
                ids, probs = self.eviction_distribution(t)
                cdf = np.cumsum(probs)
                victim = int(ids[min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), ids.size - 1)])
            self._evict(victim)
            evicted.append(victim)
        self._cached[c] = True
        self.used_bits += size
        return evicted

    def evict(self, c):
        if not self._cached[c]:
            raise KeyError(c)
        self._evict(c)
