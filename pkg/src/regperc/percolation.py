"""Bond percolation with edge-keyed indicators and union-find components.

Whether edge {u, v} survives is a pure function of a 64-bit stream key and
the canonical pair ``u < v``.  The exploration reveals indicators one edge at
a time through the same function, so lazy exposure and eager percolation see
identical coin flips.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import PreconditionError
from .graph import RegularGraph

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _edge_bits(key, u, v, n):
    # 53 uniform bits attached to the unordered pair {u, v}
    if u > v:
        u, v = v, u
    z = key + np.uint64(u * n + v + 1) * _GOLDEN
    return _mix64(z) >> np.uint64(11)


def retention_threshold(p: float) -> np.uint64:
    """Integer cut so that ``bits < threshold`` iff ``bits / 2**53 < p``."""
    return np.uint64(math.ceil(p * 2.0**53))


def edge_uniform(key: int, u: int, v: int, n: int) -> float:
    """The uniform in [0, 1) that decides edge {u, v} under ``key``."""
    return float(_edge_bits(np.uint64(key), u, v, n)) * _INV53


@njit(cache=True)
def edge_retained(key, u, v, n, thr):
    return _edge_bits(key, u, v, n) < thr


@njit(cache=True)
def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@njit(cache=True)
def _union(parent, size, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra == rb:
        return
    if size[ra] < size[rb]:
        ra, rb = rb, ra
    parent[rb] = ra
    size[ra] += size[rb]


@njit(cache=True)
def _percolate_edges(edges, n, key, thr, parent, size):
    m = edges.shape[0]
    mask = np.zeros(m, np.bool_)
    for i in range(m):
        u = edges[i, 0]
        v = edges[i, 1]
        if _edge_bits(key, u, v, n) < thr:
            mask[i] = True
            _union(parent, size, u, v)
    return mask


@njit(cache=True)
def _percolate_complete(n, key, thr, parent, size, out):
    # Returns the number of retained edges; only the first len(out) are stored.
    cap = out.shape[0]
    k = 0
    for u in range(n):
        # z runs over key + (u*n + v + 1) * golden for v = u+1 .. n-1
        z = key + np.uint64(u * n + u + 2) * _GOLDEN
        for v in range(u + 1, n):
            bits = _mix64(z) >> np.uint64(11)
            z += _GOLDEN
            if bits < thr:
                if k < cap:
                    out[k, 0] = u
                    out[k, 1] = v
                k += 1
                _union(parent, size, u, v)
    return k


@njit(cache=True)
def _roots(parent):
    n = parent.shape[0]
    r = np.empty(n, np.int64)
    for x in range(n):
        r[x] = _find(parent, x)
    return r


def components_from_roots(roots: np.ndarray):
    """Relabel union-find roots so component ids follow their smallest vertex."""
    uniq, first, inverse, counts = np.unique(roots, return_index=True,
                                             return_inverse=True, return_counts=True)
    order = np.argsort(first, kind="stable")
    relabel = np.empty(len(uniq), np.int64)
    relabel[order] = np.arange(len(uniq))
    return relabel[inverse], counts[order]


def draw_key(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**64, dtype=np.uint64))


@dataclass
class PercolationOutcome:
    graph: RegularGraph
    p: float
    key: int
    retained_edges: np.ndarray
    component_id: np.ndarray
    sizes_by_id: np.ndarray
    retained: np.ndarray | None = None  # aligned with graph.edges; None for K_n

    @property
    def component_sizes(self) -> np.ndarray:
        return np.sort(self.sizes_by_id)[::-1]

    @property
    def n_components(self) -> int:
        return len(self.sizes_by_id)

    @property
    def n_retained(self) -> int:
        return len(self.retained_edges)

    def largest(self, k: int = 1) -> list:
        """Component ids of the k largest components (ties: smaller id first)."""
        order = np.lexsort((np.arange(len(self.sizes_by_id)), -self.sizes_by_id))
        return order[:k].tolist()

    @property
    def L1(self) -> int:
        return int(self.sizes_by_id.max()) if len(self.sizes_by_id) else 0

    @property
    def L2(self) -> int:
        s = self.component_sizes
        return int(s[1]) if len(s) > 1 else 0

    def members(self, comp: int) -> np.ndarray:
        return np.flatnonzero(self.component_id == comp)

    def size_histogram(self) -> dict:
        sizes, counts = np.unique(self.sizes_by_id, return_counts=True)
        return {int(s): int(c) for s, c in zip(sizes, counts)}


def percolate(g: RegularGraph, p: float, rng: np.random.Generator | None = None,
              *, key: int | None = None) -> PercolationOutcome:
    """Keep each edge independently with probability ``p``; components by union-find."""
    if not 0.0 <= p <= 1.0:
        raise PreconditionError(f"p must lie in [0, 1] (got {p})")
    if key is None:
        if rng is None:
            raise PreconditionError("percolate needs an rng or an explicit key")
        key = draw_key(rng)
    n = g.n
    parent = np.arange(n, dtype=np.int64)
    size = np.ones(n, dtype=np.int64)
    kk = np.uint64(key)
    thr = retention_threshold(p)
    if g.is_complete:
        cap = int(2 * p * n * (n - 1) / 2) + 64
        while True:
            out = np.empty((cap, 2), np.int64)
            k = _percolate_complete(n, kk, thr, parent, size, out)
            if k <= cap:
                break
            parent[:] = np.arange(n)
            size[:] = 1
            cap = k
        kept = out[:k]
        mask = None
    else:
        edges = g.edges
        mask = _percolate_edges(edges, n, kk, thr, parent, size)
        kept = edges[mask]
    comp, sizes = components_from_roots(_roots(parent))
    return PercolationOutcome(g, float(p), int(key), kept, comp, sizes, mask)


def critical_p(d: int, lam: float, n: int) -> float:
    """``(1 + lam * n^(-1/3)) / (d - 1)``, clamped above at 1."""
    if d < 2:
        raise PreconditionError(f"critical_p needs d >= 2 (got {d})")
    p = (1.0 + lam * n ** (-1.0 / 3.0)) / (d - 1)
    if p < 0:
        raise PreconditionError(f"p = {p} < 0 for lambda={lam}, n={n}, d={d}")
    return min(p, 1.0)
