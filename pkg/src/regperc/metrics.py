"""Component metrics: sizes, exact diameter and lazy-random-walk mixing time."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import sparse
from scipy.sparse.linalg import eigsh

from .errors import DisconnectedError, PreconditionError
from .percolation import PercolationOutcome

EPS = 0.25
EXACT_CAP = 5000
ITERATE_CAP = 128        # above this the exact value comes from the spectral route
ESTIMATE_STARTS = 32
TV_SLACK = 1e-12


@dataclass
class Subgraph:
    """A graph on ``0..k-1`` in CSR form; ``vertices`` maps back to the host graph."""

    indptr: np.ndarray
    indices: np.ndarray
    vertices: np.ndarray

    @property
    def size(self) -> int:
        return len(self.indptr) - 1

    @property
    def edge_count(self) -> int:
        return len(self.indices) // 2

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @classmethod
    def from_edges(cls, k: int, edges, vertices=None) -> "Subgraph":
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if np.any(e[:, 0] == e[:, 1]):
            raise PreconditionError("loops are not allowed")
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        order = np.lexsort((dst, src))
        indptr = np.zeros(k + 1, np.int64)
        np.cumsum(np.bincount(src, minlength=k), out=indptr[1:])
        verts = np.arange(k, dtype=np.int64) if vertices is None else np.asarray(vertices, np.int64)
        return cls(indptr, dst[order], verts)

    def adjacency(self) -> sparse.csr_matrix:
        k = self.size
        data = np.ones(len(self.indices))
        return sparse.csr_matrix((data, self.indices, self.indptr), shape=(k, k))


def component_subgraph(outcome: PercolationOutcome, comp: int) -> Subgraph:
    """The retained edges inside one component, relabelled to ``0..size-1``."""
    members = outcome.members(comp)
    local = np.full(outcome.graph.n, -1, np.int64)
    local[members] = np.arange(len(members))
    e = outcome.retained_edges
    inside = outcome.component_id[e[:, 0]] == comp if len(e) else np.zeros(0, bool)
    return Subgraph.from_edges(len(members), local[e[inside]], members)


# --------------------------------------------------------------------------
# diameter


@njit(cache=True)
def _bfs_all(indptr, indices):
    # Returns the largest eccentricity, or -1 if some vertex is unreachable.
    k = len(indptr) - 1
    dist = np.empty(k, np.int64)
    queue = np.empty(k, np.int64)
    best = 0
    for s in range(k):
        dist[:] = -1
        dist[s] = 0
        queue[0] = s
        head = 0
        tail = 1
        while head < tail:
            x = queue[head]
            head += 1
            for j in range(indptr[x], indptr[x + 1]):
                y = indices[j]
                if dist[y] < 0:
                    dist[y] = dist[x] + 1
                    queue[tail] = y
                    tail += 1
        if tail < k:
            return -1
        if dist[queue[tail - 1]] > best:
            best = dist[queue[tail - 1]]
    return best


@njit(cache=True)
def _reach_count(indptr, indices):
    k = len(indptr) - 1
    seen = np.zeros(k, np.bool_)
    queue = np.empty(k, np.int64)
    seen[0] = True
    queue[0] = 0
    head = 0
    tail = 1
    while head < tail:
        x = queue[head]
        head += 1
        for j in range(indptr[x], indptr[x + 1]):
            y = indices[j]
            if not seen[y]:
                seen[y] = True
                queue[tail] = y
                tail += 1
    return tail


def is_connected(sg: Subgraph) -> bool:
    return sg.size <= 1 or _reach_count(sg.indptr, sg.indices) == sg.size


def diameter(sg: Subgraph) -> int:
    """Exact diameter by BFS from every vertex."""
    if sg.size == 0:
        raise PreconditionError("empty graph has no diameter")
    r = _bfs_all(sg.indptr, sg.indices)
    if r < 0:
        raise DisconnectedError("diameter of a disconnected graph")
    return int(r)


# --------------------------------------------------------------------------
# mixing time


def lazy_transition_matrix(sg: Subgraph) -> np.ndarray:
    """Dense lazy walk matrix: 1/2 on the diagonal, 1/(2 deg) to each neighbour."""
    a = sg.adjacency().toarray()
    deg = a.sum(axis=1)
    return 0.5 * np.eye(sg.size) + 0.5 * a / deg[:, None]


def stationary(sg: Subgraph) -> np.ndarray:
    deg = sg.degrees().astype(float)
    return deg / deg.sum()


def _tv_rows(rows: np.ndarray, pi: np.ndarray) -> np.ndarray:
    return 0.5 * np.abs(rows - pi).sum(axis=1)


def _mixing_iterate(sg: Subgraph, eps: float, max_steps: int):
    # all starts at once, one lazy step at a time
    P = lazy_transition_matrix(sg)
    pi = stationary(sg)
    R = np.eye(sg.size)
    prev = np.inf
    for t in range(max_steps + 1):
        dist = _tv_rows(R, pi).max()
        if dist > prev + TV_SLACK:
            raise AssertionError(f"TV distance increased at t={t}: {prev} -> {dist}")
        if dist <= eps + TV_SLACK:
            return t
        prev = dist
        R = R @ P
    return None


class _Spectral:
    """P^t(x, .) - pi from the eigendecomposition of the symmetrised lazy walk."""

    def __init__(self, sg: Subgraph):
        a = sg.adjacency().toarray()
        deg = a.sum(axis=1)
        s = 1.0 / np.sqrt(deg)
        sym = 0.5 * np.eye(sg.size) + 0.5 * (s[:, None] * a * s[None, :])
        lam, phi = np.linalg.eigh(sym)
        # drop the top eigenpair (sqrt(pi), eigenvalue 1)
        self.lam = np.clip(lam[:-1], 0.0, 1.0)
        self.phi = phi[:, :-1]
        self.pi = deg / deg.sum()
        self.sqrt_pi = np.sqrt(self.pi)
        # check rows most exposed to the slowest mode first
        self.order = np.argsort(-np.abs(self.phi[:, -1] / self.sqrt_pi)) if len(self.lam) else None

    @property
    def lambda2(self) -> float:
        return float(self.lam[-1]) if len(self.lam) else 0.0

    def tv_max_le(self, t: int, eps: float, block: int = 256, rows=None) -> bool:
        """Whether max over starts of TV(P^t(x,.), pi) <= eps (early exit on failure)."""
        w = self.phi * self.lam ** t
        order = self.order if rows is None else rows
        for i in range(0, len(order), block):
            r = order[i:i + block]
            diff = (w[r] @ self.phi.T) * (self.sqrt_pi[None, :] / self.sqrt_pi[r, None])
            if 0.5 * np.abs(diff).sum(axis=1).max() > eps + TV_SLACK:
                return False
        return True

    def tv_max(self, t: int) -> float:
        w = self.phi * self.lam ** t
        diff = (w @ self.phi.T) * (self.sqrt_pi[None, :] / self.sqrt_pi[:, None])
        return float(0.5 * np.abs(diff).sum(axis=1).max())


def _first_mixed(pred, lo: int, hi: int) -> int:
    # smallest t in (lo, hi] with pred(t), given pred(hi) and not pred(lo)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _mixing_spectral(sg: Subgraph, eps: float, probe_rows: int = 32) -> int:
    # Each start's TV distance is non-increasing in t, so the maximum over any
    # subset of starts is too.  Search on a few worst-looking starts first (a
    # lower bound), then confirm with all starts.
    sp = _Spectral(sg)
    if sp.tv_max_le(0, eps):
        return 0
    probe = sp.order[:probe_rows]
    t_rel = 1.0 / (1.0 - sp.lambda2)
    hi = max(1, int(np.ceil(t_rel * np.log(1.0 / (eps * sp.pi.min())))) + 1)
    while not sp.tv_max_le(hi, eps, rows=probe):
        hi *= 2
    lo = max(0, int(np.floor((t_rel - 1.0) * np.log(1.0 / (2.0 * eps)))) - 1)
    if lo >= hi or sp.tv_max_le(lo, eps, rows=probe):
        lo = 0
    t = _first_mixed(lambda x: sp.tv_max_le(x, eps, rows=probe), lo, hi)
    if sp.tv_max_le(t, eps):
        return t
    lo, hi = t, 2 * t
    while not sp.tv_max_le(hi, eps):
        lo, hi = hi, 2 * hi
    return _first_mixed(lambda x: sp.tv_max_le(x, eps), lo, hi)


def _mixing_estimate(sg: Subgraph, eps: float, starts: int, max_steps: int):
    # lower bound from a fixed set of starts, sparse iteration
    k = sg.size
    rng = np.random.default_rng(0x5EED)
    xs = np.sort(rng.choice(k, size=min(starts, k), replace=False))
    deg = sg.degrees().astype(float)
    walk = (sg.adjacency().multiply(1.0 / deg[:, None])).T.tocsr()   # columns are distributions
    pi = deg / deg.sum()
    R = np.zeros((k, len(xs)))
    R[xs, np.arange(len(xs))] = 1.0
    for t in range(max_steps + 1):
        if (0.5 * np.abs(R - pi[:, None]).sum(axis=0)).max() <= eps + TV_SLACK:
            return t
        R = 0.5 * R + 0.5 * (walk @ R)
    return None


def mixing_time(sg: Subgraph, eps: float = EPS, exact_cap: int = EXACT_CAP, *,
                estimate: bool = True, max_steps: int = 10**6):
    """Worst-start mixing time of the lazy walk, as ``(t, is_exact)``.

    Exact for components up to ``exact_cap`` vertices.  Larger components get
    a lower-bound estimate from 32 fixed starts when ``estimate`` is set, else
    ``(None, False)``.  ``t`` is None if the estimate exceeds ``max_steps``.
    """
    if not 0 < eps < 1:
        raise PreconditionError("eps must lie in (0, 1)")
    k = sg.size
    if k == 0:
        raise PreconditionError("empty graph")
    if k == 1:
        return 0, True
    if not is_connected(sg):
        raise DisconnectedError("mixing time of a disconnected graph")
    if k <= ITERATE_CAP:
        t = _mixing_iterate(sg, eps, max_steps)
        if t is None:
            t = _mixing_spectral(sg, eps)
        return t, True
    if k <= exact_cap:
        return _mixing_spectral(sg, eps), True
    if not estimate:
        return None, False
    return _mixing_estimate(sg, eps, ESTIMATE_STARTS, max_steps), False



@njit(cache=True)
def _farthest(indptr, indices, s):
    k = len(indptr) - 1
    dist = np.full(k, -1, np.int64)
    queue = np.empty(k, np.int64)
    dist[s] = 0
    queue[0] = s
    head = 0
    tail = 1
    while head < tail:
        x = queue[head]
        head += 1
        for j in range(indptr[x], indptr[x + 1]):
            y = indices[j]
            if dist[y] < 0:
                dist[y] = dist[x] + 1
                queue[tail] = y
                tail += 1
    return queue[tail - 1]


def peripheral_vertex(sg: Subgraph) -> int:
    """Endpoint of a double BFS sweep (a vertex of large eccentricity)."""
    if sg.size == 0:
        raise PreconditionError("empty graph")
    return int(_farthest(sg.indptr, sg.indices, _farthest(sg.indptr, sg.indices, 0)))


@njit(cache=True)
def _walk_tv(indptr, indices, start, steps, eps):
    # TV distance of the lazy walk from ``start`` after ``steps`` steps; stops
    # early once it is <= eps (TV is non-increasing in t)
    k = len(indptr) - 1
    deg = np.empty(k)
    for v in range(k):
        deg[v] = indptr[v + 1] - indptr[v]
    pi = deg / deg.sum()
    x = np.zeros(k)
    y = np.empty(k)
    x[start] = 1.0
    tv = 1.0
    for t in range(steps + 1):
        if t % 256 == 0 or t == steps:
            tv = 0.5 * np.abs(x - pi).sum()
            if tv <= eps:
                return tv
        if t == steps:
            break
        for v in range(k):
            acc = 0.0
            for j in range(indptr[v], indptr[v + 1]):
                u = indices[j]
                acc += x[u] / deg[u]
            y[v] = 0.5 * x[v] + 0.5 * acc
        x, y = y, x
    return tv


def slow_starts(sg: Subgraph) -> list:
    """Candidate worst starts: both extremes of the slowest mode, and a peripheral vertex.

    The slowest mode comes from a sparse shift-invert eigensolve of the
    normalised Laplacian, so this stays cheap on large sparse components.
    """
    starts = [peripheral_vertex(sg)]
    k = sg.size
    if k > 2:
        a = sg.adjacency()
        s = 1.0 / np.sqrt(sg.degrees().astype(float))
        lap = sparse.identity(k, format="csc") - sparse.diags(s) @ a @ sparse.diags(s)
        _, vec = eigsh(lap.tocsc(), k=2, sigma=-1e-3, which="LM")
        f = vec[:, 1] * s        # phi_2 / sqrt(pi), up to scale
        starts += [int(np.argmax(f)), int(np.argmin(f))]
    return list(dict.fromkeys(starts))


def mixing_exceeds(sg: Subgraph, t: int, eps: float = EPS, starts=None) -> bool:
    """Certificate that t_mix(eps) > t: the walk from some start is still farther than eps.

    ``False`` means only that the tried starts have mixed by time t.  The
    default starts come from :func:`slow_starts`.  Cost is O(t * edges) per
    start with O(size) memory.
    """
    if not 0 < eps < 1:
        raise PreconditionError("eps must lie in (0, 1)")
    if t < 0:
        raise PreconditionError("t must be >= 0")
    if sg.size <= 1:
        return False
    if not is_connected(sg):
        raise DisconnectedError("mixing time of a disconnected graph")
    if starts is None:
        starts = slow_starts(sg)
    elif np.isscalar(starts):
        starts = [starts]
    return any(_walk_tv(sg.indptr, sg.indices, int(x), int(t), eps + TV_SLACK) > eps + TV_SLACK
               for x in starts)

# --------------------------------------------------------------------------
# summaries


@dataclass
class ComponentSummary:
    size: int
    edge_count: int
    diameter: int | None = None
    t_mix: int | None = None
    is_exact_mixing: bool | None = None
    component: int | None = None

    def as_row(self) -> dict:
        return {"component": self.component, "size": self.size, "edge_count": self.edge_count,
                "diameter": self.diameter, "t_mix": self.t_mix,
                "is_exact": self.is_exact_mixing}


def _edge_counts(outcome: PercolationOutcome) -> np.ndarray:
    e = outcome.retained_edges
    if len(e) == 0:
        return np.zeros(outcome.n_components, np.int64)
    return np.bincount(outcome.component_id[e[:, 0]], minlength=outcome.n_components)


def largest_components(outcome: PercolationOutcome, k: int = 1) -> list:
    """Sizes (and edge counts) of the k largest components, descending."""
    if k < 1:
        raise PreconditionError("k must be >= 1")
    ec = _edge_counts(outcome)
    return [ComponentSummary(int(outcome.sizes_by_id[c]), int(ec[c]), component=int(c))
            for c in outcome.largest(k)]


def summarize_component(outcome: PercolationOutcome, comp: int, *, with_diameter: bool = True,
                        with_mixing: bool = True, eps: float = EPS,
                        exact_cap: int = EXACT_CAP, estimate: bool = False) -> ComponentSummary:
    sg = component_subgraph(outcome, comp)
    out = ComponentSummary(sg.size, sg.edge_count, component=int(comp))
    if with_diameter:
        out.diameter = diameter(sg)
    if with_mixing:
        out.t_mix, out.is_exact_mixing = mixing_time(sg, eps, exact_cap, estimate=estimate)
    return out
