"""Regular graphs, pairing-model multigraphs and the 4-cycle switching."""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParityError, PreconditionError, SwitchingError


def _check_params(n: int, d: int) -> None:
    if n < 1:
        raise PreconditionError(f"n must be >= 1 (got {n})")
    if not 0 <= d <= n - 1:
        raise PreconditionError(f"need 0 <= d <= n-1 (got n={n}, d={d})")
    if (n * d) % 2:
        raise ParityError(n, d)


class RegularGraph:
    """Simple labelled d-regular graph on vertices ``0..n-1``.

    ``adj`` is an ``(n, d)`` integer array whose row ``u`` lists the
    neighbours of ``u`` in increasing order.  The position of a neighbour in
    that row is its rank, which the exploration uses as the semi-edge label.
    """

    is_complete = False

    def __init__(self, n: int, d: int, adj, *, check: bool = True):
        _check_params(n, d)
        self.n = int(n)
        self.d = int(d)
        adj = np.asarray(adj, dtype=np.int64).reshape(self.n, self.d)
        self._adj = adj
        self._edges = None
        if check:
            self.validate()

    # construction ---------------------------------------------------------

    @classmethod
    def from_edges(cls, n: int, edges, d: int | None = None) -> "RegularGraph":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        deg = np.bincount(edges.ravel(), minlength=n) if len(edges) else np.zeros(n, np.int64)
        if d is None:
            d = int(deg[0]) if n else 0
        if np.any(deg != d):
            raise PreconditionError("edge list is not d-regular")
        _check_params(n, d)
        both = np.concatenate([edges, edges[:, ::-1]])
        order = np.lexsort((both[:, 1], both[:, 0]))
        adj = both[order, 1].reshape(n, d)
        return cls(n, d, adj)

    @classmethod
    def circulant(cls, n: int, d: int) -> "RegularGraph":
        """Deterministic d-regular circulant graph (offsets 1..d//2, plus n/2 if d is odd)."""
        _check_params(n, d)
        if d == n - 1:
            return complete_graph(n)
        offsets = list(range(1, d // 2 + 1))
        if d % 2:
            offsets.append(n // 2)
        base = np.arange(n)
        cols = []
        for off in offsets:
            cols.append((base + off) % n)
            if not (d % 2 and off == n // 2):
                cols.append((base - off) % n)
        adj = np.sort(np.stack(cols, axis=1), axis=1) if cols else np.zeros((n, 0), np.int64)
        return cls(n, d, adj)

    # accessors ------------------------------------------------------------

    @property
    def adj(self) -> np.ndarray:
        return self._adj

    @property
    def m(self) -> int:
        return self.n * self.d // 2

    @property
    def edges(self) -> np.ndarray:
        """Canonical ``(m, 2)`` edge array, ``u < v``, lexicographic."""
        if self._edges is None:
            u = np.repeat(np.arange(self.n, dtype=np.int64), self.d)
            v = self._adj.ravel()
            keep = u < v
            self._edges = np.stack([u[keep], v[keep]], axis=1)
        return self._edges

    def neighbors(self, u: int) -> np.ndarray:
        return self._adj[u]

    def has_edge(self, u: int, v: int) -> bool:
        if u == v:
            return False
        row = self._adj[u]
        i = np.searchsorted(row, v)
        return bool(i < self.d and row[i] == v)

    def degrees(self) -> np.ndarray:
        return np.full(self.n, self.d, dtype=np.int64)

    def edge_set(self) -> frozenset:
        return frozenset(map(tuple, self.edges.tolist()))

    def copy(self) -> "RegularGraph":
        return RegularGraph(self.n, self.d, self._adj.copy(), check=False)

    def validate(self) -> None:
        """Raise ``PreconditionError`` unless all invariants hold."""
        n, d, adj = self.n, self.d, self._adj
        if adj.shape != (n, d):
            raise PreconditionError(f"adjacency shape {adj.shape} != {(n, d)}")
        if d == 0:
            return
        if adj.min() < 0 or adj.max() >= n:
            raise PreconditionError("neighbour id out of range")
        if d > 1 and np.any(np.diff(adj, axis=1) <= 0):
            raise PreconditionError("neighbour lists must be strictly increasing (no repeats)")
        if np.any(adj == np.arange(n)[:, None]):
            raise PreconditionError("self-loop present")
        u = np.repeat(np.arange(n, dtype=np.int64), d)
        v = adj.ravel()
        fwd = np.sort(u * n + v)
        bwd = np.sort(v * n + u)
        if not np.array_equal(fwd, bwd):
            raise PreconditionError("adjacency is not symmetric")

    def __eq__(self, other):
        if not isinstance(other, RegularGraph):
            return NotImplemented
        return self.n == other.n and self.d == other.d and np.array_equal(self.adj, other.adj)

    def __hash__(self):
        return hash((self.n, self.d, self.edges.tobytes()))

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, d={self.d})"


class CompleteGraph(RegularGraph):
    """K_n without materialising its n(n-1)/2 edges unless asked to."""

    is_complete = True

    def __init__(self, n: int):
        _check_params(n, n - 1)
        self.n = int(n)
        self.d = self.n - 1
        self._adj = None
        self._edges = None

    @property
    def adj(self) -> np.ndarray:
        if self._adj is None:
            full = np.tile(np.arange(self.n, dtype=np.int64), (self.n, 1))
            mask = ~np.eye(self.n, dtype=bool)
            self._adj = full[mask].reshape(self.n, self.n - 1)
        return self._adj

    @property
    def edges(self) -> np.ndarray:
        if self._edges is None:
            iu = np.triu_indices(self.n, k=1)
            self._edges = np.stack(iu, axis=1).astype(np.int64)
        return self._edges

    def neighbors(self, u: int) -> np.ndarray:
        return np.delete(np.arange(self.n, dtype=np.int64), u)

    def has_edge(self, u: int, v: int) -> bool:
        return u != v

    def validate(self) -> None:
        return None

    def copy(self) -> "CompleteGraph":
        return CompleteGraph(self.n)

    def __eq__(self, other):
        if isinstance(other, CompleteGraph):
            return self.n == other.n
        return RegularGraph.__eq__(self, other)

    def __hash__(self):
        return hash(("K", self.n))


def complete_graph(n: int) -> CompleteGraph:
    return CompleteGraph(n)


@dataclass
class Multigraph:
    """Pairing-model output: loops and parallel edges allowed.

    A loop contributes two to the degree of its vertex.
    """

    n: int
    d: int
    edges: np.ndarray

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def loop_count(self) -> int:
        return int(np.count_nonzero(self.edges[:, 0] == self.edges[:, 1]))

    def is_simple(self) -> bool:
        e = self.edges
        if len(e) == 0:
            return True
        if np.any(e[:, 0] == e[:, 1]):
            return False
        keys = np.sort(np.minimum(e[:, 0], e[:, 1]) * self.n + np.maximum(e[:, 0], e[:, 1]))
        return not np.any(keys[1:] == keys[:-1])

    def to_regular_graph(self) -> RegularGraph:
        if not self.is_simple():
            raise PreconditionError("multigraph has loops or parallel edges")
        e = np.sort(self.edges, axis=1)
        return RegularGraph.from_edges(self.n, e, self.d)


@dataclass(frozen=True)
class SwitchingCycle:
    """Four distinct vertices; switching deletes x1x2, x3x4 and adds x1x4, x2x3."""

    x1: int
    x2: int
    x3: int
    x4: int

    def reverse(self) -> "SwitchingCycle":
        """The switching on the same 4-cycle that undoes this one."""
        return SwitchingCycle(self.x1, self.x4, self.x3, self.x2)

    def vertices(self) -> tuple:
        return (self.x1, self.x2, self.x3, self.x4)


def has_edge(g: RegularGraph, u: int, v: int) -> bool:
    return g.has_edge(u, v)


def check_switching(g: RegularGraph, c: SwitchingCycle) -> None:
    """Raise ``SwitchingError`` naming the first violated condition."""
    xs = c.vertices()
    if len(set(xs)) != 4:
        raise SwitchingError(f"vertices of {xs} are not distinct")
    for x in xs:
        if not 0 <= x < g.n:
            raise SwitchingError(f"vertex {x} out of range")
    if not g.has_edge(c.x1, c.x2):
        raise SwitchingError(f"x1x2 = {c.x1}{c.x2} is not an edge")
    if not g.has_edge(c.x3, c.x4):
        raise SwitchingError(f"x3x4 = {c.x3}{c.x4} is not an edge")
    if g.has_edge(c.x1, c.x4):
        raise SwitchingError(f"x1x4 = {c.x1}{c.x4} is already an edge")
    if g.has_edge(c.x2, c.x3):
        raise SwitchingError(f"x2x3 = {c.x2}{c.x3} is already an edge")


def apply_switching(g: RegularGraph, c: SwitchingCycle) -> RegularGraph:
    """Return a new graph with x1x2, x3x4 replaced by x1x4, x2x3."""
    check_switching(g, c)
    adj = np.array(g.adj, copy=True)
    for a, old, new in ((c.x1, c.x2, c.x4), (c.x2, c.x1, c.x3),
                        (c.x3, c.x4, c.x2), (c.x4, c.x3, c.x1)):
        row = adj[a]
        row[np.searchsorted(row, old)] = new
        row.sort()
    return RegularGraph(g.n, g.d, adj, check=False)


# edge-list serialisation ----------------------------------------------------

def format_edge_list(g: RegularGraph) -> str:
    buf = io.StringIO()
    write_edge_list(g, buf)
    return buf.getvalue()


def write_edge_list(g: RegularGraph, dest) -> None:
    """Write ``n d m`` then one ``u v`` line per edge (u < v, lexicographic)."""
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w") as fh:
            write_edge_list(g, fh)
        return
    dest.write(f"{g.n} {g.d} {g.m}\n")
    e = g.edges
    if len(e):
        np.savetxt(dest, e, fmt="%d")


def read_edge_list(src) -> RegularGraph:
    if isinstance(src, (str, os.PathLike)):
        text = Path(src).read_text()
    else:
        text = src.read()
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise PreconditionError("empty edge list")
    try:
        if lines[0].lstrip().startswith("{"):
            # the JSON object written by ``regperc sample --format jsonl``
            obj = json.loads(lines[0])
            n, d = int(obj["n"]), int(obj["d"])
            rows = obj["edges"]
            m = int(obj.get("m", len(rows)))
        else:
            n, d, m = (int(x) for x in lines[0].split())
            rows = [[int(x) for x in ln.split()] for ln in lines[1:]]
        edges = np.array(rows, dtype=np.int64).reshape(-1, 2)
    except (ValueError, KeyError, TypeError) as exc:
        raise PreconditionError(f"malformed edge list: {exc}") from exc
    if len(edges) != m:
        raise PreconditionError(f"header says m={m} but {len(edges)} edges follow")
    if n > 1 and d == n - 1:
        g = complete_graph(n)
        if len(edges) and not np.array_equal(np.sort(edges, axis=1), g.edges):
            raise PreconditionError("edge list is not complete")
        return g
    return RegularGraph.from_edges(n, edges, d)
