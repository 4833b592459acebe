"""Random d-regular graphs: pairing model, rejection, switching chain, enumeration.

The heavy loops run under numba.  All randomness comes from a caller-owned
``numpy.random.Generator``; kernels only consume arrays of uniforms drawn from
it, so a seed fully determines every output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations

import numpy as np
from numba import njit

from .errors import (
    AttemptsExhaustedError,
    EnumerationCapError,
    ParityError,
    PreconditionError,
)
from .graph import Multigraph, RegularGraph, _check_params, complete_graph

#: rejection is used while exp(-(d^2-1)/4) stays above this
REJECTION_THRESHOLD = 1e-4
ENUMERATION_CAP = 8
PAIRING_ENUMERATION_CAP = 18  # points n*d
_CHUNK = 1 << 20


# --------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _pairing_kernel(n, d, u01, abort, edges, adj, cnt):
    # Sequential uniform matching: point at slot i is paired with a uniform
    # unmatched point swapped into slot i+1.  With ``abort`` the first loop or
    # repeated edge ends the attempt.
    N = n * d
    pts = np.arange(N)
    cnt[:] = 0
    for k in range(N // 2):
        i = 2 * k
        r = i + 1 + int(u01[k] * (N - i - 1))
        if r >= N:
            r = N - 1
        tmp = pts[i + 1]
        pts[i + 1] = pts[r]
        pts[r] = tmp
        a = pts[i] // d
        b = pts[i + 1] // d
        if abort:
            if a == b:
                return False
            for j in range(cnt[a]):
                if adj[a, j] == b:
                    return False
        edges[k, 0] = a
        edges[k, 1] = b
        adj[a, cnt[a]] = b
        cnt[a] += 1
        adj[b, cnt[b]] = a
        cnt[b] += 1
    return True


@njit(cache=True)
def _count_in_row(adj, a, b):
    c = 0
    for j in range(adj.shape[1]):
        if adj[a, j] == b:
            c += 1
    return c


@njit(cache=True)
def _replace_in_row(adj, a, old, new):
    for j in range(adj.shape[1]):
        if adj[a, j] == old:
            adj[a, j] = new
            return


@njit(cache=True)
def _switch_chain(adj, edges, u01):
    """Lazy double-edge-swap chain; every proposal is one step, rejections stay put."""
    m = edges.shape[0]
    accepted = 0
    for s in range(u01.shape[0]):
        i = int(u01[s, 0] * m)
        j = int(u01[s, 1] * (m - 1))
        if j >= i:
            j += 1
        o = int(u01[s, 2] * 4.0)
        x1 = edges[i, 0]
        x2 = edges[i, 1]
        if o & 1:
            x1, x2 = x2, x1
        x3 = edges[j, 0]
        x4 = edges[j, 1]
        if o & 2:
            x3, x4 = x4, x3
        if x1 == x3 or x1 == x4 or x2 == x3 or x2 == x4:
            continue
        if _count_in_row(adj, x1, x4) > 0 or _count_in_row(adj, x2, x3) > 0:
            continue
        _replace_in_row(adj, x1, x2, x4)
        _replace_in_row(adj, x2, x1, x3)
        _replace_in_row(adj, x3, x4, x2)
        _replace_in_row(adj, x4, x3, x1)
        edges[i, 0] = x1
        edges[i, 1] = x4
        edges[j, 0] = x2
        edges[j, 1] = x3
        accepted += 1
    return accepted


@njit(cache=True)
def _repair_scan(adj, edges, k0, u01):
    # Walk the edge list from ``k0``; every loop or parallel copy is switched
    # with a uniformly chosen simple edge so that no new defect appears.
    # Returns the edge index to resume from (m when done) once ``u01`` runs out.
    m = edges.shape[0]
    s = 0
    k = k0
    while k < m:
        a = edges[k, 0]
        b = edges[k, 1]
        if a != b and _count_in_row(adj, a, b) == 1:
            k += 1
            continue
        if s >= u01.shape[0]:
            return k
        j = int(u01[s, 0] * (m - 1))
        if j >= k:
            j += 1
        o = int(u01[s, 1] * 4.0)
        s += 1
        x1 = a
        x2 = b
        if o & 1:
            x1, x2 = x2, x1
        x3 = edges[j, 0]
        x4 = edges[j, 1]
        if o & 2:
            x3, x4 = x4, x3
        if x3 == x4 or _count_in_row(adj, x3, x4) != 1:
            continue
        if x1 == x4 or x2 == x3:
            continue
        if _count_in_row(adj, x1, x4) > 0 or _count_in_row(adj, x2, x3) > 0:
            continue
        if min(x1, x4) == min(x2, x3) and max(x1, x4) == max(x2, x3):
            continue
        _replace_in_row(adj, x1, x2, x4)
        _replace_in_row(adj, x2, x1, x3)
        _replace_in_row(adj, x3, x4, x2)
        _replace_in_row(adj, x4, x3, x1)
        edges[k, 0] = x1
        edges[k, 1] = x4
        edges[j, 0] = x2
        edges[j, 1] = x3
        k += 1
    return m


@njit(cache=True)
def _enumerate_pairings(n, d, prune, collect):
    # Depth-first enumeration of perfect matchings of n*d points (the lowest
    # unmatched point is paired first).  Returns (total leaves, simple leaves,
    # edge bitmasks of simple leaves when ``collect``).
    N = n * d
    half = N // 2
    used = np.zeros(N, np.bool_)
    ec = np.zeros((n, n), np.int64)
    firsts = np.zeros(half + 1, np.int64)
    nxt = np.zeros(half + 1, np.int64)
    partner = np.zeros(half + 1, np.int64)
    out = np.zeros(1024, np.uint64)
    n_out = 0
    total = 0
    simple = 0
    defects = 0
    mask = np.uint64(0)
    if half == 0:
        return 1, 1, np.zeros(1, np.uint64)
    k = 0
    firsts[0] = 0
    used[0] = True
    nxt[0] = 1
    while True:
        f = firsts[k]
        a = f // d
        c = nxt[k]
        while c < N:
            if not used[c]:
                b = c // d
                if not prune or (a != b and ec[min(a, b), max(a, b)] == 0):
                    break
            c += 1
        if c < N:
            nxt[k] = c + 1
            partner[k] = c
            used[c] = True
            b = c // d
            lo = min(a, b)
            hi = max(a, b)
            if lo == hi or ec[lo, hi] > 0:
                defects += 1
            ec[lo, hi] += 1
            if lo != hi and ec[lo, hi] == 1:
                mask |= np.uint64(1) << np.uint64(lo * n + hi)
            if k == half - 1:
                total += 1
                if defects == 0:
                    simple += 1
                    if collect:
                        if n_out == out.shape[0]:
                            bigger = np.zeros(2 * out.shape[0], np.uint64)
                            bigger[:n_out] = out
                            out = bigger
                        out[n_out] = mask
                        n_out += 1
                # undo the leaf pair and keep scanning this level
                ec[lo, hi] -= 1
                if lo == hi or ec[lo, hi] > 0:
                    defects -= 1
                if lo != hi and ec[lo, hi] == 0:
                    mask &= ~(np.uint64(1) << np.uint64(lo * n + hi))
                used[c] = False
                continue
            nf = 0
            while used[nf]:
                nf += 1
            k += 1
            firsts[k] = nf
            used[nf] = True
            nxt[k] = nf + 1
        else:
            used[f] = False
            k -= 1
            if k < 0:
                break
            f2 = firsts[k]
            c2 = partner[k]
            a2 = f2 // d
            b2 = c2 // d
            lo = min(a2, b2)
            hi = max(a2, b2)
            ec[lo, hi] -= 1
            if lo == hi or ec[lo, hi] > 0:
                defects -= 1
            if lo != hi and ec[lo, hi] == 0:
                mask &= ~(np.uint64(1) << np.uint64(lo * n + hi))
            used[c2] = False
    return total, simple, out[:n_out]


# --------------------------------------------------------------------------
# pairing model


def _check_pairing(n: int, d: int) -> None:
    if n < 1 or d < 0:
        raise PreconditionError(f"need n >= 1 and d >= 0 (got n={n}, d={d})")
    if (n * d) % 2:
        raise ParityError(n, d)


def _pairing_attempt(n, d, rng, abort):
    m = n * d // 2
    edges = np.empty((m, 2), np.int64)
    adj = np.empty((n, d), np.int64)
    cnt = np.empty(n, np.int64)
    ok = _pairing_kernel(n, d, rng.random(m), abort, edges, adj, cnt)
    return ok, edges, adj


def sample_pairing(n: int, d: int, rng: np.random.Generator) -> Multigraph:
    """Uniform perfect matching on n*d points, projected to a multigraph."""
    _check_pairing(n, d)
    _, edges, _ = _pairing_attempt(n, d, rng, False)
    return Multigraph(n, d, edges)


def _rejection(n, d, rng, max_attempts):
    for attempt in range(1, max_attempts + 1):
        ok, _, adj = _pairing_attempt(n, d, rng, True)
        if ok:
            adj.sort(axis=1)
            return RegularGraph(n, d, adj, check=False), attempt
    raise AttemptsExhaustedError(
        f"no simple pairing for n={n}, d={d} in {max_attempts} attempts"
    )


def sample_uniform_rejection(n: int, d: int, rng: np.random.Generator,
                             max_attempts: int = 100_000) -> RegularGraph:
    """Exactly uniform d-regular graph: redraw the pairing until it is simple."""
    _check_params(n, d)
    if d == n - 1:
        return complete_graph(n)
    return _rejection(n, d, rng, max_attempts)[0]


@dataclass(frozen=True)
class SimpleEstimate:
    estimate: float
    half_width: float
    successes: int
    trials: int


def estimate_simple_probability(n: int, d: int, trials: int,
                                rng: np.random.Generator) -> SimpleEstimate:
    """Fraction of pairing draws that are simple, with a normal 95% half-width."""
    _check_pairing(n, d)
    if trials < 1:
        raise PreconditionError("trials must be >= 1")
    hits = 0
    for _ in range(trials):
        ok, _, _ = _pairing_attempt(n, d, rng, True)
        hits += bool(ok)
    phat = hits / trials
    return SimpleEstimate(phat, 1.96 * math.sqrt(phat * (1 - phat) / trials), hits, trials)


def rejection_acceptance_heuristic(d: int) -> float:
    return math.exp(-(d * d - 1) / 4)


# --------------------------------------------------------------------------
# switching chain


def _run_chain(adj, edges, rng, steps):
    accepted = 0
    done = 0
    if edges.shape[0] < 2:
        return 0
    while done < steps:
        k = min(_CHUNK, steps - done)
        accepted += _switch_chain(adj, edges, rng.random((k, 3)))
        done += k
    return accepted


def default_burn_in(n: int, d: int) -> int:
    return 50 * n * d


def sample_switching_chain(n: int, d: int, rng: np.random.Generator,
                           burn_in: int | None = None,
                           start: RegularGraph | None = None) -> RegularGraph:
    """Approximately uniform graph: ``burn_in`` switching proposals from a start graph.

    The chain proposes two distinct edges and orientations uniformly; a
    proposal that would create a loop or a repeated edge leaves the graph as
    it is.  That makes the chain symmetric, so its limit is uniform.
    """
    _check_params(n, d)
    if d == n - 1:
        return complete_graph(n)
    if burn_in is None:
        burn_in = default_burn_in(n, d)
    g = start if start is not None else RegularGraph.circulant(n, d)
    if burn_in <= 0:
        return g
    adj = np.array(g.adj, copy=True)
    edges = np.array(g.edges, copy=True)
    _run_chain(adj, edges, rng, int(burn_in))
    adj.sort(axis=1)
    return RegularGraph(n, d, adj, check=False)


def sample_pairing_repair(n: int, d: int, rng: np.random.Generator,
                          burn_in: int | None = None) -> RegularGraph:
    """Pairing draw with loops and parallel edges switched away, then a short chain.

    Used where rejection is hopeless (large d) and a long chain from a fixed
    start is too slow.  Approximate: a pairing has O(d^2) defects in
    expectation, each removed by one switching with a uniform partner edge.
    ``burn_in`` optional chain proposals follow (default none).
    """
    _check_params(n, d)
    if d == n - 1:
        return complete_graph(n)
    m = n * d // 2
    # on tiny graphs a defect can be unrepairable; then redraw the pairing
    for _ in range(1000):
        _, edges, adj = _pairing_attempt(n, d, rng, False)
        k = 0
        for _ in range(64):
            k = _repair_scan(adj, edges, k, rng.random((4096, 2)))
            if k == m:
                break
        if k == m:
            break
    else:
        raise AttemptsExhaustedError(f"could not repair pairing (n={n}, d={d})")
    if burn_in:
        _run_chain(adj, edges, rng, int(burn_in))
    adj.sort(axis=1)
    return RegularGraph(n, d, adj, check=False)


SAMPLERS = ("auto", "rejection", "switching", "repair")


def choose_method(n: int, d: int) -> str:
    if d == n - 1:
        return "complete"
    if rejection_acceptance_heuristic(d) >= REJECTION_THRESHOLD:
        return "rejection"
    return "repair"


def sample_regular(n: int, d: int, rng: np.random.Generator, method: str = "auto",
                   burn_in: int | None = None, max_attempts: int = 100_000):
    """Sample by policy; returns ``(graph, method_used)``."""
    _check_params(n, d)
    if method not in SAMPLERS:
        raise PreconditionError(f"unknown sampler {method!r}; choose from {SAMPLERS}")
    if d == n - 1:
        return complete_graph(n), "complete"
    if method == "auto":
        method = choose_method(n, d)
    if method == "rejection":
        return sample_uniform_rejection(n, d, rng, max_attempts), "rejection"
    if method == "switching":
        return sample_switching_chain(n, d, rng, burn_in), "switching"
    return sample_pairing_repair(n, d, rng, burn_in), "repair"


# --------------------------------------------------------------------------
# exhaustive oracles


def _mask_to_edges(mask: int, n: int) -> list:
    return [(a, b) for a in range(n) for b in range(a + 1, n) if mask >> (a * n + b) & 1]


def _enumerate_backtrack(n: int, d: int) -> list:
    # Saturate the lowest unsaturated vertex with a combination of larger
    # vertices; each graph arises exactly once.
    deg = [0] * n
    adj = [set() for _ in range(n)]
    found = []

    def rec(u):
        while u < n and deg[u] == d:
            u += 1
        if u == n:
            found.append(sorted((a, b) for a in range(n) for b in adj[a] if a < b))
            return
        need = d - deg[u]
        cands = [w for w in range(u + 1, n) if deg[w] < d and w not in adj[u]]
        for chosen in combinations(cands, need):
            for w in chosen:
                adj[u].add(w)
                adj[w].add(u)
                deg[w] += 1
            deg[u] += need
            rec(u + 1)
            deg[u] -= need
            for w in chosen:
                adj[u].discard(w)
                adj[w].discard(u)
                deg[w] -= 1

    rec(0)
    return found


def _enumerate_by_pairings(n: int, d: int) -> list:
    if n * d > PAIRING_ENUMERATION_CAP:
        raise EnumerationCapError(f"pairing enumeration limited to n*d <= {PAIRING_ENUMERATION_CAP}")
    _, _, masks = _enumerate_pairings(n, d, True, True)
    return [_mask_to_edges(int(mk), n) for mk in np.unique(masks)]


def enumerate_regular(n: int, d: int, method: str = "backtrack",
                      cap: int = ENUMERATION_CAP) -> list:
    """All labelled simple d-regular graphs on n vertices, in canonical order.

    ``method="pairing"`` projects every loop-free, repeat-free matching of the
    n*d points and deduplicates; ``"backtrack"`` extends edge sets directly.
    The two share no code, so agreement between them is a real check.
    """
    if n < 1 or not 0 <= d <= n - 1:
        raise PreconditionError(f"need 0 <= d <= n-1 (got n={n}, d={d})")
    if (n * d) % 2:
        return []
    if d == n - 1:
        return [complete_graph(n)]
    if n > cap:
        raise EnumerationCapError(f"enumeration limited to n <= {cap} (got {n})")
    if method == "backtrack":
        lists = _enumerate_backtrack(n, d)
    elif method == "pairing":
        lists = _enumerate_by_pairings(n, d)
    else:
        raise PreconditionError(f"unknown enumeration method {method!r}")
    lists.sort()
    return [RegularGraph.from_edges(n, e, d) for e in lists]


def pairing_simple_probability_exact(n: int, d: int) -> Fraction:
    """P[pairing is simple] by enumerating every matching of the n*d points."""
    _check_pairing(n, d)
    if n * d > PAIRING_ENUMERATION_CAP:
        raise EnumerationCapError(f"pairing enumeration limited to n*d <= {PAIRING_ENUMERATION_CAP}")
    total, simple, _ = _enumerate_pairings(n, d, False, False)
    return Fraction(int(simple), int(total))


def graph_index(graphs: list) -> dict:
    """Map canonical edge bytes to position, for frequency tests."""
    return {g.edges.tobytes(): i for i, g in enumerate(graphs)}
