"""Edge-by-edge exploration of percolation clusters on an input (G, sigma).

State after t steps: the explored set S_t, the failed cross edges F_t, the
induced graph H_t = G[S_t] and the frontier X_t (unexposed edges leaving S_t).
Each step either exposes one frontier edge of the least active vertex, or,
when the frontier is empty, starts a new component at the outside vertex with
the fewest failed edges.

Two engines implement the same process.  ``ExplorationState.step`` is a
direct, set-based transcription used for small graphs and as a reference;
``run`` drives a numba kernel with bucketed fresh-vertex selection for
production sizes.  Both draw edge indicators from the keyed hash in
:mod:`regperc.percolation`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .errors import ExhaustedError, InconsistentStateError, PreconditionError
from .graph import RegularGraph
from .percolation import _edge_bits, draw_key, retention_threshold

CHECK_EVERY = 1 << 14
#: explicit inputs need n*d adjacency and permutation slots; beyond this the
#: arrays would not fit in a desk machine's memory
MAX_SLOTS = 1 << 25


# --------------------------------------------------------------------------
# inputs


@dataclass
class Input:
    """A graph with semi-edge labels by neighbour rank and one permutation per vertex.

    ``perms[v, j]`` is sigma_v applied to the label of the j-th smallest
    neighbour of v, stored 0-based.
    """

    graph: RegularGraph
    perms: np.ndarray

    def __post_init__(self):
        g = self.graph
        if self.perms.shape != (g.n, g.d):
            raise PreconditionError(f"perms shape {self.perms.shape} != {(g.n, g.d)}")

    def labels(self, v: int) -> dict:
        """Semi-edge labels at v: neighbour -> label in 1..d."""
        return {int(w): j + 1 for j, w in enumerate(self.graph.neighbors(v))}

    def sigma(self, v: int) -> np.ndarray:
        """sigma_v as a 1-based array: ``sigma(v)[i-1]`` is sigma_v(i)."""
        return self.perms[v] + 1


def make_input(g: RegularGraph, rng: np.random.Generator | None = None,
               identity: bool = False) -> Input:
    """Attach independent uniform permutations (or identities, for tests)."""
    if g.n * g.d > MAX_SLOTS:
        raise PreconditionError(f"n*d = {g.n * g.d} semi-edges exceeds the exploration limit {MAX_SLOTS}")
    base = np.tile(np.arange(g.d, dtype=np.int64), (g.n, 1))
    if identity:
        return Input(g, base)
    if rng is None:
        raise PreconditionError("make_input needs an rng unless identity=True")
    return Input(g, rng.permuted(base, axis=1))


class EdgeIndicators:
    """Lazy percolation oracle: ``ind(u, v)`` is 1 iff edge uv is retained."""

    def __init__(self, key: int, p: float, n: int):
        self.key = np.uint64(key)
        self.p = float(p)
        self.n = n
        self.threshold = retention_threshold(p)

    def __call__(self, u: int, v: int) -> int:
        return int(_edge_bits(self.key, u, v, self.n) < self.threshold)


# --------------------------------------------------------------------------
# reference engine


@dataclass(frozen=True)
class StepRecord:
    t: int              # time after the step
    v: int | None       # active vertex, None on a fresh step
    w: int
    I: int | None       # indicator, None on a fresh step
    Y: int
    Z: int
    eta: int
    X: int              # X_t after the step
    S: int              # |S_t| after the step
    fresh: bool
    comp: int


class ExplorationState:
    """Explicit sets; every quantity is recomputable from its definition."""

    def __init__(self, inp: Input):
        self.input = inp
        g = inp.graph
        self.n, self.d = g.n, g.d
        self.t = 0
        self.S: set = set()
        self.F: set = set()           # canonical (min, max) pairs
        self.X = 0
        self.comp_id: dict = {}
        self.a = 0
        self.c = 0
        self._nbrs = [set(map(int, g.neighbors(u))) for u in range(g.n)]

    # definitional quantities
    def d_H(self, u: int) -> int:
        return sum(1 for x in self._nbrs[u] if x in self.S) if u in self.S else 0

    def d_F(self, u: int) -> int:
        return sum(1 for x in self._nbrs[u] if (min(u, x), max(u, x)) in self.F)

    def d_GS(self, u: int) -> int:
        return sum(1 for x in self._nbrs[u] if x in self.S)

    def frontier(self) -> int:
        return sum(self.d - self.d_H(u) - self.d_F(u) for u in self.S)

    @property
    def n_components(self) -> int:
        return self.a

    def check(self) -> None:
        if self.frontier() != self.X:
            raise InconsistentStateError(f"incremental X={self.X} != {self.frontier()}")
        if len(self.F) > self.t:
            raise InconsistentStateError("|E(F_t)| > t")
        if len(self.S) != self.a + self.c:
            raise InconsistentStateError("|S| != a + c")
        for u, v in self.F:
            if (u in self.S) == (v in self.S):
                raise InconsistentStateError(f"F edge {u}{v} does not cross (S, V\\S)")

    def _add(self, w: int) -> int:
        # move w into S; its failed edges become edges of H
        for x in self._nbrs[w]:
            self.F.discard((min(w, x), max(w, x)))
        self.S.add(w)
        self.comp_id[w] = self.a - 1

    def step(self, indicators) -> StepRecord:
        d = self.d
        if self.X > 0:
            v = min(u for u in self.S if self.d_H(u) + self.d_F(u) < d)
            sig = self.input.perms[v]
            labels = self.input.labels(v)
            cands = [w for w in self._nbrs[v]
                     if w not in self.S and (min(v, w), max(v, w)) not in self.F]
            w = min(cands, key=lambda x: sig[labels[x] - 1])
            i = indicators(v, w)
            if i == 0:
                self.F.add((min(v, w), max(v, w)))
                y = z = 0
                eta = -1
            else:
                y = self.d_F(w)
                z = self.d_GS(w) - y - 1
                self._add(w)
                self.c += 1
                eta = d - 2 - y - 2 * z
            fresh = False
        else:
            if len(self.S) == self.n:
                raise ExhaustedError("every vertex explored and no frontier left")
            w = min((x for x in range(self.n) if x not in self.S),
                    key=lambda x: (self.d_F(x), x))
            v = None
            i = None
            y = self.d_F(w)
            z = 0
            self.a += 1
            self._add(w)
            eta = d - y
            fresh = True
        self.X += eta
        self.t += 1
        return StepRecord(self.t, v, w, i, y, z, eta, self.X, len(self.S), fresh,
                          self.comp_id[w] if w in self.S else self.a - 1)


def step(state: ExplorationState, inp: Input, indicators) -> StepRecord:
    if state.input is not inp:
        raise PreconditionError("state was built for a different input")
    return state.step(indicators)


# --------------------------------------------------------------------------
# numba engine


@njit(cache=True)
def _hpush(h, size, x):
    i = size
    h[i] = x
    while i > 0:
        par = (i - 1) // 2
        if h[par] <= h[i]:
            break
        h[par], h[i] = h[i], h[par]
        i = par
    return size + 1


@njit(cache=True)
def _hpop(h, size):
    size -= 1
    h[0] = h[size]
    i = 0
    while True:
        lft = 2 * i + 1
        if lft >= size:
            break
        c = lft
        if lft + 1 < size and h[lft + 1] < h[lft]:
            c = lft + 1
        if h[i] <= h[c]:
            break
        h[i], h[c] = h[c], h[i]
        i = c
    return size


@njit(cache=True)
def _slot(adj, w, v):
    lo = 0
    hi = adj.shape[1] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if adj[w, mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def _frontier_from_scratch(adj, inS, inF, svert, S):
    d = adj.shape[1]
    X = 0
    for i in range(S):
        u = svert[i]
        used = 0
        for j in range(d):
            if inS[adj[u, j]] or inF[u * d + j]:
                used += 1
        X += d - used
    return X


@njit(cache=True)
def _explore(adj, perm, key, thr, t_max, check_every, o_v, o_w, o_I, o_Y, o_Z,
             o_eta, o_X, o_S, o_fresh, o_comp):
    # Returns (steps taken, status): status 0 = ran t_max steps, 1 = exhausted,
    # 2 = frontier checkpoint mismatch.
    n = adj.shape[0]
    d = adj.shape[1]
    inS = np.zeros(n, np.bool_)
    dH = np.zeros(n, np.int64)
    dF = np.zeros(n, np.int64)
    inF = np.zeros(n * d, np.bool_)
    svert = np.empty(n, np.int64)
    act = np.empty(n + 1, np.int64)
    nact = 0
    fh = np.empty(t_max + 1, np.int64)
    nfh = 0
    zp = 0
    X = 0
    S = 0
    ncomp = 0
    for t in range(t_max):
        if X > 0:
            while d - dH[act[0]] - dF[act[0]] == 0:
                nact = _hpop(act, nact)
            v = act[0]
            best = -1
            bkey = d + 1
            for j in range(d):
                w = adj[v, j]
                if inS[w] or inF[v * d + j]:
                    continue
                if perm[v, j] < bkey:
                    bkey = perm[v, j]
                    best = j
            w = adj[v, best]
            if _edge_bits(key, v, w, n) < thr:
                ind = 1
            else:
                ind = 0
            fresh = False
            if ind == 0:
                inF[v * d + best] = True
                inF[w * d + _slot(adj, w, v)] = True
                dF[v] += 1
                dF[w] += 1
                nfh = _hpush(fh, nfh, dF[w] * n + w)
                Y = 0
                Z = 0
                eta = -1
        else:
            if S == n:
                return t, 1
            while zp < n and (inS[zp] or dF[zp] > 0):
                zp += 1
            if zp < n:
                w = zp
            else:
                while True:
                    x = fh[0] % n
                    if inS[x] or dF[x] != fh[0] // n:
                        nfh = _hpop(fh, nfh)
                    else:
                        break
                w = x
            v = -1
            ind = -1
            fresh = True
            ncomp += 1
        if fresh or ind == 1:
            Y = dF[w]
            cnt = 0
            for jw in range(d):
                u = adj[w, jw]
                if inS[u]:
                    cnt += 1
                    dH[u] += 1
                    dH[w] += 1
                    if inF[w * d + jw]:
                        inF[w * d + jw] = False
                        inF[u * d + _slot(adj, u, w)] = False
                        dF[u] -= 1
                        dF[w] -= 1
            inS[w] = True
            svert[S] = w
            S += 1
            if d - dH[w] - dF[w] > 0:
                nact = _hpush(act, nact, w)
            if fresh:
                Z = 0
                eta = d - Y
            else:
                Z = cnt - Y - 1
                eta = d - 2 - Y - 2 * Z
        X += eta
        o_v[t] = v
        o_w[t] = w
        o_I[t] = ind
        o_Y[t] = Y
        o_Z[t] = Z
        o_eta[t] = eta
        o_X[t] = X
        o_S[t] = S
        o_fresh[t] = fresh
        o_comp[t] = ncomp - 1
        if (t + 1) % check_every == 0:
            if _frontier_from_scratch(adj, inS, inF, svert, S) != X:
                return t + 1, 2
    return t_max, 0


_COLUMNS = ("v", "w", "I", "Y", "Z", "eta", "X", "S", "fresh", "comp")


@dataclass
class ExplorationTrajectory:
    """Column store of step records; row i describes the step ending at t = i+1."""

    n: int
    d: int
    p: float
    key: int
    v: np.ndarray
    w: np.ndarray
    I: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    eta: np.ndarray
    X: np.ndarray
    S: np.ndarray
    fresh: np.ndarray
    comp: np.ndarray
    exhausted: bool = False
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.w)

    @property
    def X_series(self) -> np.ndarray:
        """X_0, X_1, ..., X_T."""
        return np.concatenate([[0], self.X])

    @property
    def S_series(self) -> np.ndarray:
        return np.concatenate([[0], self.S])

    @property
    def a_series(self) -> np.ndarray:
        """a_t: number of component starters among the first t steps."""
        return np.concatenate([[0], np.cumsum(self.fresh)])

    @property
    def c_series(self) -> np.ndarray:
        """c_t: vertices added through a percolated edge."""
        return np.concatenate([[0], np.cumsum(self.I == 1)])

    @property
    def F_size_upper(self) -> np.ndarray:
        # failures so far; |E(F_t)| can only be smaller
        return np.concatenate([[0], np.cumsum(self.I == 0)])

    def record(self, i: int) -> StepRecord:
        fresh = bool(self.fresh[i])
        return StepRecord(
            t=i + 1,
            v=None if fresh else int(self.v[i]),
            w=int(self.w[i]),
            I=None if fresh else int(self.I[i]),
            Y=int(self.Y[i]), Z=int(self.Z[i]), eta=int(self.eta[i]),
            X=int(self.X[i]), S=int(self.S[i]), fresh=fresh, comp=int(self.comp[i]),
        )

    def records(self):
        for i in range(len(self)):
            yield self.record(i)

    def explored_components(self) -> dict:
        """Component index -> explored vertices (failed exposures add nothing)."""
        out: dict = {}
        added = self.fresh | (self.I == 1)
        for c, w in zip(self.comp[added].tolist(), self.w[added].tolist()):
            out.setdefault(c, []).append(w)
        return out

    def header(self) -> dict:
        return {"type": "header", "n": self.n, "d": self.d, "p": self.p,
                "key": self.key, "steps": len(self), "exhausted": self.exhausted,
                **self.meta}

    def rows(self, every: int = 1, landmarks=()):
        """Row dicts for t = 0 (the empty state) and each kept step.

        With ``every > 1`` only every k-th step is kept, plus all fresh steps
        and the steps listed in ``landmarks`` (times t).
        """
        yield {"t": 0, "v": None, "w": None, "I": None, "Y": None, "Z": None,
               "eta": None, "X": 0, "S": 0, "fresh": None, "comp": None}
        marks = set(int(x) for x in landmarks if x is not None)
        for i in range(len(self)):
            t = i + 1
            if every > 1 and t % every and not self.fresh[i] and t not in marks:
                continue
            yield asdict(self.record(i))

    def write_jsonl(self, fh, every: int = 1, landmarks=()) -> None:
        """Header line, then one JSON object per kept step."""
        fh.write(json.dumps(self.header()) + "\n")
        for row in self.rows(every, landmarks):
            fh.write(json.dumps(row) + "\n")

    def write_csv(self, fh, every: int = 1, landmarks=()) -> None:
        cols = ("t",) + _COLUMNS
        fh.write(",".join(cols) + "\n")
        for row in self.rows(every, landmarks):
            fh.write(",".join("" if row[c] is None else str(int(row[c])) for c in cols) + "\n")


def run(inp: Input, p: float, rng: np.random.Generator | None = None,
        t_max: int = 0, *, key: int | None = None,
        check_every: int = CHECK_EVERY) -> ExplorationTrajectory:
    """Run up to ``t_max`` steps (fewer if the graph is exhausted)."""
    if t_max < 0:
        raise PreconditionError("t_max must be >= 0")
    if not 0.0 <= p <= 1.0:
        raise PreconditionError(f"p must lie in [0, 1] (got {p})")
    if key is None:
        if rng is None:
            raise PreconditionError("run needs an rng or an explicit key")
        key = draw_key(rng)
    g = inp.graph
    t_max = int(t_max)
    cols = {c: np.zeros(t_max, np.int64) for c in _COLUMNS}
    cols["fresh"] = np.zeros(t_max, np.bool_)
    steps, status = _explore(
        g.adj, inp.perms, np.uint64(key), retention_threshold(p), t_max, int(check_every),
        cols["v"], cols["w"], cols["I"], cols["Y"], cols["Z"], cols["eta"],
        cols["X"], cols["S"], cols["fresh"], cols["comp"],
    )
    if status == 2:
        raise InconsistentStateError(f"frontier checkpoint mismatch at t={steps}")
    cols = {c: a[:steps] for c, a in cols.items()}
    return ExplorationTrajectory(g.n, g.d, float(p), int(key), exhausted=status == 1, **cols)


def run_reference(inp: Input, p: float, key: int, t_max: int,
                  check: bool = False) -> list:
    """Step the set-based engine; returns the list of StepRecords."""
    state = ExplorationState(inp)
    ind = EdgeIndicators(key, p, inp.graph.n)
    out = []
    for _ in range(t_max):
        try:
            out.append(state.step(ind))
        except ExhaustedError:
            break
        if check:
            state.check()
    return out


# --------------------------------------------------------------------------
# two-phase experiment


def subcritical_p(d: int, mu: float, n: int) -> float:
    """``(1 - mu n^(-1/3)) / (d - 1)`` clamped to [0, 1]."""
    p = (1.0 - mu * n ** (-1.0 / 3.0)) / (d - 1)
    return min(max(p, 0.0), 1.0)


@dataclass
class PhaseParams:
    n: int
    d: int
    A: float
    mu: float

    @property
    def h(self) -> float:
        return self.A ** -0.25 * self.d * self.n ** (1 / 3)

    @property
    def T1(self) -> float:
        return 5 * self.d * self.n ** (2 / 3) / 6

    @property
    def T2(self) -> float:
        return 2 * self.d * self.n ** (2 / 3) / self.A

    @property
    def S1_cap(self) -> float:
        return 3 * self.n ** (2 / 3)

    @property
    def S2_cap(self) -> float:
        return 2 * self.n ** (2 / 3)


def _ceil(x: float) -> int:
    # tolerate float noise in values such as 5*3*1e4/6
    r = round(x)
    return int(r) if abs(x - r) < 1e-9 * max(1.0, abs(x)) else math.ceil(x)


@dataclass
class PhaseOutcome:
    A: float
    mu: float
    p: float
    h: float
    T1: float
    T2: float
    tau_h: int
    tau_S1: int | None       # None: |S| stayed below 3n^(2/3) over the run
    tau_1: int
    tau_0: int
    tau_S2: int | None
    tau_2: int
    E_holds: bool
    S_gain: int
    W_max: float
    W_final: float
    trajectory: ExplorationTrajectory | None = None

    @property
    def tau1_hit_T1(self) -> bool:
        return self.tau_1 >= _ceil(self.T1)

    @property
    def phase2_short(self) -> bool:
        return self.tau_2 < _ceil(self.T2)

    def as_row(self) -> dict:
        row = asdict(self)
        row.pop("trajectory")
        return row


def _first(mask: np.ndarray):
    idx = np.flatnonzero(mask)
    return int(idx[0]) if len(idx) else None


def phase_times(traj: ExplorationTrajectory, params: PhaseParams) -> dict:
    """Stopping times of both phases read off a trajectory."""
    h = params.h
    T1i = _ceil(params.T1)
    T2i = _ceil(params.T2)
    Xs = traj.X_series
    Ss = traj.S_series
    horizon = T1i + T2i
    if len(Xs) <= horizon:
        # an exhausted run stays at X = 0 with every vertex explored
        pad = horizon + 1 - len(Xs)
        Xs = np.concatenate([Xs, np.full(pad, Xs[-1])])
        Ss = np.concatenate([Ss, np.full(pad, Ss[-1])])
    hit = _first(Xs[:T1i + 1] >= h)
    tau_h = T1i if hit is None or hit >= params.T1 else hit
    tau_S1 = _first(Ss >= params.S1_cap)
    tau_1 = tau_h if tau_S1 is None else min(tau_h, tau_S1)
    E = bool(tau_h < params.T1 and (tau_S1 is None or tau_h < tau_S1))
    base = tau_h
    seg_X = Xs[base:base + T2i + 1]
    seg_S = Ss[base:base + T2i + 1] - Ss[base]
    z = _first(seg_X == 0)
    tau_0 = T2i if z is None else min(z, T2i)
    tau_S2 = _first(seg_S >= params.S2_cap)
    tau_2 = tau_0 if tau_S2 is None else min(tau_0, tau_S2)
    W = h - np.minimum(h, seg_X[:tau_2 + 1])
    return dict(tau_h=int(tau_h), tau_S1=tau_S1, tau_1=int(tau_1), tau_0=int(tau_0),
                tau_S2=tau_S2, tau_2=int(tau_2), E_holds=E,
                S_gain=int(seg_S[tau_2]), W_max=float(W.max()), W_final=float(W[-1]))


def two_phase_experiment(inp: Input, mu: float, A: float,
                         rng: np.random.Generator | None = None, *,
                         key: int | None = None, keep_trajectory: bool = False) -> PhaseOutcome:
    """Run the exploration at ``p = (1 - mu n^(-1/3))/(d-1)`` through both phases."""
    if mu < 0:
        raise PreconditionError("mu must be >= 0")
    g = inp.graph
    params = PhaseParams(g.n, g.d, float(A), float(mu))
    p = subcritical_p(g.d, mu, g.n)
    t_max = _ceil(params.T1) + _ceil(params.T2)
    traj = run(inp, p, rng, t_max, key=key)
    times = phase_times(traj, params)
    return PhaseOutcome(A=float(A), mu=float(mu), p=p, h=params.h, T1=params.T1,
                        T2=params.T2, trajectory=traj if keep_trajectory else None, **times)
