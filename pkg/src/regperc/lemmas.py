"""Switching counts and Monte Carlo estimators for the lemma-level bounds.

The switching counts are deterministic: for any graph and any consistent
exploration state the inequalities hold with no randomness involved, so a
single violation is a bug.  The moment estimators average over qualifying
steps of many trajectories; their bounds are one-sided.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .errors import EmptyFilterError, InconsistentStateError, PreconditionError
from .exploration import ExplorationTrajectory, make_input, run
from .graph import RegularGraph
from .sampler import enumerate_regular, sample_regular

Z95_ONE_SIDED = 1.6448536269514722
Z95_TWO_SIDED = 1.959963984540054


def _canon(e) -> tuple:
    u, v = int(e[0]), int(e[1])
    return (u, v) if u < v else (v, u)


def _check_state(g: RegularGraph, S: set, F: set) -> None:
    for e in F:
        u, v = e
        if not g.has_edge(u, v):
            raise InconsistentStateError(f"F edge {u}{v} is not an edge of g")
        if (u in S) == (v in S):
            raise InconsistentStateError(f"F edge {u}{v} does not cross (S, V\\S)")


def _row(g: RegularGraph, u: int) -> np.ndarray:
    m = np.zeros(g.n, bool)
    m[g.neighbors(u)] = True
    return m


def _ordered_edges(g: RegularGraph):
    e = g.edges
    return np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]])


def _d_F(F: set, u: int) -> int:
    return sum(1 for e in F if u in e)


@dataclass
class UVCount:
    edge_present: bool
    forward: int | None
    backward: int | None
    bound_f: int
    bound_b: int
    ok: bool


def count_switchings_uv(g: RegularGraph, S, F, u: int, v: int) -> UVCount:
    """Switchings that remove uv (if uv is an edge) or create it (if not).

    forward: ordered edges xy with x, y outside S and {u, v}, vx and uy
    non-edges, so deleting uv, xy and adding vx, uy is a valid switching.
    backward: pairs (a, b) with a a free neighbour of u outside S, b a
    neighbour of v whose edge is not failed, ab a non-edge; deleting ua, vb
    and adding uv, ab creates uv without touching G[S] or F.
    """
    S = set(map(int, S))
    F = {_canon(e) for e in F}
    _check_state(g, S, F)
    if u not in S or v in S:
        raise InconsistentStateError("need u in S and v outside S")
    n, d = g.n, g.d
    bound_f = d * n - 2 * d * len(S) - 2 * d * d
    dH = sum(1 for x in g.neighbors(u) if int(x) in S)
    dFu = _d_F(F, u)
    bound_b = d * (d - dH - dFu)
    if g.has_edge(u, v):
        if (min(u, v), max(u, v)) in F:
            raise InconsistentStateError("uv has been exposed and failed")
        xs, ys = _ordered_edges(g)
        out = np.zeros(n, bool)
        out[list(S)] = True
        out[[u, v]] = True
        keep = ~out[xs] & ~out[ys] & ~_row(g, v)[xs] & ~_row(g, u)[ys]
        fwd = int(np.count_nonzero(keep))
        return UVCount(True, fwd, None, bound_f, bound_b, fwd >= bound_f)
    back = 0
    for a in map(int, g.neighbors(u)):
        if a in S or (min(u, a), max(u, a)) in F:
            continue
        ra = _row(g, a)
        for b in map(int, g.neighbors(v)):
            if b in (a, u) or (min(v, b), max(v, b)) in F or ra[b]:
                continue
            back += 1
    return UVCount(False, None, back, bound_f, bound_b, back <= bound_b)


@dataclass
class KCount:
    k: int
    up: int
    down: int | None
    bound_up: int          # (d - d_F(v)) d |S|
    bound_up_loose: int    # d^2 |S|
    bound_down: int | None
    ok: bool


def count_switchings_k(g: RegularGraph, S, F, v: int, k: int | None = None) -> KCount:
    """Switchings moving v's number of unexposed edges into S up or down by one.

    up: (x, s, y) with vx a non-failed edge, x outside S, sy an edge with s in
    S and y outside S not failed, vs and xy non-edges.  down: (s, x, y) with
    vs an unexposed back edge, xy an ordered edge outside S and v, vx and sy
    non-edges.
    """
    S = set(map(int, S))
    F = {_canon(e) for e in F}
    _check_state(g, S, F)
    if v in S:
        raise InconsistentStateError("v must lie outside S")
    n, d = g.n, g.d
    nv = [int(x) for x in g.neighbors(v)]
    dFv = _d_F(F, v)
    level = sum(1 for x in nv if x in S) - dFv
    if k is None:
        k = level
    elif k != level:
        raise InconsistentStateError(f"d_(G,S)(v) - d_F(v) = {level} != k = {k}")
    inS = np.zeros(n, bool)
    inS[list(S)] = True
    rv = _row(g, v)
    # (s, y) pairs: edges leaving S that are not failed
    sy = [(s, int(y)) for s in S for y in g.neighbors(s)
          if not inS[y] and (min(s, int(y)), max(s, int(y))) not in F]
    up = 0
    if sy:
        ss = np.array([p[0] for p in sy])
        yy = np.array([p[1] for p in sy])
        for x in nv:
            if inS[x] or (min(v, x), max(v, x)) in F:
                continue
            ok = ~rv[ss] & ~_row(g, x)[yy] & (yy != x) & (yy != v)
            up += int(np.count_nonzero(ok))
    bound_up = (d - dFv) * d * len(S)
    down = None
    bound_down = None
    if k >= 1:
        xs, ys = _ordered_edges(g)
        base = ~inS[xs] & ~inS[ys] & (xs != v) & (ys != v) & ~rv[xs]
        down = 0
        for s in nv:
            if not inS[s] or (min(v, s), max(v, s)) in F:
                continue
            down += int(np.count_nonzero(base & ~_row(g, s)[ys]))
        bound_down = k * (d * n - 2 * d * len(S) - 2 * d * d)
    ok = up <= bound_up and (down is None or down >= bound_down)
    return KCount(k, up, down, bound_up, d * d * len(S), bound_down, ok)


# --------------------------------------------------------------------------
# exploration states


def state_after(traj: ExplorationTrajectory, t: int):
    """(S_t, F_t) reconstructed from the first t steps of a trajectory."""
    if not 0 <= t <= len(traj):
        raise PreconditionError(f"t={t} outside 0..{len(traj)}")
    S: set = set()
    F: set = set()
    for i in range(t):
        w = int(traj.w[i])
        if traj.fresh[i] or traj.I[i] == 1:
            F = {e for e in F if w not in e}
            S.add(w)
        else:
            F.add(_canon((traj.v[i], w)))
    return S, F


def random_exploration_state(g: RegularGraph, rng: np.random.Generator,
                             max_S: int | None = None, p: float | None = None):
    """A state (S, F) at a uniform time before |S| first exceeds ``max_S``."""
    n, d = g.n, g.d
    max_S = n // 6 if max_S is None else max_S
    p = 1.0 / (d - 1) if p is None else p
    traj = run(make_input(g, rng), p, rng, t_max=n * d)
    over = np.flatnonzero(traj.S > max_S)
    last = int(over[0]) if len(over) else len(traj)     # steps 1..last keep |S| <= max_S
    t = int(rng.integers(1, last + 1))
    return state_after(traj, t)


@dataclass
class SwitchingTrial:
    trial: int
    S_size: int
    F_size: int
    forward: int | None = None
    bound_f: int | None = None
    backward: int | None = None
    bound_b: int | None = None
    k: int | None = None
    up: int | None = None
    bound_up: int | None = None
    down: int | None = None
    bound_down: int | None = None
    forward_ok: bool | None = None
    backward_ok: bool | None = None
    up_ok: bool | None = None
    down_ok: bool | None = None

    @property
    def ok(self) -> bool:
        return all(x is not False for x in (self.forward_ok, self.backward_ok,
                                           self.up_ok, self.down_ok))


def switching_trial(g: RegularGraph, S: set, F: set, rng: np.random.Generator,
                    trial: int = 0) -> SwitchingTrial:
    """Run all three counts on one state with randomly chosen vertices."""
    out = SwitchingTrial(trial, len(S), len(F))
    Sl = sorted(S)
    outside = np.array([x for x in range(g.n) if x not in S])
    present = [(u, int(v)) for u in Sl for v in g.neighbors(u)
               if int(v) not in S and _canon((u, v)) not in F]
    if present:
        u, v = present[rng.integers(len(present))]
        r = count_switchings_uv(g, S, F, u, v)
        out.forward, out.bound_f, out.forward_ok = r.forward, r.bound_f, r.ok
    # prefer vertices for which the counts are not trivially zero
    free_u = [u for u in Sl if any(int(x) not in S and _canon((u, x)) not in F
                                   for x in g.neighbors(u))]
    pool_u = free_u or Sl
    if pool_u and len(outside):
        for _ in range(64):
            u = pool_u[rng.integers(len(pool_u))]
            v = int(outside[rng.integers(len(outside))])
            if not g.has_edge(u, v):
                r = count_switchings_uv(g, S, F, u, v)
                out.backward, out.bound_b, out.backward_ok = r.backward, r.bound_b, r.ok
                break
    if len(outside):
        back = sorted({int(x) for u, x in present})
        pool_v = back if back else outside.tolist()
        v = int(pool_v[rng.integers(len(pool_v))])
        r = count_switchings_k(g, S, F, v)
        out.k, out.up, out.bound_up, out.down, out.bound_down = r.k, r.up, r.bound_up, r.down, r.bound_down
        out.up_ok = r.up <= r.bound_up <= r.bound_up_loose
        out.down_ok = None if r.down is None else r.down >= r.bound_down
    return out


def switching_suite(n: int, d: int, trials: int, rng: np.random.Generator,
                    max_S: int | None = None) -> list:
    """Independent graphs and exploration states, one SwitchingTrial each."""
    rows = []
    for i in range(trials):
        g, _ = sample_regular(n, d, rng)
        S, F = random_exploration_state(g, rng, max_S)
        rows.append(switching_trial(g, S, F, rng, i))
    return rows


# --------------------------------------------------------------------------
# frontier moments


@dataclass
class Estimate:
    name: str
    mean: float
    se: float
    n_steps: int
    bound: float | None = None
    side: str | None = None        # "upper": mean <= bound, "lower": mean >= bound
    verdict: bool | None = None

    @property
    def ci95(self) -> tuple:
        return (self.mean - Z95_TWO_SIDED * self.se, self.mean + Z95_TWO_SIDED * self.se)

    def judge(self, bound: float, side: str) -> "Estimate":
        """One-sided 95% verdict: the confidence limit must clear the bound."""
        self.bound, self.side = float(bound), side
        if side == "upper":
            self.verdict = bool(self.mean + Z95_ONE_SIDED * self.se <= bound)
        else:
            self.verdict = bool(self.mean - Z95_ONE_SIDED * self.se >= bound)
        return self

    def as_row(self) -> dict:
        row = asdict(self)
        row["ci_lo"], row["ci_hi"] = self.ci95
        return row


def ratio_estimate(name: str, sums: np.ndarray, counts: np.ndarray) -> Estimate:
    """Pooled mean over steps with a cluster-robust (per-trajectory) standard error."""
    sums = np.asarray(sums, float)
    counts = np.asarray(counts, float)
    total = counts.sum()
    if total == 0:
        raise EmptyFilterError(f"no qualifying steps for {name}")
    m = sums.sum() / total
    k = np.count_nonzero(counts)
    if k < 2:
        return Estimate(name, m, math.inf, int(total))
    resid = sums - m * counts
    cbar = total / len(counts)
    se = math.sqrt((resid ** 2).sum() / (len(counts) * (len(counts) - 1))) / cbar
    return Estimate(name, float(m), float(se), int(total))


@dataclass
class FrontierStats:
    n: int
    d: int
    mu: float
    EY: Estimate
    EZ: Estimate
    Eeta: Estimate
    Eeta2: Estimate           # X_t > 0 steps
    Eeta2_all: Estimate
    bounds: dict = field(default_factory=dict)

    def estimates(self) -> list:
        return [self.EY, self.EZ, self.Eeta, self.Eeta2, self.Eeta2_all]

    @property
    def ok(self) -> bool:
        return all(e.verdict is not False for e in self.estimates())


def step_filter(traj: ExplorationTrajectory, n: int) -> np.ndarray:
    """Steps t -> t+1 with t <= d n^(2/3) and |S_t| <= 5 n^(2/3)."""
    t_before = np.arange(len(traj))
    S_before = traj.S_series[:-1]
    return (t_before <= traj.d * n ** (2 / 3)) & (S_before <= 5 * n ** (2 / 3))


def frontier_statistics(trajectories, mu: float = 0.0) -> FrontierStats:
    """Tower-averaged Y, Z, eta, eta^2 over qualifying steps, judged against the bounds."""
    trajectories = list(trajectories)
    if not trajectories:
        raise EmptyFilterError("no trajectories")
    n, d = trajectories[0].n, trajectories[0].d
    acc = {k: ([], []) for k in ("Y", "Z", "eta", "eta2", "eta2_all")}
    for tr in trajectories:
        if (tr.n, tr.d) != (n, d):
            raise PreconditionError("trajectories mix different (n, d)")
        keep = step_filter(tr, n)
        live = keep & (tr.X_series[:-1] > 0)
        eta = tr.eta.astype(float)
        for key, vals, mask in (("Y", tr.Y, keep), ("Z", tr.Z, keep), ("eta", eta, keep),
                                ("eta2", eta ** 2, live), ("eta2_all", eta ** 2, keep)):
            acc[key][0].append(float(np.asarray(vals, float)[mask].sum()))
            acc[key][1].append(int(mask.sum()))
    est = {k: ratio_estimate(k, *v) for k, v in acc.items()}
    c = n ** (-1 / 3)
    bounds = {"EY": 20 * d * c, "EZ": 180 * d * c, "Eeta": -(570 + mu) * c,
              "Eeta2_lo": d / 4, "Eeta2_hi": d}
    est["Y"].judge(bounds["EY"], "upper")
    est["Z"].judge(bounds["EZ"], "upper")
    est["eta"].judge(bounds["Eeta"], "lower")
    est["eta2"].judge(bounds["Eeta2_hi"], "upper")
    est["eta2_all"].judge(bounds["Eeta2_lo"], "lower")
    return FrontierStats(n, d, mu, est["Y"], est["Z"], est["eta"], est["eta2"],
                         est["eta2_all"], bounds)


# --------------------------------------------------------------------------
# growth of S_t


@dataclass
class GrowthCheck:
    t1: int
    t2: int
    gain: int
    b: int                 # vertices added through percolated edges in (t1, t2]
    a: int
    c: int
    starter_bound: int
    lower_ok: bool
    upper_ok: bool
    a_bound_ok: bool
    c_ok: bool


def growth_check(traj: ExplorationTrajectory, t1: int, t2: int, delta: float) -> GrowthCheck:
    n, d = traj.n, traj.d
    if not 0 <= t1 <= t2 <= 5 * d * n ** (2 / 3):
        raise PreconditionError(f"need 0 <= t1 <= t2 <= 5dn^(2/3) (got {t1}, {t2})")
    if t2 > len(traj):
        raise PreconditionError(f"trajectory has only {len(traj)} steps (t2={t2})")
    S, a, c = traj.S_series, traj.a_series, traj.c_series
    gain = int(S[t2] - S[t1])
    drift = (t2 - t1) / (d - 1)
    slack = delta * n ** (2 / 3)
    starter = -(-6 * t2 // (5 * d))          # ceil(t2 / (5d/6))
    c_ok = bool(c[t2] <= 8 * n ** (2 / 3))
    return GrowthCheck(
        t1=t1, t2=t2, gain=gain, b=int(c[t2] - c[t1]), a=int(a[t2]), c=int(c[t2]),
        starter_bound=int(starter),
        lower_ok=bool(gain - drift >= -slack),
        upper_ok=bool(gain - drift - starter <= slack),
        a_bound_ok=bool(a[t2] <= starter) if c_ok else True,
        c_ok=c_ok,
    )


# --------------------------------------------------------------------------
# exact conditional edge probability


def exact_edge_probability(n: int, d: int, S, H, F, u: int, v: int) -> Fraction:
    """P[uv in E | G[S] = H, F subset of E] over uniform d-regular graphs, by enumeration."""
    S = set(map(int, S))
    H = {_canon(e) for e in H}
    F = {_canon(e) for e in F}
    for e in H:
        if not set(e) <= S:
            raise InconsistentStateError(f"H edge {e} leaves S")
    for e in F:
        if (e[0] in S) == (e[1] in S):
            raise InconsistentStateError(f"F edge {e} does not cross (S, V\\S)")
    target = _canon((u, v))
    hits = total = 0
    for g in enumerate_regular(n, d):
        es = g.edge_set()
        if {e for e in es if e[0] in S and e[1] in S} != H or not F <= es:
            continue
        total += 1
        hits += target in es
    if total == 0:
        raise InconsistentStateError("no graph satisfies the conditioning event")
    return Fraction(hits, total)
