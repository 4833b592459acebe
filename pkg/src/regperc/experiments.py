"""Replicated scaling studies, tail and phase statistics, and result persistence.

Every replicate draws from three independent streams spawned from the master
seed and the key ``(n, d, replicate, purpose)``: the graph, the exploration
permutations and the percolation key.  Lambda is not part of the key, so all
lambda values of a replicate percolate the same graph with the same edge
uniforms; L1 is then pathwise non-decreasing in lambda.  Results depend only on
(config, seed), never on the worker count or completion order.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import subprocess
import tempfile
import time
from contextlib import contextmanager
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from . import __version__
from .errors import PreconditionError, RegpercError
from .exploration import MAX_SLOTS, make_input, run, subcritical_p, two_phase_experiment
from .graph import _check_params
from .metrics import EXACT_CAP, component_subgraph, diameter, mixing_time
from .percolation import critical_p, draw_key, percolate
from .sampler import SAMPLERS, sample_regular

PURPOSE_GRAPH, PURPOSE_PERMS, PURPOSE_KEY = 0, 1, 2


def replicate_rng(seed: int, n: int, d: int, rep: int, purpose: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(n), int(d), int(rep), int(purpose)))
    return np.random.Generator(np.random.PCG64(ss))


# --------------------------------------------------------------------------
# configuration


def _parse_d(token, n: int) -> int:
    t = str(token).strip().replace(" ", "")
    if t in ("n-1", "K", "complete"):
        return n - 1
    return int(t)


def _bool(x) -> bool:
    if isinstance(x, bool):
        return x
    s = str(x).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise PreconditionError(f"not a boolean: {x!r}")


def _list(x, conv):
    if isinstance(x, (list, tuple)):
        return [conv(v) for v in x]
    return [conv(v) for v in str(x).split(",") if v.strip()]


def _number(x) -> int:
    return int(float(x)) if "e" in str(x).lower() else int(x)


@dataclass
class ExperimentConfig:
    """Grid = every n crossed with every d (``n-1`` allowed), times every lambda."""

    n: list = field(default_factory=lambda: [10_000])
    d: list = field(default_factory=lambda: ["3"])
    lambdas: list = field(default_factory=lambda: [0.0])
    replicates: int = 10
    seed: int = 0
    sampler: str = "auto"
    burn_in: int | None = None
    A: list = field(default_factory=lambda: [4.0, 100.0])
    diameter: bool = False
    mixing: bool = False
    mixing_estimate: bool = False
    exact_cap: int = EXACT_CAP
    phase: bool = False
    phase_A: float = 1e4
    out: str | None = None

    KEYS = {
        "n": lambda v: _list(v, _number), "d": lambda v: _list(v, str),
        "lambda": lambda v: _list(v, float), "lambdas": lambda v: _list(v, float),
        "replicates": _number, "seed": _number, "sampler": str,
        "burn_in": lambda v: None if str(v).lower() in ("", "none") else _number(v),
        "A": lambda v: _list(v, float), "diameter": _bool, "mixing": _bool,
        "mixing_estimate": _bool, "exact_cap": _number, "phase": _bool,
        "phase_A": float, "out": str,
    }

    def __post_init__(self):
        self.d = [str(x) for x in self.d]
        self.validate()

    @classmethod
    def from_mapping(cls, m: dict) -> "ExperimentConfig":
        kw = {}
        for k, v in m.items():
            if k not in cls.KEYS:
                raise PreconditionError(f"unknown config key {k!r}")
            kw["lambdas" if k == "lambda" else k] = cls.KEYS[k](v)
        return cls(**kw)

    def validate(self) -> None:
        if self.replicates < 1:
            raise PreconditionError("replicates must be >= 1")
        if self.sampler not in SAMPLERS:
            raise PreconditionError(f"sampler must be one of {SAMPLERS}")
        if not self.n or not self.d or not self.lambdas:
            raise PreconditionError("grid is empty")
        for n, d in self.points():
            if d < 3:
                raise PreconditionError(f"need d >= 3 (got n={n}, d={d})")
            _check_params(n, d)

    def points(self) -> list:
        return [(int(n), _parse_d(d, int(n))) for n in self.n for d in self.d]

    def as_dict(self) -> dict:
        out = asdict(self)
        out["grid"] = [list(p) for p in self.points()]
        return out


def parse_config(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; lists are comma-separated."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PreconditionError(f"config line {lineno}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path) -> dict:
    return parse_config(Path(path).read_text())


# --------------------------------------------------------------------------
# rows


@dataclass
class ResultRow:
    n: int
    d: int
    lam: float
    p: float
    replicate: int
    seed: int
    stream: str
    sampler: str
    L1: int | None = None
    L2: int | None = None
    n_components: int | None = None
    diam: int | None = None
    t_mix: int | None = None
    mix_exact: bool | None = None
    tau_h: int | None = None
    tau_S1: int | None = None
    tau_1: int | None = None
    tau_0: int | None = None
    tau_S2: int | None = None
    tau_2: int | None = None
    T1: float | None = None
    T2: float | None = None
    E_holds: bool | None = None
    S_gain: int | None = None
    error: str | None = None


ROW_COLUMNS = [f.name for f in fields(ResultRow)]


@dataclass
class _Task:
    n: int
    d: int
    rep: int
    lambdas: tuple
    seed: int
    sampler: str
    burn_in: int | None
    diameter: bool
    mixing: bool
    mixing_estimate: bool
    exact_cap: int
    phase: bool
    phase_A: float


def _largest_metrics(out, row: ResultRow, task: _Task) -> None:
    sg = component_subgraph(out, out.largest(1)[0])
    if task.diameter:
        row.diam = diameter(sg)
    if task.mixing:
        row.t_mix, row.mix_exact = mixing_time(sg, exact_cap=task.exact_cap,
                                               estimate=task.mixing_estimate)



def rebuild_largest(row: ResultRow, sampler: str = "auto", burn_in: int | None = None):
    """Recreate the largest cluster of a result row from its seed streams."""
    n, d, rep = row.n, row.d, row.replicate
    g, _ = sample_regular(n, d, replicate_rng(row.seed, n, d, rep, PURPOSE_GRAPH), sampler,
                          burn_in=burn_in)
    key = draw_key(replicate_rng(row.seed, n, d, rep, PURPOSE_KEY))
    out = percolate(g, row.p, key=key)
    return component_subgraph(out, out.largest(1)[0])


def certified_median(values, pending, exceeds) -> tuple:
    """Median over ``values`` plus ``pending`` items whose values are unknown.

    Unknown values are taken as larger than every known one.  The median is
    certified when ``exceeds(item, m)`` confirms that for each pending item,
    with ``m`` the upper of the two middle order statistics.  Returns
    ``(median, certified)``; the median is NaN if half the items are unknown.
    """
    xs = sorted(values)
    pending = list(pending)
    total = len(xs) + len(pending)
    if total == 0 or total // 2 >= len(xs):
        return math.nan, False
    m_hi = xs[total // 2]
    med = 0.5 * (xs[(total - 1) // 2] + m_hi)
    return med, all(exceeds(item, m_hi) for item in pending)

def run_replicate(task: _Task) -> tuple:
    """All lambda values for one (n, d, replicate); returns (rows, wall seconds)."""
    t0 = time.perf_counter()
    n, d = task.n, task.d
    stream = f"{n}.{d}.{task.rep}"
    rows = []
    try:
        g, method = sample_regular(n, d, replicate_rng(task.seed, n, d, task.rep, PURPOSE_GRAPH),
                                   task.sampler, burn_in=task.burn_in)
        key = draw_key(replicate_rng(task.seed, n, d, task.rep, PURPOSE_KEY))
        inp = None
        for lam in task.lambdas:
            p = critical_p(d, lam, n)
            row = ResultRow(n, d, float(lam), p, task.rep, task.seed, stream, method)
            out = percolate(g, p, key=key)
            row.L1, row.L2, row.n_components = out.L1, out.L2, out.n_components
            _largest_metrics(out, row, task)
            if task.phase and lam <= 0 and n * d <= MAX_SLOTS:
                if inp is None:
                    inp = make_input(g, replicate_rng(task.seed, n, d, task.rep, PURPOSE_PERMS))
                ph = two_phase_experiment(inp, -lam, task.phase_A, key=key)
                for k in ("tau_h", "tau_S1", "tau_1", "tau_0", "tau_S2", "tau_2",
                          "T1", "T2", "E_holds", "S_gain"):
                    setattr(row, k, getattr(ph, k))
            rows.append(row)
    except RegpercError as exc:
        # a failed grid point yields error rows and does not stop the study
        rows = [ResultRow(n, d, float(lam), math.nan, task.rep, task.seed, stream, task.sampler,
                          error=f"{type(exc).__name__}: {exc}") for lam in task.lambdas]
    return rows, time.perf_counter() - t0


def _tasks(cfg: ExperimentConfig) -> list:
    return [_Task(n, d, r, tuple(cfg.lambdas), cfg.seed, cfg.sampler, cfg.burn_in,
                  cfg.diameter, cfg.mixing, cfg.mixing_estimate, cfg.exact_cap,
                  cfg.phase, cfg.phase_A)
            for n, d in cfg.points() for r in range(cfg.replicates)]


def map_tasks(fn, tasks: list, workers: int = 1) -> list:
    """Results in task order, whatever the worker count."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=1))


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


# --------------------------------------------------------------------------
# studies


def wilson_interval(k: int, m: int, level: float = 0.95) -> tuple:
    if m == 0:
        return (0.0, 1.0)
    ci = binomtest(k, m).proportion_ci(confidence_level=level, method="wilson")
    return (float(ci.low), float(ci.high))


@dataclass
class ProportionCheck:
    """Empirical fraction against a one-sided upper bound."""

    name: str
    successes: int
    trials: int
    bound: float
    ci_lo: float = 0.0
    ci_hi: float = 1.0

    def __post_init__(self):
        # one-sided 95% upper limit = upper end of the two-sided 90% interval
        self.ci_lo, self.ci_hi = wilson_interval(self.successes, self.trials, 0.90)

    @property
    def fraction(self) -> float:
        return self.successes / self.trials if self.trials else math.nan

    @property
    def vacuous(self) -> bool:
        return self.bound >= 1.0

    @property
    def verdict(self) -> bool:
        """Point estimate within the bound (always true for a vacuous bound)."""
        return self.vacuous or self.fraction <= self.bound

    @property
    def ci_verdict(self) -> bool:
        return self.vacuous or self.ci_hi <= self.bound

    def as_row(self) -> dict:
        return {"name": self.name, "fraction": self.fraction, "successes": self.successes,
                "trials": self.trials, "bound": self.bound, "ci_lo": self.ci_lo,
                "ci_hi": self.ci_hi, "vacuous": self.vacuous, "verdict": self.verdict,
                "ci_verdict": self.ci_verdict}


def _quartiles(x) -> dict:
    x = np.asarray([v for v in x if v is not None], float)
    if len(x) == 0:
        return {"median": None, "q1": None, "q3": None, "count": 0}
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
    return {"median": float(med), "q1": float(q1), "q3": float(q3), "count": int(len(x))}


def summarize(rows: list, A_values=(4.0, 100.0)) -> list:
    """Per (n, d, lambda): quartiles of the rescaled observables and tail fractions."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.n, r.d, r.lam), []).append(r)
    out = []
    for (n, d, lam), rs in groups.items():
        ok = [r for r in rs if r.error is None]
        s = {"n": n, "d": d, "lam": lam, "replicates": len(rs), "errors": len(rs) - len(ok)}
        s["L1_scaled"] = _quartiles(r.L1 * n ** (-2 / 3) for r in ok)
        s["diam_scaled"] = _quartiles(None if r.diam is None else r.diam * n ** (-1 / 3) for r in ok)
        s["tmix_scaled"] = _quartiles(None if r.t_mix is None else r.t_mix / n for r in ok)
        s["tails"] = [tail_from_L1([r.L1 for r in ok], n, A).as_row() for A in A_values] if ok else []
        out.append(s)
    return out


@dataclass
class StudyResult:
    config: ExperimentConfig
    rows: list
    summary: list
    timings: list
    started: str
    finished: str

    def manifest(self, workers: int) -> dict:
        return {"config": self.config.as_dict(), "version": version_string(),
                "seed": self.config.seed, "workers": workers, "started": self.started,
                "finished": self.finished, "task_wall_seconds": self.timings,
                "summary": self.summary}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def scaling_study(cfg: ExperimentConfig, workers: int = 1) -> StudyResult:
    started = _now()
    tasks = _tasks(cfg)
    results = map_tasks(run_replicate, tasks, workers)
    by_task = [rows for rows, _ in results]
    rows = []
    # order by (grid point, lambda, replicate)
    R = cfg.replicates
    for gi in range(len(cfg.points())):
        block = by_task[gi * R:(gi + 1) * R]
        for li in range(len(cfg.lambdas)):
            rows.extend(b[li] for b in block)
    timings = [round(t, 3) for _, t in results]
    return StudyResult(cfg, rows, summarize(rows, cfg.A), timings, started, _now())


def tail_from_L1(L1s, n: int, A: float) -> ProportionCheck:
    lo, hi = n ** (2 / 3) / A, A * n ** (2 / 3)
    outside = sum(1 for x in L1s if not lo <= x <= hi)
    return ProportionCheck(f"P[L1 outside [n^(2/3)/A, A n^(2/3)]] (A={A:g})",
                           outside, len(L1s), 20 * A ** -0.5)


def tail_estimate(n: int, d: int, lam: float, A: float, replicates: int, seed: int,
                  workers: int = 1, sampler: str = "auto") -> ProportionCheck:
    if A < 1:
        raise PreconditionError("A must be >= 1")
    cfg = ExperimentConfig(n=[n], d=[str(d)], lambdas=[lam], replicates=replicates,
                           seed=seed, sampler=sampler, A=[A])
    res = scaling_study(cfg, workers)
    return tail_from_L1([r.L1 for r in res.rows if r.error is None], n, A)


@dataclass
class PhaseStats:
    n: int
    d: int
    mu: float
    A: float
    rows: list
    checks: list

    @property
    def ok(self) -> bool:
        return all(c.verdict for c in self.checks)


def phase_statistics(n: int, d: int, mu: float, A: float, replicates: int, seed: int,
                     workers: int = 1, sampler: str = "auto") -> PhaseStats:
    """The four phase probabilities against 12, 13, 5 and 19 times A^(-1/2)."""
    if mu < 0:
        raise PreconditionError("mu must be >= 0")
    cfg = ExperimentConfig(n=[n], d=[str(d)], lambdas=[-mu], replicates=replicates, seed=seed,
                           sampler=sampler, phase=True, phase_A=A)
    rows = scaling_study(cfg, workers).rows
    ok = [r for r in rows if r.error is None]
    m = len(ok)
    r12 = A ** -0.5
    hitT1 = sum(r.tau_1 >= math.ceil(r.T1 - 1e-9) for r in ok)
    notE = sum(not r.E_holds for r in ok)
    withE = [r for r in ok if r.E_holds]
    short = sum(r.tau_2 < math.ceil(r.T2 - 1e-9) for r in withE)
    small = sum(r.L1 < n ** (2 / 3) / A for r in ok)
    checks = [
        ProportionCheck("P[tau_1 = T_1]", hitT1, m, 12 * r12),
        ProportionCheck("P[not E]", notE, m, 13 * r12),
        ProportionCheck("P[tau_2 < T_2 | E]", short, len(withE), 5 * r12),
        ProportionCheck("P[L1 < n^(2/3)/A]", small, m, 19 * r12),
    ]
    return PhaseStats(n, d, mu, A, rows, checks)


@dataclass
class _TrajTask:
    n: int
    d: int
    mu: float
    rep: int
    seed: int
    t_max: int
    sampler: str


def _trajectory(task: _TrajTask):
    n, d = task.n, task.d
    g, _ = sample_regular(n, d, replicate_rng(task.seed, n, d, task.rep, PURPOSE_GRAPH), task.sampler)
    inp = make_input(g, replicate_rng(task.seed, n, d, task.rep, PURPOSE_PERMS))
    key = draw_key(replicate_rng(task.seed, n, d, task.rep, PURPOSE_KEY))
    return run(inp, subcritical_p(d, task.mu, n), t_max=task.t_max, key=key)


def exploration_trajectories(n: int, d: int, mu: float, replicates: int, seed: int,
                             t_max: int | None = None, workers: int = 1,
                             sampler: str = "auto") -> list:
    """Independent explorations at p = (1 - mu n^(-1/3))/(d-1), one graph each.

    The default horizon covers both the moment window t <= d n^(2/3) and the
    first phase T1 = 5 d n^(2/3) / 6.
    """
    if t_max is None:
        t_max = math.ceil(d * n ** (2 / 3)) + 1
    tasks = [_TrajTask(n, d, mu, r, seed, int(t_max), sampler) for r in range(replicates)]
    return map_tasks(_trajectory, tasks, workers)


# --------------------------------------------------------------------------
# persistence


def version_string() -> str:
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                              capture_output=True, text=True, timeout=5,
                              cwd=Path(__file__).resolve().parent)
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{__version__}+{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _row_dict(r) -> dict:
    if isinstance(r, dict):
        return r
    if hasattr(r, "as_row"):
        return r.as_row()
    if isinstance(r, ResultRow):
        return {f: getattr(r, f) for f in ROW_COLUMNS}
    return asdict(r)


def _json_value(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    if isinstance(v, np.generic):
        return v.item()
    return v


@contextmanager
def _atomic_open(path):
    """Open a temporary sibling of ``path``; rename it into place on success."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror or exc}") from exc
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            yield fh
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror or exc}") from exc
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonl_line(r) -> str:
    return json.dumps({k: _json_value(v) for k, v in _row_dict(r).items()}) + "\n"


def _csv_cells(r, columns) -> list:
    d = _row_dict(r)
    return ["" if d.get(c) is None else _json_value(d.get(c)) for c in columns]


def write_rows_jsonl(rows, fh) -> None:
    for r in rows:
        fh.write(_jsonl_line(r))


def write_rows_csv(rows, fh, columns=None) -> None:
    it = iter(rows)
    first = next(it, None)
    if columns is None:
        columns = list(_row_dict(first)) if first is not None else ROW_COLUMNS
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    if first is not None:
        w.writerow(_csv_cells(first, columns))
    for r in it:
        w.writerow(_csv_cells(r, columns))


def format_rows(rows, fmt: str, columns=None) -> str:
    buf = io.StringIO()
    if fmt == "csv":
        write_rows_csv(rows, buf, columns)
    else:
        write_rows_jsonl(rows, buf)
    return buf.getvalue()


def persist(rows, manifest: dict, path, columns=None) -> dict:
    """Write rows.jsonl, rows.csv and manifest.json under directory ``path``.

    ``rows`` may be any iterable (a generator included); it is consumed once,
    each row going to both row files before the next is drawn.  Files appear
    only when complete (temporary file + rename).
    """
    path = Path(path)
    files = {"rows_jsonl": path / "rows.jsonl", "rows_csv": path / "rows.csv",
             "manifest": path / "manifest.json"}
    it = iter(rows)
    first = next(it, None)
    if columns is None:
        columns = list(_row_dict(first)) if first is not None else ROW_COLUMNS
    count = 0
    with _atomic_open(files["rows_jsonl"]) as fj, _atomic_open(files["rows_csv"]) as fc:
        w = csv.writer(fc, lineterminator="\n")
        w.writerow(columns)
        for r in _chain(first, it):
            fj.write(_jsonl_line(r))
            w.writerow(_csv_cells(r, columns))
            count += 1
    manifest = dict(manifest, rows=count)
    with _atomic_open(files["manifest"]) as fm:
        json.dump(manifest, fm, indent=2, sort_keys=True, default=str)
    return {k: str(v) for k, v in files.items()}


def _chain(first, it):
    if first is not None:
        yield first
    yield from it
