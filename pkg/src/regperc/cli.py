"""Command-line entry point: ``regperc <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 precondition or parity error,
3 verification failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import difflib
import io
import json
import math
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .errors import PreconditionError, RegpercError
from .experiments import (
    ExperimentConfig,
    default_workers,
    exploration_trajectories,
    format_rows,
    load_config,
    persist,
    phase_statistics,
    scaling_study,
    version_string,
)
from .exploration import make_input, run
from .graph import read_edge_list, write_edge_list
from .lemmas import (
    exact_edge_probability,
    frontier_statistics,
    growth_check,
    switching_suite,
)
from .metrics import EPS, EXACT_CAP, largest_components, summarize_component
from .percolation import critical_p, draw_key, percolate
from .sampler import SAMPLERS, enumerate_regular, sample_regular

EXIT_OK, EXIT_USAGE, EXIT_PRECONDITION, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """Raises instead of exiting, and suggests the closest flag for typos."""

    def error(self, message):
        if "unrecognized arguments:" in message:
            known = [o for a in self._actions for o in a.option_strings]
            for sub in self._subparsers._group_actions if self._subparsers else ():
                for p in sub.choices.values():
                    known += [o for a in p._actions for o in a.option_strings]
            bad = message.split("unrecognized arguments:", 1)[1].split()
            hints = []
            for b in bad:
                m = difflib.get_close_matches(b.split("=")[0], known, n=1)
                if m:
                    hints.append(f"{b} -> did you mean {m[0]}?")
            if hints:
                message += " (" + "; ".join(hints) + ")"
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("global")
    g.add_argument("--seed", type=int, default=None,
                   help="master seed (default: fresh entropy, printed to stderr)")
    g.add_argument("--threads", type=int, default=None,
                   help=f"worker processes (default: available CPUs = {default_workers()})")
    g.add_argument("--out", default=None, help="output file (directory for scaling/phases); default stdout")
    g.add_argument("--format", choices=("csv", "jsonl"), default="jsonl", help="row format (default jsonl)")
    g.add_argument("--config", default=None, help="flat key=value file; explicit flags override it")


def _graph_args(p, need_d=True) -> None:
    g = p.add_argument_group("graph")
    g.add_argument("--n", type=int, default=None, help="vertex count")
    g.add_argument("--d", type=int, default=None, help="degree (n-1 gives the complete graph)")
    g.add_argument("--graph", default=None, help="read the graph from an edge-list file instead of sampling")
    g.add_argument("--sampler", choices=SAMPLERS, default="auto", help="sampling method (default auto)")
    g.add_argument("--burn-in", type=int, default=None, help="switching-chain proposals (default 50nd)")


def _p_args(p) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--p", type=float, default=None, help="retention probability")
    g.add_argument("--lam", type=float, default=None,
                   help="window parameter: p = (1 + lam n^(-1/3))/(d-1) (default 0)")


def build_parser() -> Parser:
    top = Parser(prog="regperc", description="Critical bond percolation on random d-regular graphs.")
    top.add_argument("--version", action="version", version=f"regperc {__version__}")
    sub = top.add_subparsers(dest="command", parser_class=Parser, metavar="command")

    p = sub.add_parser("sample", help="sample a random d-regular graph (edge list)")
    _graph_args(p)
    p.add_argument("--max-attempts", type=int, default=100_000, help="rejection budget (default 100000)")
    _common(p)

    p = sub.add_parser("percolate", help="percolate a graph; component summary")
    _graph_args(p)
    _p_args(p)
    p.add_argument("--edges", action="store_true", help="include the retained edge list")
    _common(p)

    p = sub.add_parser("explore", help="run the exploration process; trajectory dump")
    _graph_args(p)
    _p_args(p)
    p.add_argument("--t-max", type=int, default=None, help="step cap (default: until exhausted)")
    p.add_argument("--every", type=int, default=1, help="keep every k-th step plus fresh steps (default 1)")
    p.add_argument("--identity", action="store_true", help="identity permutations (test hook)")
    _common(p)

    p = sub.add_parser("metrics", help="largest-component summaries")
    _graph_args(p)
    _p_args(p)
    p.add_argument("--k", type=int, default=1, help="components per replicate (default 1)")
    p.add_argument("--replicates", type=int, default=1, help="independent graphs (default 1)")
    p.add_argument("--no-diameter", action="store_true", help="skip the diameter")
    p.add_argument("--no-mixing", action="store_true", help="skip the mixing time")
    p.add_argument("--eps", type=float, default=EPS, help=f"TV threshold (default {EPS})")
    p.add_argument("--exact-cap", type=int, default=EXACT_CAP, help=f"exact mixing size cap (default {EXACT_CAP})")
    p.add_argument("--estimate", action="store_true", help="32-start estimate above the cap")
    _common(p)

    p = sub.add_parser("verify", help="lemma verification suites; pass/fail table")
    p.add_argument("--suite", choices=("switchings", "frontier", "growth", "edge-probability", "all"),
                   default="all", help="which checks (default all)")
    p.add_argument("--n", type=int, default=200, help="vertex count (default 200)")
    p.add_argument("--d", type=int, nargs="+", default=[3], help="degrees (default 3)")
    p.add_argument("--trials", type=int, default=100, help="states / trajectories (default 100)")
    p.add_argument("--mu", type=float, default=0.0, help="p = (1 - mu n^(-1/3))/(d-1) (default 0)")
    p.add_argument("--delta", type=float, default=0.1, help="growth slack (default 0.1)")
    p.add_argument("--sampler", choices=SAMPLERS, default="auto", help="sampling method (default auto)")
    _common(p)

    p = sub.add_parser("scaling", help="replicated scaling study")
    p.add_argument("--n", default=None, help="comma-separated n values")
    p.add_argument("--d", default=None, help="comma-separated d values (n-1 allowed)")
    p.add_argument("--lam", dest="lambdas", default=None, help="comma-separated lambda values")
    p.add_argument("--replicates", default=None, help="replicates per grid point")
    p.add_argument("--A", default=None, help="comma-separated A values for tail fractions")
    p.add_argument("--sampler", choices=SAMPLERS, default=None, help="sampling method")
    p.add_argument("--burn-in", dest="burn_in", default=None, help="switching-chain proposals")
    p.add_argument("--diameter", action="store_const", const="true", default=None, help="measure diam(C1)")
    p.add_argument("--mixing", action="store_const", const="true", default=None, help="measure t_mix(C1)")
    p.add_argument("--mixing-estimate", dest="mixing_estimate", action="store_const", const="true",
                   default=None, help="estimate t_mix above the exact cap")
    p.add_argument("--exact-cap", dest="exact_cap", default=None, help="exact mixing size cap")
    p.add_argument("--phase", action="store_const", const="true", default=None,
                   help="two-phase exploration for lambda <= 0")
    p.add_argument("--phase-A", dest="phase_A", default=None, help="A of the phase experiment")
    _common(p)

    p = sub.add_parser("phases", help="phase statistics against their bounds")
    p.add_argument("--n", type=int, default=10**6, help="vertex count (default 1e6)")
    p.add_argument("--d", type=int, default=3, help="degree (default 3)")
    p.add_argument("--mu", type=float, default=0.0, help="mu >= 0 (default 0)")
    p.add_argument("--A", type=float, default=1e4, help="scale parameter (default 1e4)")
    p.add_argument("--replicates", type=int, default=100, help="replicates (default 100)")
    p.add_argument("--sampler", choices=SAMPLERS, default="auto", help="sampling method (default auto)")
    _common(p)

    p = sub.add_parser("enumerate", help="all labelled d-regular graphs on n <= 8 vertices")
    p.add_argument("--n", type=int, required=True, help="vertex count")
    p.add_argument("--d", type=int, required=True, help="degree")
    p.add_argument("--method", choices=("backtrack", "pairing"), default="backtrack",
                   help="enumeration strategy (default backtrack)")
    p.add_argument("--count", action="store_true", help="print only the number of graphs")
    _common(p)
    return top


# --------------------------------------------------------------------------
# helpers


def _seed(args) -> int:
    if args.seed is None:
        args.seed = int(np.random.SeedSequence().entropy % (1 << 63))
        print(f"seed: {args.seed}", file=sys.stderr)
    return args.seed


def _threads(args) -> int:
    return max(1, args.threads) if args.threads else default_workers()


@contextmanager
def _output(args):
    if args.out is None:
        yield sys.stdout
        return
    try:
        fh = open(args.out, "w", newline="")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {args.out}: {exc.strerror}") from exc
    with fh:
        yield fh


def _apply_config(args, parser) -> None:
    """Config values fill in flags that were left at their defaults."""
    if not args.config:
        return
    try:
        mapping = load_config(args.config)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read config {args.config}: {exc.strerror}") from exc
    if args.command == "scaling":
        args._config_mapping = mapping
        return
    actions = {a.dest: a for a in parser._actions}
    for k, v in mapping.items():
        dest = k.replace("-", "_")
        if dest not in actions or dest in ("help", "config"):
            raise UsageError(f"unknown config key {k!r} for {args.command}")
        if getattr(args, dest) != parser.get_default(dest):
            continue                      # explicit flag wins
        setattr(args, dest, _config_value(actions[dest], v))


def _config_value(action, v):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        return str(v).strip().lower() in ("1", "true", "yes", "on")
    conv = action.type or str
    if action.nargs in ("+", "*"):
        return [conv(x.strip()) for x in str(v).split(",") if x.strip()]
    if conv is int:
        return int(float(v)) if "e" in str(v).lower() else int(v)
    value = conv(str(v).strip())
    if action.choices is not None and value not in action.choices:
        raise UsageError(f"config value {v!r} not in {sorted(action.choices)}")
    return value


def _get_graph(args, rng):
    if args.graph:
        try:
            g = read_edge_list(args.graph)
        except OSError as exc:
            raise OSError(exc.errno, f"cannot read graph {args.graph}: {exc.strerror}") from exc
        return g, "file"
    if args.n is None or args.d is None:
        raise UsageError("give --n and --d, or --graph")
    return sample_regular(args.n, args.d, rng, args.sampler, burn_in=args.burn_in)


def _p(args, g) -> float:
    if args.p is not None:
        if not 0 <= args.p <= 1:
            raise PreconditionError(f"p must lie in [0, 1] (got {args.p})")
        return args.p
    return critical_p(g.d, args.lam or 0.0, g.n)


def _streams(seed: int, count: int = 3):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


# --------------------------------------------------------------------------
# subcommands


def cmd_sample(args) -> int:
    if args.graph:
        raise UsageError("sample does not take --graph")
    rng, = _streams(_seed(args), 1)
    if args.n is None or args.d is None:
        raise UsageError("sample needs --n and --d")
    g, method = sample_regular(args.n, args.d, rng, args.sampler, burn_in=args.burn_in,
                               max_attempts=args.max_attempts)
    print(f"sampler: {method}", file=sys.stderr)
    with _output(args) as fh:
        if args.format == "jsonl":
            fh.write(json.dumps({"n": g.n, "d": g.d, "m": g.m, "sampler": method,
                                 "edges": g.edges.tolist()}) + "\n")
        else:
            write_edge_list(g, fh)
    return EXIT_OK


def cmd_percolate(args) -> int:
    g_rng, k_rng, _ = _streams(_seed(args))
    g, method = _get_graph(args, g_rng)
    p = _p(args, g)
    out = percolate(g, p, key=draw_key(k_rng))
    row = {"n": g.n, "d": g.d, "p": p, "seed": args.seed, "sampler": method,
           "retained": out.n_retained, "L1": out.L1, "L2": out.L2,
           "n_components": out.n_components,
           "size_histogram": json.dumps(out.size_histogram()) if args.format == "csv"
           else out.size_histogram()}
    if args.edges:
        row["retained_edges"] = out.retained_edges.tolist() if args.format == "jsonl" \
            else json.dumps(out.retained_edges.tolist())
    with _output(args) as fh:
        fh.write(format_rows([row], args.format))
    return EXIT_OK


def cmd_explore(args) -> int:
    g_rng, k_rng, perm_rng = _streams(_seed(args))
    g, _ = _get_graph(args, g_rng)
    p = _p(args, g)
    inp = make_input(g, perm_rng, identity=args.identity)
    t_max = args.t_max if args.t_max is not None else g.n * g.d + g.n
    traj = run(inp, p, t_max=t_max, key=draw_key(k_rng))
    traj.meta.update({"seed": args.seed, "identity": args.identity})
    with _output(args) as fh:
        if args.format == "csv":
            traj.write_csv(fh, args.every)
        else:
            traj.write_jsonl(fh, args.every)
    return EXIT_OK


def cmd_metrics(args) -> int:
    seed = _seed(args)
    rows = []
    for rep in range(args.replicates):
        g_rng, k_rng, _ = _streams(np.random.SeedSequence(seed, spawn_key=(rep,)).generate_state(1)[0])
        g, _ = _get_graph(args, g_rng)
        out = percolate(g, _p(args, g), key=draw_key(k_rng))
        for c in largest_components(out, args.k):
            s = summarize_component(out, c.component, with_diameter=not args.no_diameter,
                                    with_mixing=not args.no_mixing, eps=args.eps,
                                    exact_cap=args.exact_cap, estimate=args.estimate)
            rows.append({"replicate": rep, **s.as_row()})
    cols = ["replicate", "component", "size", "edge_count", "diameter", "t_mix", "is_exact"]
    with _output(args) as fh:
        fh.write(format_rows(rows, args.format, cols))
    return EXIT_OK


def _rate_row(suite, n, d, check, flags, threshold=1.0, **extra) -> dict:
    flags = [f for f in flags if f is not None]
    passed = sum(bool(f) for f in flags)
    rate = passed / len(flags) if flags else math.nan
    ok = (not flags) or rate >= threshold
    return {"suite": suite, "n": n, "d": d, "check": check, "evaluated": len(flags),
            "passed": passed, "rate": rate, "required": threshold, "ok": ok, **extra}


def _verify_switchings(args, rng) -> list:
    rows = []
    for d in args.d:
        trials = switching_suite(args.n, d, args.trials, rng)
        for name in ("forward", "backward", "up", "down"):
            rows.append(_rate_row("switchings", args.n, d, name,
                                  [getattr(t, f"{name}_ok") for t in trials]))
    return rows


def _verify_frontier(args, workers) -> list:
    rows = []
    for d in args.d:
        trs = exploration_trajectories(args.n, d, args.mu, args.trials, args.seed,
                                       workers=workers, sampler=args.sampler)
        fs = frontier_statistics(trs, args.mu)
        for e in fs.estimates():
            r = e.as_row()
            rows.append({"suite": "frontier", "n": args.n, "d": d, "check": f"E[{e.name}]",
                         "evaluated": e.n_steps, "passed": None, "rate": e.mean,
                         "required": e.bound, "ok": e.verdict, "ci_lo": r["ci_lo"],
                         "ci_hi": r["ci_hi"], "side": e.side})
    return rows


def _verify_growth(args, workers) -> list:
    rows = []
    for d in args.d:
        T1 = int(math.floor(5 * d * args.n ** (2 / 3) / 6))
        trs = exploration_trajectories(args.n, d, args.mu, args.trials, args.seed,
                                       t_max=T1, workers=workers, sampler=args.sampler)
        gc = [growth_check(tr, 0, min(T1, len(tr)), args.delta) for tr in trs]
        rows.append(_rate_row("growth", args.n, d, "lower", [g.lower_ok for g in gc], 0.99))
        rows.append(_rate_row("growth", args.n, d, "upper", [g.upper_ok for g in gc], 0.99))
        rows.append(_rate_row("growth", args.n, d, "a_bound", [g.a_bound_ok for g in gc], 0.99))
    return rows


def _verify_edge_probability(args) -> list:
    from fractions import Fraction
    rows = []
    for n, d in ((4, 3), (6, 3), (8, 3), (6, 4), (7, 4)):
        p = exact_edge_probability(n, d, set(), set(), set(), 0, 1)
        rows.append({"suite": "edge-probability", "n": n, "d": d, "check": "P[01 in E] = d/(n-1)",
                     "evaluated": 1, "passed": int(p == Fraction(d, n - 1)), "rate": float(p),
                     "required": d / (n - 1), "ok": p == Fraction(d, n - 1)})
    return rows


def cmd_verify(args) -> int:
    rng = np.random.default_rng(_seed(args))
    workers = _threads(args)
    suites = ("switchings", "frontier", "growth", "edge-probability") if args.suite == "all" else (args.suite,)
    rows = []
    for s in suites:
        if s == "switchings":
            rows += _verify_switchings(args, rng)
        elif s == "frontier":
            rows += _verify_frontier(args, workers)
        elif s == "growth":
            rows += _verify_growth(args, workers)
        else:
            rows += _verify_edge_probability(args)
    cols = ["suite", "n", "d", "check", "evaluated", "passed", "rate", "required", "ok"]
    with _output(args) as fh:
        fh.write(format_rows(rows, args.format, cols if args.format == "csv" else None))
    _print_table(rows, cols)
    return EXIT_OK if all(r["ok"] for r in rows) else EXIT_VERIFY


def _print_table(rows, cols) -> None:
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.4g}"
        return "PASS" if v is True else "FAIL" if v is False else str(v)
    cells = [[fmt(r.get(c)) for c in cols] for r in rows]
    widths = [max([len(c)] + [len(x[i]) for x in cells]) for i, c in enumerate(cols)]
    print("  ".join(c.ljust(w) for c, w in zip(cols, widths)), file=sys.stderr)
    for x in cells:
        print("  ".join(v.ljust(w) for v, w in zip(x, widths)), file=sys.stderr)


def cmd_scaling(args) -> int:
    mapping = dict(getattr(args, "_config_mapping", {}))
    for k in ("n", "d", "lambdas", "replicates", "A", "sampler", "burn_in", "diameter", "mixing",
              "mixing_estimate", "exact_cap", "phase", "phase_A"):
        v = getattr(args, k)
        if v is not None:
            mapping[k] = v
    if args.seed is None and "seed" in mapping:
        args.seed = int(mapping["seed"])
    mapping["seed"] = _seed(args)
    if args.out is None and "out" in mapping:
        args.out = mapping["out"]
    mapping.pop("out", None)
    cfg = ExperimentConfig.from_mapping(mapping)
    workers = _threads(args)
    res = scaling_study(cfg, workers)
    if args.out:
        files = persist(res.rows, res.manifest(workers), args.out)
        print(json.dumps(files), file=sys.stderr)
    else:
        sys.stdout.write(format_rows(res.rows, args.format))
    for s in res.summary:
        print(json.dumps({k: s[k] for k in ("n", "d", "lam", "replicates", "errors", "L1_scaled")}),
              file=sys.stderr)
    return EXIT_OK


def cmd_phases(args) -> int:
    seed = _seed(args)
    workers = _threads(args)
    st = phase_statistics(args.n, args.d, args.mu, args.A, args.replicates, seed, workers, args.sampler)
    rows = [c.as_row() for c in st.checks]
    if args.out:
        manifest = {"command": "phases", "n": args.n, "d": args.d, "mu": args.mu, "A": args.A,
                    "replicates": args.replicates, "seed": seed, "workers": workers,
                    "version": version_string(), "checks": rows}
        persist(st.rows, manifest, args.out)
    else:
        sys.stdout.write(format_rows(rows, args.format))
    _print_table(rows, ["name", "fraction", "trials", "bound", "ci_hi", "vacuous", "verdict"])
    return EXIT_OK


def cmd_enumerate(args) -> int:
    graphs = enumerate_regular(args.n, args.d, method=args.method)
    with _output(args) as fh:
        if args.count:
            fh.write(f"{len(graphs)}\n")
        elif args.format == "jsonl":
            for i, g in enumerate(graphs):
                fh.write(json.dumps({"index": i, "n": g.n, "d": g.d, "edges": g.edges.tolist()}) + "\n")
        else:
            for i, g in enumerate(graphs):
                if i:
                    fh.write("\n")
                write_edge_list(g, fh)
    return EXIT_OK


COMMANDS = {"sample": cmd_sample, "percolate": cmd_percolate, "explore": cmd_explore,
            "metrics": cmd_metrics, "verify": cmd_verify, "scaling": cmd_scaling,
            "phases": cmd_phases, "enumerate": cmd_enumerate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        _apply_config(args, parser._subparsers._group_actions[0].choices[args.command])
        if getattr(args, "threads", None) is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except RegpercError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
