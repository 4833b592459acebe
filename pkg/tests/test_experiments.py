import json
import math
import os
import tracemalloc

import numpy as np
import pytest

from regperc import experiments
from regperc.errors import AttemptsExhaustedError, ParityError, PreconditionError
from regperc.experiments import (
    ROW_COLUMNS,
    ExperimentConfig,
    ProportionCheck,
    ResultRow,
    _Task,
    certified_median,
    parse_config,
    persist,
    phase_statistics,
    rebuild_largest,
    replicate_rng,
    run_replicate,
    scaling_study,
    tail_from_L1,
    wilson_interval,
)


def _rows_bytes(rows):
    return experiments.format_rows(rows, "jsonl")


def test_parse_config():
    text = """
    # a comment
    n = 1000, 2000
    d = 3, n-1
    lambda = -1, 0   # trailing comment
    replicates = 4
    seed = 9
    diameter = true
    """
    m = parse_config(text)
    cfg = ExperimentConfig.from_mapping(m)
    assert cfg.n == [1000, 2000] and cfg.lambdas == [-1.0, 0.0]
    assert cfg.points() == [(1000, 3), (1000, 999), (2000, 3), (2000, 1999)]
    assert cfg.replicates == 4 and cfg.seed == 9 and cfg.diameter
    assert cfg.as_dict()["grid"][1] == [1000, 999]
    with pytest.raises(PreconditionError):
        parse_config("n 1000")


@pytest.mark.parametrize("mapping, err", [
    ({"n": "101", "d": "3"}, ParityError),
    ({"n": "100", "d": "2"}, PreconditionError),
    ({"replicates": "0"}, PreconditionError),
    ({"colour": "red"}, PreconditionError),
    ({"sampler": "magic"}, PreconditionError),
    ({"diameter": "maybe"}, PreconditionError),
])
def test_invalid_configs(mapping, err):
    with pytest.raises(err):
        ExperimentConfig.from_mapping(mapping)


def test_scientific_notation():
    cfg = ExperimentConfig.from_mapping({"n": "1e4", "replicates": "1e1"})
    assert cfg.n == [10_000] and cfg.replicates == 10


def test_replicate_streams_independent_of_lambda_and_distinct():
    a = replicate_rng(1, 100, 3, 0, 0).random(4)
    b = replicate_rng(1, 100, 3, 0, 0).random(4)
    c = replicate_rng(1, 100, 3, 1, 0).random(4)
    d = replicate_rng(1, 100, 3, 0, 2).random(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c) and not np.array_equal(a, d)


def _small_cfg(**kw):
    base = dict(n=[1000], d=["3", "4"], lambdas=[-3.0, -1.0, 0.0, 1.0, 3.0], replicates=4, seed=21,
                diameter=True, mixing=True, phase=True, phase_A=16.0)
    base.update(kw)
    return ExperimentConfig(**base)


def test_scaling_rows_and_order():
    res = scaling_study(_small_cfg())
    assert len(res.rows) == 2 * 5 * 4
    keys = [(r.d, r.lam, r.replicate) for r in res.rows]
    assert keys == sorted(keys)
    for r in res.rows:
        assert r.error is None and r.L1 >= r.L2 and r.diam is not None
        assert r.p == pytest.approx((1 + r.lam * 1000 ** (-1 / 3)) / (r.d - 1))
        if r.lam <= 0:
            assert r.tau_2 is not None and r.E_holds in (True, False)
        else:
            assert r.tau_2 is None
    assert len(res.summary) == 10
    assert {"L1_scaled", "diam_scaled", "tmix_scaled", "tails"} <= set(res.summary[0])


def test_l1_pathwise_monotone_in_lambda():
    res = scaling_study(_small_cfg(diameter=False, mixing=False, phase=False, replicates=6))
    by = {}
    for r in res.rows:
        by.setdefault((r.d, r.replicate), []).append((r.lam, r.L1))
    for seq in by.values():
        L1s = [x for _, x in sorted(seq)]
        assert L1s == sorted(L1s)
    for d in (3, 4):
        med = {lam: np.median([r.L1 for r in res.rows if r.d == d and r.lam == lam]) for lam in (-3.0, 0.0)}
        assert med[-3.0] < med[0.0]


def test_complete_graph_point():
    cfg = ExperimentConfig(n=[300], d=["n-1"], lambdas=[0.0], replicates=3, seed=2, phase=True)
    res = scaling_study(cfg)
    assert all(r.sampler == "complete" and r.d == 299 for r in res.rows)
    assert all(r.p == pytest.approx(1 / 298) for r in res.rows)


def test_results_independent_of_workers():
    cfg = _small_cfg(replicates=3, mixing=False)
    one = _rows_bytes(scaling_study(cfg, workers=1).rows)
    two = _rows_bytes(scaling_study(cfg, workers=2).rows)
    assert one == two


def test_failed_grid_point_yields_error_rows(monkeypatch):
    def boom(*a, **k):
        raise AttemptsExhaustedError("no luck")
    monkeypatch.setattr(experiments, "sample_regular", boom)
    rows, _ = run_replicate(_Task(100, 3, 0, (0.0, 1.0), 1, "auto", None, False, False,
                                  False, 5000, False, 1e4))
    assert len(rows) == 2 and all(r.error.startswith("AttemptsExhaustedError") for r in rows)
    assert all(r.L1 is None for r in rows)


def test_mixing_field_null_above_cap():
    cfg = ExperimentConfig(n=[3000], d=["3"], lambdas=[3.0], replicates=2, seed=4, mixing=True, exact_cap=5)
    for r in scaling_study(cfg).rows:
        assert r.t_mix is None and r.mix_exact is False


def test_wilson_and_proportion_check():
    lo, hi = wilson_interval(0, 100, 0.90)
    assert lo == 0.0 and 0 < hi < 0.03
    c = ProportionCheck("x", 5, 100, 0.12)
    assert c.verdict and c.ci_verdict and not c.vacuous
    assert ProportionCheck("x", 20, 100, 0.12).verdict is False
    v = ProportionCheck("x", 100, 100, 2.0)
    assert v.vacuous and v.verdict and v.ci_verdict


def test_tail_vacuous_flag():
    n = 10_000
    check = tail_from_L1([1, int(n ** (2 / 3)), n], n, 100.0)
    assert check.bound == pytest.approx(2.0) and check.vacuous and check.verdict
    assert check.successes == 1          # only L1 = 1 falls outside at A = 100
    assert tail_from_L1([1], n, 4.0).vacuous          # 20/2 = 10


def test_phase_statistics_vacuous_small_A():
    st = phase_statistics(3000, 3, 0.0, 16.0, 4, seed=1)
    assert len(st.checks) == 4
    assert all(c.vacuous for c in st.checks)   # 12/4 >= 1 and so on
    assert st.ok
    assert all(r.tau_1 is not None for r in st.rows)


def test_persist_files_and_rerun(tmp_path):
    cfg = _small_cfg(replicates=2, mixing=False, d=["3"])
    res = scaling_study(cfg)
    a = persist(res.rows, res.manifest(1), tmp_path / "a")
    res2 = scaling_study(cfg)
    b = persist(res2.rows, res2.manifest(1), tmp_path / "b")
    assert open(a["rows_jsonl"], "rb").read() == open(b["rows_jsonl"], "rb").read()
    assert open(a["rows_csv"], "rb").read() == open(b["rows_csv"], "rb").read()
    man = json.load(open(a["manifest"]))
    assert man["seed"] == 21 and man["rows"] == len(res.rows)
    assert {"config", "version", "started", "finished", "workers", "task_wall_seconds"} <= set(man)
    first = json.loads(open(a["rows_jsonl"]).readline())
    assert list(first) == ROW_COLUMNS
    assert open(a["rows_csv"]).readline().strip() == ",".join(ROW_COLUMNS)


def test_persist_empty(tmp_path):
    files = persist([], {"seed": 0}, tmp_path)
    assert open(files["rows_jsonl"]).read() == ""
    assert open(files["rows_csv"]).read().strip() == ",".join(ROW_COLUMNS)
    assert json.load(open(files["manifest"]))["rows"] == 0


def test_persist_streams_large_input(tmp_path):
    def gen():
        for i in range(100_000):
            yield ResultRow(1000, 3, 0.0, 0.5, i, 1, f"1000.3.{i}", "rejection", L1=i % 97)

    tracemalloc.start()
    files = persist(gen(), {"seed": 1}, tmp_path)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert peak < 5_000_000
    with open(files["rows_jsonl"]) as fh:
        assert sum(1 for _ in fh) == 100_000
    assert json.load(open(files["manifest"]))["rows"] == 100_000


def test_persist_atomic_on_failure(tmp_path):
    def gen():
        yield ResultRow(10, 3, 0.0, 0.5, 0, 1, "s", "rejection")
        raise RuntimeError("interrupted")

    with pytest.raises(RuntimeError):
        persist(gen(), {}, tmp_path / "out")
    left = os.listdir(tmp_path / "out")
    assert left == []


def test_persist_io_error_has_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        persist([], {}, blocker / "sub")


def test_nan_written_as_null():
    line = experiments._jsonl_line(ResultRow(10, 3, 0.0, math.nan, 0, 1, "s", "x"))
    assert json.loads(line)["p"] is None


def test_certified_median():
    never = lambda item, m: False
    always = lambda item, m: True
    assert certified_median([1, 2, 3], [], never) == (2.0, True)
    assert certified_median([1, 2, 3, 4], [], never) == (2.5, True)
    # unknowns are taken to be the largest; the median sits on known values
    assert certified_median([1, 2, 3], ["a"], always) == (2.5, True)
    assert certified_median([1, 2, 3], ["a"], never) == (2.5, False)
    seen = []
    certified_median([5, 1, 9, 3], ["a", "b"], lambda item, m: seen.append((item, m)) or True)
    assert seen == [("a", 9), ("b", 9)]
    assert math.isnan(certified_median([1], ["a", "b"], always)[0])


def test_rebuild_largest_reproduces_rows():
    cfg = ExperimentConfig(n=[3000], d=["3"], lambdas=[0.0, 2.0], replicates=2, seed=9, diameter=True)
    for r in scaling_study(cfg).rows:
        sg = rebuild_largest(r)
        assert sg.size == r.L1
        assert experiments.diameter(sg) == r.diam
