import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from regperc.errors import PreconditionError
from regperc.graph import RegularGraph, complete_graph
from regperc.percolation import (
    critical_p,
    edge_retained,
    edge_uniform,
    percolate,
    retention_threshold,
)
from regperc.sampler import sample_uniform_rejection


def _partition(labels):
    groups = {}
    for v, c in enumerate(np.asarray(labels).tolist()):
        groups.setdefault(c, set()).add(v)
    return sorted(map(frozenset, groups.values()), key=min)


def _oracle_partition(n, edges):
    e = np.asarray(edges).reshape(-1, 2)
    a = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    return _partition(connected_components(a, directed=False)[1])


def test_p_zero_singletons(rng):
    g = sample_uniform_rejection(50, 3, rng)
    out = percolate(g, 0.0, rng)
    assert out.L1 == 1 and out.n_components == 50 and out.n_retained == 0


def test_p_one_connected(rng):
    g = RegularGraph.circulant(40, 4)
    out = percolate(g, 1.0, rng)
    assert out.L1 == 40 and out.n_retained == g.m and out.L2 == 0


def test_k4_binomial_mean():
    g = complete_graph(4)
    draws = 100_000
    counts = np.array([percolate(g, 0.5, key=k).n_retained for k in range(draws)])
    sigma = math.sqrt(6 * 0.25 / draws)
    assert abs(counts.mean() - 3.0) < 3 * sigma


def test_mean_retained_matches_pnd_over_2(rng):
    g = sample_uniform_rejection(300, 3, rng)
    p = 0.37
    reps = 400
    total = sum(percolate(g, p, rng).n_retained for _ in range(reps))
    mean = total / reps
    sigma = math.sqrt(g.m * p * (1 - p) / reps)
    assert abs(mean - p * g.m) < 3 * sigma


def test_critical_p_examples():
    assert critical_p(3, 0.0, 12345) == 0.5
    assert critical_p(2, 0.0, 10) == 1.0
    assert critical_p(3, -1.0, 10**6) == pytest.approx(0.495)
    assert critical_p(3, 10.0, 8) == 1.0
    with pytest.raises(PreconditionError):
        critical_p(3, -10.0, 8)
    with pytest.raises(PreconditionError):
        critical_p(1, 0.0, 8)


def test_invalid_p():
    with pytest.raises(PreconditionError):
        percolate(complete_graph(4), 1.5, key=1)


@given(seed=st.integers(0, 2**32 - 1), p=st.floats(0, 1))
def test_components_are_transitive_closure(seed, p):
    r = np.random.default_rng(seed)
    g = sample_uniform_rejection(60, 3, r)
    out = percolate(g, p, r)
    assert out.component_sizes.sum() == 60
    assert _partition(out.component_id) == _oracle_partition(60, out.retained_edges)
    assert np.array_equal(out.retained_edges, g.edges[out.retained])
    assert list(out.component_sizes) == sorted(out.component_sizes, reverse=True)


@given(seed=st.integers(0, 2**32 - 1))
def test_relabelling_invariance(seed):
    r = np.random.default_rng(seed)
    g = sample_uniform_rejection(40, 3, r)
    out = percolate(g, 0.5, r)
    pi = r.permutation(40)
    kept = pi[out.retained_edges]
    moved = _oracle_partition(40, kept)
    expected = sorted((frozenset(int(pi[v]) for v in block) for block in _partition(out.component_id)), key=min)
    assert moved == expected
    # percolating the relabelled graph at p = 1 gives the relabelled components
    h = RegularGraph.from_edges(40, np.sort(pi[g.edges], axis=1), 3)
    whole = _partition(percolate(g, 1.0, key=0).component_id)
    assert _partition(percolate(h, 1.0, key=0).component_id) == sorted(
        (frozenset(int(pi[v]) for v in block) for block in whole), key=min)


def test_indicator_is_pure_function_of_key_and_edge():
    thr = retention_threshold(0.3)
    key = 987654321
    for u, v in [(0, 1), (5, 9), (10, 2)]:
        a, b = min(u, v), max(u, v)
        assert edge_retained(np.uint64(key), a, b, 20, thr) == edge_retained(np.uint64(key), a, b, 20, thr)
        assert 0.0 <= edge_uniform(key, a, b, 20) < 1.0
    us = np.array([edge_uniform(key, 0, v, 5000) for v in range(1, 5000)])
    assert abs(us.mean() - 0.5) < 4 * math.sqrt(1 / 12 / len(us))


def test_threshold_extremes():
    assert retention_threshold(0.0) == 0
    assert retention_threshold(1.0) == 2**53


@pytest.mark.parametrize("n", [5, 12, 40])
def test_complete_graph_implicit_equals_explicit(n):
    implicit = complete_graph(n)
    explicit = RegularGraph.from_edges(n, implicit.edges, n - 1)
    for key in range(5):
        a = percolate(implicit, 0.3, key=key)
        b = percolate(explicit, 0.3, key=key)
        assert np.array_equal(np.sort(a.retained_edges, axis=0), np.sort(b.retained_edges, axis=0))
        assert np.array_equal(a.component_id, b.component_id)


def test_size_histogram_and_largest(rng):
    g = sample_uniform_rejection(100, 3, rng)
    out = percolate(g, 0.5, rng)
    hist = out.size_histogram()
    assert sum(s * c for s, c in hist.items()) == 100
    c1 = out.largest(1)[0]
    assert len(out.members(c1)) == out.L1
