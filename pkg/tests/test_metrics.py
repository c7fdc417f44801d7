import numpy as np
import pytest
from hypothesis import given, strategies as st

from rqmoe.errors import EmptyTraceError
from rqmoe.metrics import LayerTrace, RoutingTrace, gap_matrix, lis, merge_traces


def trace_of(counts, n, k=1, origins=None, is_replica=None):
    m = len(counts) if origins is None else sum(1 for r in is_replica if not r)
    origins = origins or list(range(len(counts)))
    is_replica = is_replica or [False] * len(counts)
    return RoutingTrace([LayerTrace(origins, is_replica, m, k, n, counts)])


@pytest.mark.parametrize("counts,expected", [([2, 2, 2, 2], 1.0), ([8, 0, 0, 0], 4.0), ([5, 1, 1, 1], 2.5)])
def test_lis_examples(counts, expected):
    assert lis(trace_of(counts, 8), 0) == expected
    assert lis(trace_of(counts, 8), 0, "origin") == expected


def test_lis_empty_trace():
    with pytest.raises(EmptyTraceError):
        lis(trace_of([0, 0], 0), 0)


def test_lis_instance_vs_origin_with_replica():
    t = trace_of([3, 2, 3], 8, origins=[0, 1, 0], is_replica=[False, False, True])
    t.layers[0].n = 8
    # origins: [6, 2], m=2 -> 2*6/8 ; instances: 3 units -> 3*3/8
    assert lis(t, 0, "origin") == 1.5
    assert lis(t, 0, "instance") == 9 / 8
    assert t.layers[0].origin_counts.tolist() == [6, 2]


def test_merge_examples():
    a = trace_of([5, 1, 1, 1], 8)
    zero = trace_of([0, 0, 0, 0], 0)
    assert merge_traces(a, zero) == a
    b = trace_of([0, 3, 1, 0], 4)
    ab = merge_traces(a, b)
    assert ab.n == 12
    assert lis(ab, 0) == 4 * 5 / 12
    with pytest.raises(ValueError):
        merge_traces(a, trace_of([1, 1], 2))


counts_st = st.lists(st.integers(0, 50), min_size=2, max_size=8)


@given(counts_st, counts_st, counts_st)
def test_merge_commutative_associative(a, b, c):
    size = min(len(a), len(b), len(c))
    ta, tb, tc = (trace_of(x[:size], sum(x[:size])) for x in (a, b, c))
    assert merge_traces(ta, tb) == merge_traces(tb, ta)
    assert merge_traces(merge_traces(ta, tb), tc) == merge_traces(ta, merge_traces(tb, tc))


@given(st.lists(st.integers(0, 100), min_size=2, max_size=16).filter(lambda c: sum(c) > 0))
def test_lis_bounds_and_balance(counts):
    t = trace_of(counts, sum(counts), 1)
    v = lis(t, 0)
    assert 1.0 <= v <= len(counts)
    assert (v == 1.0) == (len(set(counts)) == 1)


def test_gap_examples():
    g = gap_matrix(trace_of([2, 2, 2, 2], 8))[0]
    assert g.gaps.tolist() == [0, 0, 0] and g.normalized.tolist() == [0, 0, 0]
    g = gap_matrix(trace_of([1, 5, 1, 1], 8))[0]
    assert g.gaps.tolist() == [4, 0, 0] and g.normalized.tolist() == [2.0, 0.0, 0.0]
    assert g.order.tolist() == [1, 0, 2, 3]
    assert gap_matrix(trace_of([8, 0, 0, 0], 8))[0].gaps.tolist() == [8, 0, 0]
    with pytest.raises(EmptyTraceError):
        gap_matrix(trace_of([0, 0], 0))


@given(st.lists(st.integers(0, 100), min_size=2, max_size=12).filter(lambda c: sum(c) > 0))
def test_gaps_telescope(counts):
    g = gap_matrix(trace_of(counts, sum(counts)))[0]
    assert np.all(g.gaps >= 0)
    assert g.gaps.sum() == max(counts) - min(counts)
