import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gnnaccel.datasets import chain, load_dataset, planar_surrogate, toy6
from gnnaccel.graph import (Graph, GraphError, GraphParseError, PartitionPlan, Shard, degree, dump_edge_list,
                            load_edge_list, load_graph_file, load_matrix_market, make_intervals, validate_plan)
from gnnaccel.partition import SizingBudget, partition_coarse, partition_fggp


@st.composite
def graphs(draw, max_vertices=30, max_edges=80):
    n = draw(st.integers(1, max_vertices))
    m = draw(st.integers(0, max_edges))
    pairs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), min_size=m, max_size=m))
    src = [s for s, _ in pairs]
    dst = [d for _, d in pairs]
    return Graph(n, src, dst)


def test_edge_list_basic():
    g = load_edge_list("0 1\n1 2\n")
    assert g.num_vertices == 3 and g.num_edges == 2
    assert sorted(g.edges) == [(0, 1), (1, 2)]


def test_edge_list_remap_and_comments():
    g = load_edge_list("# header\n5 7  # trailing\n\n", remap=True)
    assert g.num_vertices == 2
    assert g.edges == [(0, 1)]


def test_edge_list_parse_error_reports_line():
    with pytest.raises(GraphParseError, match="line 2"):
        load_edge_list("0 1\n0 x\n")
    with pytest.raises(GraphParseError):
        load_edge_list("0 1 2\n")
    with pytest.raises(GraphError):
        load_edge_list("-1 2\n")


def test_edge_list_keeps_duplicates_unless_dedup():
    text = "0 1\n0 1\n1 1\n"
    assert load_edge_list(text).num_edges == 3
    assert load_edge_list(text, dedup=True).num_edges == 2


def test_declared_vertex_count():
    assert load_edge_list("0 1\n", num_vertices=5).num_vertices == 5
    with pytest.raises(GraphError):
        load_edge_list("0 9\n", num_vertices=5)


def test_matrix_market_is_one_based():
    text = "%%MatrixMarket matrix coordinate pattern general\n% c\n3 3 2\n1 2\n3 1\n"
    g = load_matrix_market(text)
    assert g.num_vertices == 3
    assert sorted(g.edges) == [(0, 1), (2, 0)]
    assert load_matrix_market(text, symmetrize=True).num_edges == 4
    with pytest.raises(GraphParseError):
        load_matrix_market("%%MatrixMarket matrix coordinate pattern general\n3 3 5\n1 2\n")


def test_load_graph_file_sniffs_format(tmp_path):
    p = tmp_path / "g.mtx"
    p.write_text("%%MatrixMarket matrix coordinate pattern general\n2 2 1\n1 2\n")
    assert load_graph_file(str(p)).edges == [(0, 1)]
    q = tmp_path / "g.txt"
    q.write_text("0 1\n")
    assert load_graph_file(str(q)).edges == [(0, 1)]


def test_degree_examples():
    c = chain(4)
    assert degree(c, 1, "in") == 1
    assert degree(c, 0, "in") == 0
    g = toy6()
    assert degree(g, 5, "out") == 2
    assert degree(g, 0, "in") == 2
    with pytest.raises(IndexError):
        degree(g, 6)
    with pytest.raises(ValueError):
        degree(g, 0, "sideways")


def test_rejects_out_of_range_edges():
    with pytest.raises(GraphError):
        Graph(2, [0], [2])


@given(graphs())
def test_out_and_in_index_enumerate_same_edges(g):
    by_dst = sorted(tuple(x) for v in range(g.num_vertices) for x in zip(g.src[g.in_edges(v)], g.dst[g.in_edges(v)]))
    by_src = sorted(tuple(x) for v in range(g.num_vertices) for x in zip(g.src[g.out_edges(v)], g.dst[g.out_edges(v)]))
    assert by_dst == by_src == sorted(g.edges)
    assert int(g.in_degree.sum()) == int(g.out_degree.sum()) == g.num_edges


@given(graphs())
def test_edge_list_round_trip(g):
    back = load_edge_list(dump_edge_list(g), num_vertices=g.num_vertices)
    assert back == g


@given(graphs(), st.randoms(use_true_random=False))
def test_permuted_preserves_degree_multiset(g, rnd):
    perm = list(range(g.num_vertices))
    rnd.shuffle(perm)
    h = g.permuted(perm)
    assert sorted(h.in_degree.tolist()) == sorted(g.in_degree.tolist())
    assert h.in_degree[perm[0]] == g.in_degree[0]


def test_symmetrized_adds_reverse_edges():
    # the self-loop (2, 2) is its own reverse
    g = toy6().symmetrized()
    assert g.num_edges == 13
    assert (0, 5) in g.edges and (5, 0) in g.edges


@given(st.integers(0, 100), st.integers(1, 40))
def test_intervals_tile(n, size):
    ivs = make_intervals(n, size)
    pos = 0
    for k, iv in enumerate(ivs):
        assert iv.index == k and iv.dst_begin == pos and 0 < iv.width <= size
        pos = iv.dst_end
    assert pos == n


def _plan(g):
    return partition_fggp(g, 3, SizingBudget(1 << 20, 3, 8, 8))


def test_validate_plan_accepts_partitioner_output():
    g = toy6()
    assert validate_plan(g, _plan(g)).ok
    assert validate_plan(g, partition_coarse(g, SizingBudget(1 << 20, 3, 8, 8), shard_height=3)).ok


def test_validate_plan_reports_missing_edge():
    g = toy6()
    p = _plan(g)
    first = p.shards[0][0]
    cut = Shard(first.interval_index, first.sources, first.coo_src[1:], first.coo_dst[1:])
    broken = PartitionPlan(p.intervals, ((cut,) + p.shards[0][1:],) + p.shards[1:], p.origin, p.dims, p.num_vertices)
    rep = validate_plan(g, broken)
    assert rep and any("edge coverage" in v for v in rep)


def test_validate_plan_reports_budget_overflow():
    g = toy6()
    rep = validate_plan(g, _plan(g), budget=1)
    assert any("exceeds budget" in v for v in rep)


def test_validate_plan_reports_bad_tiling():
    g = toy6()
    p = _plan(g)
    short = PartitionPlan(p.intervals[:1], p.shards[:1], p.origin, p.dims, p.num_vertices)
    assert any("cover" in v for v in validate_plan(g, short))


def test_load_dataset_names():
    assert load_dataset("toy6").num_edges == 7
    assert load_dataset("chain:5").num_edges == 4
    r = load_dataset("random:50:200:3")
    assert (r.num_vertices, r.num_edges) == (50, 200)
    assert load_dataset("toy6", symmetrize=True).num_edges == 13
    with pytest.raises(FileNotFoundError, match="/no/such/file"):
        load_dataset("/no/such/file")


def test_surrogate_matches_target_size_and_is_local(ak2010):
    assert ak2010.num_vertices == 45_293 and ak2010.num_edges == 108_549
    # Morton numbering keeps most edges between nearby ids
    span = np.abs(ak2010.src.astype(np.int64) - ak2010.dst.astype(np.int64))
    assert np.median(span) < 200


def test_surrogate_is_deterministic():
    a = planar_surrogate(2000, 4000, seed=5)
    b = planar_surrogate(2000, 4000, seed=5)
    assert a == b
