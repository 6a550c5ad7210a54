import pytest
from hypothesis import given
from hypothesis import strategies as st

from gnnaccel.datasets import random_graph, toy6
from gnnaccel.graph import Graph, VertexInterval, validate_plan
from gnnaccel.partition import (CapacityError, ShardDraft, SizingBudget, acquire_nei_list, coarse_shard_height,
                                load_plan, partition_coarse, partition_fggp, partition_fggp_literal,
                                probe_shard_size, redundancy_report, save_plan, shard_graph_bytes)

from test_graph import graphs

DEFAULT = SizingBudget.from_bytes(1 << 20, 3, 128, 1)
ROOMY = SizingBudget(1 << 20, 3, 8, 8)


def test_default_budget_per_shard():
    assert DEFAULT.per_shard == 87381
    assert SizingBudget.from_bytes(1 << 20, 3, 1, 1, 128 << 10).graph_slot_bytes == 43690


def test_budget_rejects_degenerate_values():
    with pytest.raises(ValueError):
        SizingBudget(0, 3, 1, 1)
    with pytest.raises(ValueError):
        SizingBudget(100, 3, 0, 0)


def test_shard_graph_bytes():
    assert shard_graph_bytes(0, 0) == 8
    assert shard_graph_bytes(3, 10) == 8 * 10 + 4 * 3 + 8


def test_acquire_nei_list_examples():
    g = toy6()
    e50 = next(e for e, (s, d) in enumerate(g.edges) if (s, d) == (5, 0))
    e53 = next(e for e, (s, d) in enumerate(g.edges) if (s, d) == (5, 3))
    assert acquire_nei_list(g, VertexInterval(0, 0, 3), 5) == [(0, e50)]
    assert acquire_nei_list(g, VertexInterval(1, 3, 6), 5) == [(3, e53)]
    assert acquire_nei_list(g, VertexInterval(0, 2, 2), 5) == []
    assert acquire_nei_list(g, VertexInterval(0, 0, 6), 0) == [(1, next(e for e, x in enumerate(g.edges) if x == (0, 1)))]
    with pytest.raises(IndexError):
        acquire_nei_list(g, VertexInterval(0, 0, 3), 6)


def test_probe_examples():
    four = [(d, d) for d in range(4)]
    assert probe_shard_size(ShardDraft(0), four, DEFAULT) is False  # 128 + 4 = 132
    full = ShardDraft(0, sources=list(range(682)), coo_src=[0] * 100, coo_dst=[0] * 100)
    assert probe_shard_size(full, four, DEFAULT) is True  # 683*128 + 104 = 87528
    with pytest.raises(CapacityError):
        probe_shard_size(ShardDraft(0), four, SizingBudget(300, 3, 128, 1))
    with pytest.raises(ValueError):
        probe_shard_size(ShardDraft(0), [], DEFAULT)


def test_probe_honours_graph_slot():
    b = SizingBudget(1 << 20, 1, 1, 1, graph_slot_bytes=100)
    s = ShardDraft(0, sources=[0], coo_src=[0] * 10, coo_dst=[0] * 10)
    assert shard_graph_bytes(2, 10) == 96
    assert probe_shard_size(s, [(0, 0)], b) is True  # 2 sources, 11 edges: 104 > 100
    with pytest.raises(CapacityError):
        probe_shard_size(ShardDraft(0), [(0, 0)] * 12, b)


def test_fggp_toy6_single_interval():
    p = partition_fggp(toy6(), 6, ROOMY)
    assert len(p.intervals) == 1 and p.num_shards == 1
    sh = p.shards[0][0]
    assert sh.sources == (0, 1, 2, 3, 4, 5)
    assert sh.num_edge == 7
    assert redundancy_report(p).max_loads == 1


def test_fggp_toy6_two_intervals_loads_source_5_twice():
    p = partition_fggp(toy6(), 3, ROOMY)
    assert [(iv.dst_begin, iv.dst_end) for iv in p.intervals] == [(0, 3), (3, 6)]
    rep = redundancy_report(p)
    assert rep.loads_per_source[5] == 2
    assert rep.useless_source_count == 0
    assert [s.sources for s in p.shards[0]] == [(0, 1, 2, 5)]
    assert [s.sources for s in p.shards[1]] == [(3, 4, 5)]


def test_fggp_splits_when_slot_is_small():
    # each source costs 1 + 1 = 2 elements; the slot holds 4 of them
    p = partition_fggp(toy6(), 6, SizingBudget(3 * 8, 3, 1, 1))
    assert p.num_shards == 2
    assert [s.num_src for s in p.shards[0]] == [4, 2]
    assert validate_plan(toy6(), p, budget=8).ok


def test_fggp_empty_graph():
    g = Graph(4, [], [])
    p = partition_fggp(g, 2, ROOMY)
    assert len(p.intervals) == 2 and p.num_shards == 0
    assert validate_plan(g, p).ok
    assert partition_fggp(Graph(0, [], []), 4, ROOMY).intervals == ()


def test_fggp_single_source_too_big():
    g = Graph(2, [0] * 50, [1] * 50)
    with pytest.raises(CapacityError):
        partition_fggp(g, 2, SizingBudget(3 * 20, 3, 1, 1))


def test_coarse_height_formula():
    g = random_graph(1000, 2500, seed=1)  # ceil(avg) = 3
    assert coarse_shard_height(g, DEFAULT) == 87381 // (128 + 3)


def test_coarse_toy6_has_no_useless_sources_after_trimming():
    # with H = 3 every window is either empty or trimmed to a dense range
    p = partition_coarse(toy6(), ROOMY, shard_height=3)
    assert [[s.sources for s in per] for per in p.shards] == [[(0, 1, 2), (5,)], [(3, 4, 5)]]
    assert redundancy_report(p).useless_source_count == 0


def test_coarse_keeps_interior_unused_sources():
    g = Graph(6, [3, 5], [0, 0])
    p = partition_coarse(g, ROOMY, shard_height=3)
    assert [s.sources for s in p.shards[0]] == [(3, 4, 5)]
    assert redundancy_report(p).useless_source_count == 1
    assert validate_plan(g, p).ok


def test_coarse_dense_bipartite_window_is_full():
    src = [s for s in range(4) for _ in range(4)]
    dst = [4 + d for _ in range(4) for d in range(4)]
    g = Graph(8, src, dst)
    p = partition_coarse(g, ROOMY, shard_height=4)
    assert p.shards[0] == () and len(p.shards[1]) == 1
    sh = p.shards[1][0]
    assert sh.sources == (0, 1, 2, 3) and sh.num_edge == 16 and sh.useless_sources() == 0


def test_plan_round_trip():
    p = partition_fggp(random_graph(60, 200, seed=4), 16, SizingBudget(3 * 40, 3, 1, 1))
    q = load_plan(save_plan(p))
    assert q.intervals == p.intervals and q.origin == p.origin and q.dims == p.dims
    for a, b in zip(p.all_shards(), q.all_shards()):
        assert (a.sources, a.coo_src, a.coo_dst) == (b.sources, b.coo_src, b.coo_dst)
    with pytest.raises(ValueError):
        load_plan("not a plan\n")


# --- properties -------------------------------------------------------------------

budgets = st.builds(lambda cap, t, ds, de: SizingBudget(cap * t, t, ds, de),
                    st.integers(40, 400), st.integers(1, 4), st.integers(1, 6), st.integers(0, 3))


def _brute_loads(g: Graph, size: int) -> dict[int, int]:
    out = {}
    pairs = {(s, d // size) for s, d in g.edges}
    for s, _ in pairs:
        out[s] = out.get(s, 0) + 1
    return dict(sorted(out.items()))


@given(graphs(max_vertices=40, max_edges=120), st.integers(1, 16), budgets)
def test_fggp_properties(g, size, b):
    try:
        p = partition_fggp(g, size, b)
    except CapacityError:
        return
    assert validate_plan(g, p, budget=b.per_shard).ok
    for sh in p.all_shards():
        assert sh.num_src * b.dim_src + sh.num_edge * b.dim_edge <= b.per_shard
        assert sh.useless_sources() == 0
        assert list(sh.sources) == sorted(set(sh.sources))
    # without splitting, each source is loaded once per interval it feeds
    roomy = partition_fggp(g, size, SizingBudget(1 << 20, 1, b.dim_src, b.dim_edge))
    assert redundancy_report(roomy).loads_per_source == _brute_loads(g, size)


@given(graphs(max_vertices=40, max_edges=120), st.integers(1, 16), budgets)
def test_fggp_matches_literal_transcription(g, size, b):
    try:
        fast = partition_fggp(g, size, b)
    except CapacityError:
        with pytest.raises(CapacityError):
            partition_fggp_literal(g, size, b)
        return
    slow = partition_fggp_literal(g, size, b)
    assert fast == slow
    assert partition_fggp(g, size, b) == fast


@given(graphs(max_vertices=40, max_edges=120), st.integers(0, 4))
def test_fggp_source_loads_drop_as_nested_intervals_grow(g, e):
    # a larger interval that is a union of smaller ones never loads a source more often
    b = SizingBudget(1 << 20, 1, 2, 1)
    small = redundancy_report(partition_fggp(g, 1 << e, b)).total_source_loads
    big = redundancy_report(partition_fggp(g, 1 << (e + 1), b)).total_source_loads
    assert big <= small


@given(graphs(max_vertices=40, max_edges=120), st.integers(1, 12), budgets)
def test_coarse_covers_every_edge(g, h, b):
    try:
        p = partition_coarse(g, b, shard_height=h)
    except CapacityError:
        return
    assert validate_plan(g, p, budget=b.per_shard).ok
    for sh in p.all_shards():
        used = set(sh.coo_src)
        assert 0 in used and sh.num_src - 1 in used  # trimmed at both ends


def test_fggp_beats_coarse_on_source_loads(small_randoms):
    g = small_randoms[2]
    b = SizingBudget.from_bytes(16 << 10, 3, 16, 1)
    fg = partition_fggp(g, coarse_shard_height(g, b), b)
    co = partition_coarse(g, b)
    assert redundancy_report(fg).useless_source_count == 0
    assert redundancy_report(co).useless_source_count > 0
