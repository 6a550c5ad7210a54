import dataclasses

import numpy as np
import pytest

from gnnaccel.datasets import toy6
from gnnaccel.graph import Graph
from gnnaccel.model_ir import (EDGE, MODEL_KINDS, VERTEX, TensorRef, UcgError, UcgNode, UnifiedGraph, _Builder,
                               build_model, canonical_kind, load_ucg, role_array, save_ucg, validate_ucg)

ALL = [(k, 2, (16, 16, 16)) for k in MODEL_KINDS]


@pytest.mark.parametrize("kind,layers,dims", ALL)
def test_builders_are_valid(kind, layers, dims):
    u = build_model(kind, layers, dims)
    assert validate_ucg(u).ok, validate_ucg(u).violations
    assert u.producers()[u.output].output.data_kind == VERTEX
    assert u.meta == (("kind", kind), ("layers", "2"))


def test_gcn_layer_shape():
    u = build_model("gcn", 2, [128, 128, 128])
    assert u.count("gather_sum") == 2 and u.count("scatter_fwd") == 2
    assert len(u.nodes) == 12
    assert [n.op for n in u.nodes[:6]] == ["mul", "scatter_fwd", "gather_sum", "gemm", "mul", "relu"]


def test_other_models_are_larger_than_gcn():
    n_gcn = len(build_model("gcn", 1, [8, 8]).nodes)
    for kind in ("gat", "sage_pool", "ggnn"):
        assert len(build_model(kind, 1, [8, 8]).nodes) > n_gcn
    gat = build_model("gat", 1, [8, 8])
    assert len(gat.nodes) >= 12
    assert gat.count("gather_max") == 1 and gat.count("gather_sum") == 2 and gat.count("exp") == 1


def test_sage_uses_max_pooling_and_concat():
    u = build_model("sage", 1, [8, 4])
    assert u.count("gather_max") == 1 and u.count("concat") == 1
    assert {w.id: w.shape for w in u.weights}["l0.W"] == (16, 4)


def test_gather_never_feeds_gather_directly():
    for kind in MODEL_KINDS:
        u = build_model(kind, 2, [8, 8, 8])
        prod = u.producers()
        for n in u.nodes:
            if n.is_gather:
                assert not prod[n.inputs[0]].is_gather


def test_aliases_and_errors():
    assert canonical_kind("SAGE") == "sage_pool" and canonical_kind("gg-nn") == "ggnn"
    with pytest.raises(UcgError, match="unknown model"):
        build_model("transformer", 1, [4, 4])
    with pytest.raises(UcgError):
        build_model("gcn", 2, [4, 4])
    with pytest.raises(UcgError):
        build_model("gcn", 1, [4, 0])
    with pytest.raises(UcgError, match="equal"):
        build_model("ggnn", 1, [4, 8])


def test_kind_mismatch_is_reported():
    u = build_model("gcn", 1, [4, 4])
    # feed a vertex tensor straight into the gather
    g = u.nodes[2]
    bad = dataclasses.replace(g, inputs=("t0",))
    v = UnifiedGraph(u.nodes[:2] + (bad,) + u.nodes[3:], u.inputs, u.weights, u.output, u.meta)
    rep = validate_ucg(v)
    assert any("kind mismatch" in m for m in rep)


def test_cycle_is_reported():
    x = TensorRef("x", VERTEX, 4, role="feature")
    a = UcgNode(0, "relu", ("t1",), TensorRef("t0", VERTEX, 4))
    b = UcgNode(1, "relu", ("t0",), TensorRef("t1", VERTEX, 4))
    rep = validate_ucg(UnifiedGraph((a, b), (x,), (), "t1"))
    assert any(m.startswith("acyclicity") for m in rep)


def test_dangling_and_output_kind():
    x = TensorRef("x", VERTEX, 4, role="feature")
    n = UcgNode(0, "scatter_fwd", ("x",), TensorRef("t0", EDGE, 4))
    assert any("must be a vertex" in m for m in validate_ucg(UnifiedGraph((n,), (x,), (), "t0")))
    m = UcgNode(0, "relu", ("nope",), TensorRef("t0", VERTEX, 4))
    assert any("dangling" in v for v in validate_ucg(UnifiedGraph((m,), (x,), (), "t0")))


def test_bias_broadcast_rules():
    b = _Builder()
    x = b.input("x", 4, "feature")
    b.op("add", [x, b.weight("bias", 1, 4)])
    b.op("add", [x, b.weight("wide", 2, 4)])
    rep = validate_ucg(b.finish("t0"))
    assert len(rep.violations) == 1 and "bias row" in rep.violations[0]


@pytest.mark.parametrize("kind,layers,dims", ALL)
def test_text_round_trip(kind, layers, dims):
    u = build_model(kind, layers, dims)
    assert load_ucg(save_ucg(u)) == u


def test_load_errors():
    with pytest.raises(UcgError, match="empty"):
        load_ucg("")
    with pytest.raises(UcgError, match="FOO"):
        load_ucg("ucg v1\ninput x vertex 4 role=feature\nnode 0 FOO t0 vertex 4 <- x\noutput t0\n")
    with pytest.raises(UcgError, match="dangling"):
        load_ucg("ucg v1\nnode 0 relu t0 vertex 4 <- y\noutput t0\n")
    with pytest.raises(UcgError, match="header"):
        load_ucg("graph v2\n")


def test_role_arrays():
    g = toy6()
    np.testing.assert_array_equal(role_array("in_degree", g)[:, 0], [2, 1, 1, 1, 1, 1])
    np.testing.assert_allclose(role_array("in_degree_rsqrt", g)[0, 0], 1 / np.sqrt(2), rtol=1e-7)
    iso = Graph(3, [0], [1])
    np.testing.assert_array_equal(role_array("nonempty", iso)[:, 0], [0, 1, 0])
    np.testing.assert_array_equal(role_array("in_degree", iso)[:, 0], [1, 1, 1])
    with pytest.raises(UcgError):
        role_array("feature", g)
    with pytest.raises(UcgError):
        role_array("colour", g)
