import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gnnaccel.datasets import random_graph, toy6
from gnnaccel.graph import Graph
from gnnaccel.model_ir import MODEL_KINDS, _Builder, build_model
from gnnaccel.oracle import (OracleError, execute_dense, op_by_op_traffic, random_features, random_weights,
                             reference_model, relative_error)

from test_graph import graphs


def _ones(u):
    return {w.id: np.eye(w.rows, w.dim) if w.rows == w.dim else np.ones(w.shape) for w in u.weights}


def test_gcn_hand_example():
    # single edge 0 -> 1 with unit features and identity weight
    g = Graph(2, [0], [1])
    u = build_model("gcn", 1, [1, 1])
    out = execute_dense(u, g, np.ones((2, 1)), {"l0.W": np.ones((1, 1))})
    np.testing.assert_allclose(out, [[0.0], [1.0]])
    np.testing.assert_allclose(reference_model("gcn", g, np.ones((2, 1)), {"l0.W": np.ones((1, 1))}), out)


def test_gcn_normalizes_by_in_degree():
    # vertex 0 has in-degree 2; its sources have in-degree 0, floored to 1
    g = Graph(3, [1, 2], [0, 0])
    u = build_model("gcn", 1, [1, 1])
    out = execute_dense(u, g, np.ones((3, 1)), {"l0.W": np.ones((1, 1))})
    np.testing.assert_allclose(out[0, 0], (1 + 1) / np.sqrt(2))
    assert out[1, 0] == 0 and out[2, 0] == 0


def test_sage_hand_example():
    g = Graph(3, [1, 2], [0, 0])
    x = np.array([[1.0, -1.0], [2.0, 0.0], [-3.0, 5.0]])
    w = {"l0.W_pool": np.eye(2), "l0.b_pool": np.zeros((1, 2)), "l0.W": np.eye(4, 2) + np.eye(4, 2, -2)}
    out = execute_dense(build_model("sage", 1, [2, 2]), g, x, w)
    # vertex 0: relu(x0 + max(x1, x2)) = relu([1+2, -1+5]); others have no in-edges, so pooled = 0
    np.testing.assert_allclose(out, [[3.0, 4.0], [2.0, 0.0], [0.0, 5.0]])
    np.testing.assert_allclose(reference_model("sage", g, x, w), out)


def test_gat_uniform_attention_averages():
    # zero attention vectors give equal weights, so GAT degenerates to the neighbour mean
    g = Graph(3, [1, 2], [0, 0])
    x = np.array([[0.0], [2.0], [4.0]])
    w = {"l0.W": np.ones((1, 1)), "l0.attn_dst": np.zeros((1, 1)), "l0.attn_src": np.zeros((1, 1))}
    out = execute_dense(build_model("gat", 1, [1, 1]), g, x, w)
    np.testing.assert_allclose(out[:, 0], [3.0, 0.0, 0.0])


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_dual_oracles_agree_on_toy6(kind):
    g = toy6()
    u = build_model(kind, 2, [8, 8, 8])
    x, w = random_features(6, 8, seed=1), random_weights(u, seed=1)
    assert relative_error(execute_dense(u, g, x, w), reference_model(kind, g, x, w)) < 1e-9


@given(graphs(max_vertices=32, max_edges=100), st.sampled_from(MODEL_KINDS), st.integers(0, 1000))
def test_dual_oracles_agree(g, kind, seed):
    u = build_model(kind, 2, [4, 4, 4])
    x, w = random_features(g.num_vertices, 4, seed), random_weights(u, seed)
    assert relative_error(execute_dense(u, g, x, w), reference_model(kind, g, x, w)) < 1e-5


@given(graphs(max_vertices=24, max_edges=80), st.sampled_from(MODEL_KINDS), st.randoms(use_true_random=False))
def test_permutation_equivariance(g, kind, rnd):
    perm = list(range(g.num_vertices))
    rnd.shuffle(perm)
    p = np.asarray(perm)
    u = build_model(kind, 1, [3, 3])
    x, w = random_features(g.num_vertices, 3, 7), random_weights(u, 7)
    xp = np.empty_like(x)
    xp[p] = x
    out = execute_dense(u, g, x, w)
    out_p = execute_dense(u, g.permuted(perm), xp, w)
    np.testing.assert_allclose(out_p[p], out, rtol=1e-9, atol=1e-12)


def test_gcn_is_linear_before_activation():
    b = _Builder()
    h = b.input("x", 4, "feature")
    dn = b.input("deg_rsqrt", 1, "in_degree_rsqrt")
    a = b.op("gather_sum", [b.op("scatter_fwd", [b.op("mul", [h, dn])])])
    u = b.finish(b.op("mul", [b.op("gemm", [a, b.weight("l0.W", 4, 4)]), dn]))
    g = random_graph(30, 100, seed=2)
    w = random_weights(u, 3)
    x1, x2 = random_features(30, 4, 1).astype(np.float64), random_features(30, 4, 2).astype(np.float64)
    f = lambda x: execute_dense(u, g, x, w)  # noqa: E731
    np.testing.assert_allclose(f(2 * x1), 2 * f(x1), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(f(x1 + x2), f(x1) + f(x2), rtol=1e-9, atol=1e-12)


def test_op_by_op_traffic():
    b = _Builder()
    x = b.input("x", 128, "feature")
    u = b.finish(b.op("relu", [x]))
    g = Graph(45_293, [], [])
    assert op_by_op_traffic(u, g) == 2 * 45_293 * 128 * 4
    b = _Builder()
    assert op_by_op_traffic(b.finish(b.input("x", 128, "feature")), g) == 0
    gcn = build_model("gcn", 1, [4, 4])
    g6 = toy6()
    # mul: x + deg + out; scatter: v in, e out; gather: e in, v out; gemm: v + W + v; mul; relu
    v4, v1, e4, w = 6 * 16, 6 * 4, 7 * 16, 16 * 4
    assert op_by_op_traffic(gcn, g6) == (v4 + v1 + v4) + (v4 + e4) + (e4 + v4) + (v4 + w + v4) \
        + (v4 + v1 + v4) + (v4 + v4)


def test_random_inputs_are_seeded():
    a = random_features(10, 4, seed=3)
    assert a.dtype == np.float32 and np.all(np.abs(a) <= 0.5)
    np.testing.assert_array_equal(a, random_features(10, 4, seed=3))
    assert not np.array_equal(a, random_features(10, 4, seed=4))
    ints = random_features(50, 4, integer=True)
    assert set(np.unique(ints)) <= {-2, -1, 0, 1, 2}


def test_relative_error():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert relative_error(np.array([1.0, 2.5]), np.array([1.0, 2.0])) == 0.25
    with pytest.raises(OracleError):
        relative_error(np.zeros(2), np.zeros(3))


def test_oracle_input_checks():
    u = build_model("gcn", 1, [4, 4])
    g = toy6()
    with pytest.raises(OracleError, match="missing weight"):
        execute_dense(u, g, random_features(6, 4), {})
    with pytest.raises(OracleError):
        reference_model("gcn", g, random_features(5, 4), random_weights(u))
