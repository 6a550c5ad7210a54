"""Whole-graph reference executions used to check the simulator.

``execute_dense`` walks a UCG operator by operator over the full graph.
``reference_model`` evaluates the four model formulas directly with sparse
adjacency products and never looks at a UCG, so the two agree only if the
builders encode the formulas correctly.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .graph import Graph
from .model_ir import (EDGE, GATHER_OPS, VERTEX, WEIGHT, UcgError, UnifiedGraph, canonical_kind, role_array,
                       validate_ucg)

FLT_LOWEST = float(np.finfo(np.float32).min)
ELEM_BYTES = 4


class OracleError(ValueError):
    pass


# --- inputs ----------------------------------------------------------------------


def random_features(num_vertices: int, dim: int, seed: int = 0, integer: bool = False) -> np.ndarray:
    rng = np.random.default_rng([seed, 1])
    if integer:
        return rng.integers(-2, 3, size=(num_vertices, dim)).astype(np.float32)
    return rng.uniform(-0.5, 0.5, size=(num_vertices, dim)).astype(np.float32)


def random_weights(u: UnifiedGraph, seed: int = 0, integer: bool = False) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([seed, 2])
    out = {}
    for w in u.weights:
        if integer:
            out[w.id] = rng.integers(-1, 2, size=w.shape).astype(np.float32)
        else:
            out[w.id] = rng.uniform(-0.5, 0.5, size=w.shape).astype(np.float32)
    return out


def relative_error(a: np.ndarray, ref: np.ndarray) -> float:
    """Max-abs error scaled by the reference's max-abs value."""
    a = np.asarray(a, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if a.shape != ref.shape:
        raise OracleError(f"shape mismatch {a.shape} vs {ref.shape}")
    if a.size == 0:
        return 0.0
    scale = max(float(np.abs(ref).max()), 1e-30)
    return float(np.abs(a - ref).max()) / scale


# --- dense UCG execution -----------------------------------------------------------


def execute_dense(u: UnifiedGraph, g: Graph, features, weights: Mapping[str, np.ndarray],
                  dtype=np.float64) -> np.ndarray:
    rep = validate_ucg(u)
    if rep:
        raise OracleError("invalid UCG: " + "; ".join(rep.violations[:3]))
    src = g.src.astype(np.int64)
    dst = g.dst.astype(np.int64)
    n, m = g.num_vertices, g.num_edges
    deg = np.maximum(g.in_degree.astype(np.float64), 1.0)[:, None]
    val: dict[str, np.ndarray] = {}
    for t in u.inputs:
        try:
            val[t.id] = role_array(t.role, g, features, dtype)
        except UcgError as exc:
            raise OracleError(str(exc)) from None
        if val[t.id].shape[1] != t.dim:
            raise OracleError(f"input {t.id}: dim {val[t.id].shape[1]} != declared {t.dim}")
    for w in u.weights:
        if w.id not in weights:
            raise OracleError(f"missing weight {w.id}")
        arr = np.asarray(weights[w.id], dtype=dtype)
        if arr.shape != w.shape:
            raise OracleError(f"weight {w.id}: shape {arr.shape} != {w.shape}")
        val[w.id] = arr
    for node in u.nodes:
        x = [val[i] for i in node.inputs]
        op, out = node.op, node.output
        if op == "scatter_fwd":
            r = x[0][src]
        elif op == "scatter_bwd":
            r = x[0][dst]
        elif op in GATHER_OPS:
            if op == "gather_max":
                r = np.full((n, out.dim), FLT_LOWEST, dtype=dtype)
                np.maximum.at(r, dst, x[0])
            else:
                r = np.zeros((n, out.dim), dtype=dtype)
                np.add.at(r, dst, x[0])
                if op == "gather_mean":
                    r = r / deg
        elif op == "gemm":
            r = x[0] @ x[1]
        elif op == "concat":
            r = np.concatenate(x, axis=1)
        elif op == "fill":
            rows = n if out.data_kind == VERTEX else m
            r = np.full((rows, out.dim), node.attr("value", 0.0), dtype=dtype)
        else:
            r = _elw(op, x, node.attr("slope", 0.2))
        val[out.id] = r
    return val[u.output]


def _elw(op: str, x, slope: float) -> np.ndarray:
    with np.errstate(over="ignore"):
        if op == "add":
            return x[0] + x[1]
        if op == "sub":
            return x[0] - x[1]
        if op == "mul":
            return x[0] * x[1]
        if op == "div":
            return x[0] / x[1]
        if op == "exp":
            return np.exp(x[0])
        if op == "relu":
            return np.maximum(x[0], 0)
        if op == "leakyrelu":
            return np.where(x[0] > 0, x[0], slope * x[0])
        if op == "sigmoid":
            return 1 / (1 + np.exp(-x[0]))
        if op == "tanh":
            return np.tanh(x[0])
    raise OracleError(f"no dense semantics for {op}")


# --- traffic of the operator-by-operator paradigm --------------------------------------


def op_by_op_traffic(u: UnifiedGraph, g: Graph) -> int:
    """DRAM bytes if every operator reads its inputs from and writes its output to DRAM."""
    t = u.tensors()

    def nbytes(tid: str) -> int:
        r = t[tid]
        if r.data_kind == WEIGHT:
            return r.rows * r.dim * ELEM_BYTES
        rows = g.num_vertices if r.data_kind == VERTEX else g.num_edges if r.data_kind == EDGE else 1
        return rows * r.dim * ELEM_BYTES

    return sum(sum(nbytes(i) for i in n.inputs) + nbytes(n.output.id) for n in u.nodes)


# --- closed-form models ------------------------------------------------------------------


def _adjacency(g: Graph) -> sp.csr_matrix:
    """A[i, j] = number of edges j -> i."""
    n = g.num_vertices
    return sp.csr_matrix((np.ones(g.num_edges), (g.dst.astype(np.int64), g.src.astype(np.int64))), shape=(n, n))


def _segment_max(values: np.ndarray, seg: np.ndarray, n: int, empty: float) -> np.ndarray:
    """Per-segment max via sort + reduceat; ``empty`` fills segments with no rows."""
    out = np.full((n, values.shape[1]), empty, dtype=np.float64)
    if len(seg) == 0:
        return out
    order = np.argsort(seg, kind="stable")
    s, v = seg[order], values[order]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    out[s[starts]] = np.maximum.reduceat(v, starts, axis=0)
    return out


def _layers(weights: Mapping[str, np.ndarray]) -> int:
    ls = {int(k.split(".", 1)[0][1:]) for k in weights if k.startswith("l") and "." in k}
    if not ls or ls != set(range(len(ls))):
        raise OracleError("weights must be named l<k>.<name> for consecutive layers")
    return len(ls)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def reference_model(kind: str, g: Graph, features, weights: Mapping[str, np.ndarray]) -> np.ndarray:
    kind = canonical_kind(kind)
    w = {k: np.asarray(v, dtype=np.float64) for k, v in weights.items()}
    h = np.asarray(features, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != g.num_vertices:
        raise OracleError(f"features must be ({g.num_vertices}, dim), got {h.shape}")
    A = _adjacency(g)
    d = np.maximum(g.in_degree.astype(np.float64), 1.0)
    src, dst = g.src.astype(np.int64), g.dst.astype(np.int64)
    for l in range(_layers(w)):
        W = lambda name: w[f"l{l}.{name}"]  # noqa: E731
        if h.shape[1] != (W("W").shape[0] if kind not in ("sage_pool",) else W("W_pool").shape[0]):
            raise OracleError(f"layer {l}: feature dim {h.shape[1]} does not match weights")
        if kind == "gcn":
            a = A @ (h / np.sqrt(d)[:, None])
            h = np.maximum((a @ W("W")) / np.sqrt(d)[:, None], 0)
        elif kind == "gat":
            z = h @ W("W")
            e = (z @ W("attn_dst"))[dst, 0] + (z @ W("attn_src"))[src, 0]
            e = np.where(e > 0, e, 0.2 * e)
            emax = _segment_max(e[:, None], dst, g.num_vertices, 0.0)[:, 0]
            p = np.exp(e - emax[dst])
            denom = np.bincount(dst, weights=p, minlength=g.num_vertices)
            alpha = p / np.where(denom > 0, denom, 1.0)[dst]
            a = sp.csr_matrix((alpha, (dst, src)), shape=A.shape) @ z
            h = np.maximum(a, 0)
        elif kind == "sage_pool":
            pooled = h @ W("W_pool") + W("b_pool")
            mx = _segment_max(pooled[src], dst, g.num_vertices, 0.0)
            h = np.maximum(np.concatenate([h, mx], axis=1) @ W("W"), 0)
        else:
            a = A @ (h @ W("W") + W("b"))
            r = _sigmoid(a @ W("W_ir") + h @ W("W_hr") + W("b_r"))
            zg = _sigmoid(a @ W("W_iz") + h @ W("W_hz") + W("b_z"))
            nn = np.tanh(a @ W("W_in") + W("b_in") + r * (h @ W("W_hn") + W("b_hn")))
            h = (1 - zg) * nn + zg * h
    return np.asarray(h)
