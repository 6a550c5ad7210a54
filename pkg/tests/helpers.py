"""Small builders shared by the test modules."""

from dataclasses import dataclass

import numpy as np

from gnnaccel.compiler import compile_model
from gnnaccel.model_ir import UnifiedGraph, _Builder, build_model
from gnnaccel.oracle import random_features, random_weights
from gnnaccel.pipeline import make_plan
from gnnaccel.sim import SimConfig


@dataclass
class Case:
    ucg: UnifiedGraph
    bundle: object
    plan: object
    features: np.ndarray
    weights: dict


def case(kind, g, dims=(8, 8), cfg=None, interval_size=None, integer=False, seed=0, merge=True,
         partitioner="fggp"):
    u = kind if isinstance(kind, UnifiedGraph) else build_model(kind, len(dims) - 1, dims)
    b = compile_model(u, merge=merge)
    plan = make_plan(g, b, cfg or SimConfig(), partitioner, interval_size)
    dim0 = next(t.dim for t in u.inputs if t.role == "feature")
    return Case(u, b, plan, random_features(g.num_vertices, dim0, seed, integer),
                random_weights(u, seed, integer))


def sum_only_gcn(dim=4, layers=2) -> UnifiedGraph:
    """GCN without normalization: exact in float32 for small integer data."""
    b = _Builder()
    h = b.input("x", dim, "feature")
    for l in range(layers):
        a = b.op("gather_sum", [b.op("scatter_fwd", [h])])
        h = b.op("relu", [b.op("gemm", [a, b.weight(f"l{l}.W", dim, dim)])])
    return b.finish(h, kind="sum_gcn")


def apply_only(dim=4) -> UnifiedGraph:
    """A model with no GTR operator at all."""
    b = _Builder()
    x = b.input("x", dim, "feature")
    return b.finish(b.op("relu", [b.op("gemm", [x, b.weight("l0.W", dim, dim)])]))
