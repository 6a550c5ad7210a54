"""Unified computational graph (UCG) of primitive GNN operators.

Tensors are tagged with a data kind: ``vertex`` and ``edge`` tensors carry
``dim`` elements per row, ``weight`` tensors have a full ``(rows, dim)``
shape.  Graph-derived vertex inputs (degrees, masks) are declared as inputs
with a ``role`` so that every executor fills them the same way.

Binary element-wise ops broadcast a ``dim == 1`` operand of the same kind,
or a ``(1, dim)`` weight used as a bias row.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .graph import ValidationReport

VERTEX, EDGE, WEIGHT, SCALAR = "vertex", "edge", "weight", "scalar"
DATA_KINDS = (VERTEX, EDGE, WEIGHT, SCALAR)

ELW_UNARY = ("exp", "relu", "leakyrelu", "sigmoid", "tanh")
ELW_BINARY = ("add", "sub", "mul", "div")
ELW_OPS = ELW_UNARY + ELW_BINARY + ("fill", "concat")
DMM_OPS = ("gemm",)
SCATTER_OPS = ("scatter_fwd", "scatter_bwd")
GATHER_OPS = ("gather_sum", "gather_max", "gather_mean")
GTR_OPS = SCATTER_OPS + GATHER_OPS
ALL_OPS = ELW_OPS + DMM_OPS + GTR_OPS

INPUT_ROLES = ("feature", "in_degree", "in_degree_rsqrt", "nonempty")

UCG_FORMAT_VERSION = 1
LEAKY_SLOPE = 0.2


class UcgError(ValueError):
    pass


@dataclass(frozen=True)
class TensorRef:
    id: str
    data_kind: str
    dim: int
    rows: int | None = None  # weights only
    role: str | None = None  # graph inputs only

    @property
    def shape(self) -> tuple[int, int] | None:
        return (self.rows, self.dim) if self.data_kind == WEIGHT else None


@dataclass(frozen=True)
class UcgNode:
    id: int
    op: str
    inputs: tuple[str, ...]
    output: TensorRef
    attrs: tuple[tuple[str, float], ...] = ()

    def attr(self, key: str, default=None):
        return dict(self.attrs).get(key, default)

    @property
    def is_gtr(self) -> bool:
        return self.op in GTR_OPS

    @property
    def is_gather(self) -> bool:
        return self.op in GATHER_OPS

    @property
    def is_scatter(self) -> bool:
        return self.op in SCATTER_OPS


@dataclass(frozen=True)
class UnifiedGraph:
    nodes: tuple[UcgNode, ...]
    inputs: tuple[TensorRef, ...]
    weights: tuple[TensorRef, ...]
    output: str
    meta: tuple[tuple[str, str], ...] = ()

    def tensors(self) -> dict[str, TensorRef]:
        t = {x.id: x for x in self.inputs}
        t.update({w.id: w for w in self.weights})
        t.update({n.output.id: n.output for n in self.nodes})
        return t

    def producers(self) -> dict[str, UcgNode]:
        return {n.output.id: n for n in self.nodes}

    def consumers(self) -> dict[str, list[UcgNode]]:
        c: dict[str, list[UcgNode]] = {}
        for n in self.nodes:
            for i in n.inputs:
                c.setdefault(i, []).append(n)
        return c

    def node(self, node_id: int) -> UcgNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def count(self, op: str) -> int:
        return sum(1 for n in self.nodes if n.op == op)


# --- validation -------------------------------------------------------------


def _find_cycle(nodes: Sequence[UcgNode]) -> bool:
    prod = {n.output.id: n.id for n in nodes}
    deps = {n.id: [prod[i] for i in n.inputs if i in prod] for n in nodes}
    state: dict[int, int] = {}

    def visit(u: int) -> bool:
        state[u] = 1
        for v in deps[u]:
            s = state.get(v, 0)
            if s == 1 or (s == 0 and visit(v)):
                return True
        state[u] = 2
        return False

    return any(state.get(n.id, 0) == 0 and visit(n.id) for n in nodes)


def validate_ucg(u: UnifiedGraph) -> ValidationReport:
    rep = ValidationReport()
    known: dict[str, TensorRef] = {}
    for t in u.inputs:
        if t.data_kind != VERTEX:
            rep.add(f"input {t.id}: data_kind must be vertex")
        if t.role not in INPUT_ROLES:
            rep.add(f"input {t.id}: unknown role {t.role!r}")
        known[t.id] = t
    for w in u.weights:
        if w.data_kind != WEIGHT or not w.rows or w.rows < 1:
            rep.add(f"weight {w.id}: needs weight kind with full shape")
        known[w.id] = w
    for t in list(known.values()):
        if t.dim < 1:
            rep.add(f"tensor {t.id}: dim must be >= 1")

    produced: dict[str, int] = {}
    for n in u.nodes:
        if n.output.id in produced or n.output.id in known:
            rep.add(f"node {n.id}: tensor {n.output.id} produced more than once")
        produced[n.output.id] = n.id
    if _find_cycle(u.nodes):
        rep.add("acyclicity: the node graph contains a cycle")

    all_t = dict(known)
    all_t.update({n.output.id: n.output for n in u.nodes})
    seen = set(known)
    for n in u.nodes:
        missing = [i for i in n.inputs if i not in all_t]
        if missing:
            rep.add(f"node {n.id}: dangling input(s) {missing}")
            continue
        late = [i for i in n.inputs if i not in seen]
        if late and not any("acyclicity" in v for v in rep.violations):
            rep.add(f"node {n.id}: inputs {late} used before produced (not topologically ordered)")
        seen.add(n.output.id)
        for msg in _node_rules(n, [all_t[i] for i in n.inputs]):
            rep.add(f"node {n.id} ({n.op}): {msg}")
    if u.output not in all_t:
        rep.add(f"output {u.output} has no producer")
    elif all_t[u.output].data_kind != VERTEX:
        rep.add(f"output {u.output} must be a vertex tensor")
    return rep


def _node_rules(n: UcgNode, ins: list[TensorRef]) -> Iterable[str]:
    out = n.output
    if n.op not in ALL_OPS:
        yield f"unknown op {n.op!r}"
        return
    if out.dim < 1:
        yield "output dim must be >= 1"
    if n.op in SCATTER_OPS:
        if len(ins) != 1:
            yield "scatter takes one input"
            return
        if ins[0].data_kind != VERTEX:
            yield f"kind mismatch: scatter input must be vertex, got {ins[0].data_kind}"
        if out.data_kind != EDGE:
            yield "scatter output must be edge"
        if ins[0].dim != out.dim:
            yield "scatter must preserve dim"
    elif n.op in GATHER_OPS:
        if len(ins) != 1:
            yield "gather takes one input"
            return
        if ins[0].data_kind != EDGE:
            yield f"kind mismatch: gather input must be edge, got {ins[0].data_kind}"
        if out.data_kind != VERTEX:
            yield "gather output must be vertex"
        if ins[0].dim != out.dim:
            yield "gather must preserve dim"
    elif n.op == "gemm":
        if len(ins) != 2 or ins[1].data_kind != WEIGHT or ins[0].data_kind not in (VERTEX, EDGE):
            yield "gemm takes (vertex|edge, weight)"
            return
        if ins[1].rows != ins[0].dim:
            yield f"gemm shape mismatch: {ins[0].dim} vs weight rows {ins[1].rows}"
        if out.dim != ins[1].dim or out.data_kind != ins[0].data_kind:
            yield "gemm output shape mismatch"
    elif n.op == "fill":
        if ins:
            yield "fill takes no inputs"
        if out.data_kind not in (VERTEX, EDGE):
            yield "fill output must be vertex or edge"
    elif n.op == "concat":
        if len(ins) < 2:
            yield "concat needs >= 2 inputs"
        if any(t.data_kind != out.data_kind for t in ins):
            yield "kind mismatch in concat"
        if sum(t.dim for t in ins) != out.dim:
            yield "concat output dim must be the sum of input dims"
    else:
        arity = 1 if n.op in ELW_UNARY else 2
        if len(ins) != arity:
            yield f"expects {arity} input(s)"
            return
        main = [t for t in ins if t.data_kind not in (SCALAR, WEIGHT)]
        if not main:
            yield "needs a vertex or edge operand"
            return
        if any(t.data_kind != out.data_kind for t in main):
            yield f"kind mismatch: {[t.data_kind for t in main]} -> {out.data_kind}"
        for t in ins:
            if t.data_kind == WEIGHT and not (t.rows == 1 and t.dim == out.dim):
                yield f"weight operand {t.id} must be a (1, {out.dim}) bias row"
            elif t.data_kind not in (SCALAR, WEIGHT) and t.dim not in (out.dim, 1):
                yield f"dim mismatch: {t.id} has {t.dim}, output {out.dim}"
        if max(t.dim for t in main) != out.dim:
            yield "output dim must equal the widest operand"


# --- builders ---------------------------------------------------------------


class _Builder:
    def __init__(self):
        self.nodes: list[UcgNode] = []
        self.inputs: dict[str, TensorRef] = {}
        self.weights: dict[str, TensorRef] = {}

    def input(self, name: str, dim: int, role: str) -> str:
        if name not in self.inputs:
            self.inputs[name] = TensorRef(name, VERTEX, dim, role=role)
        return name

    def weight(self, name: str, rows: int, cols: int) -> str:
        self.weights[name] = TensorRef(name, WEIGHT, cols, rows=rows)
        return name

    def _kind_dim(self, tid: str) -> tuple[str, int]:
        t = self.inputs.get(tid) or self.weights.get(tid)
        if t is None:
            t = next(n.output for n in self.nodes if n.output.id == tid)
        return t.data_kind, t.dim

    def op(self, op: str, inputs: Sequence[str], kind: str | None = None, dim: int | None = None,
           **attrs: float) -> str:
        ins = [self._kind_dim(i) for i in inputs]
        if kind is None:
            kind = "edge" if op in SCATTER_OPS else "vertex" if op in GATHER_OPS else \
                next(k for k, _ in ins if k not in (WEIGHT, SCALAR))
        if dim is None:
            if op == "concat":
                dim = sum(d for _, d in ins)
            elif op == "gemm":
                dim = ins[1][1]
            else:
                dim = max(d for _, d in ins)
        tid = f"t{len(self.nodes)}"
        self.nodes.append(UcgNode(len(self.nodes), op, tuple(inputs), TensorRef(tid, kind, dim),
                                  tuple(sorted(attrs.items()))))
        return tid

    def finish(self, out: str, **meta: str) -> UnifiedGraph:
        return UnifiedGraph(tuple(self.nodes), tuple(self.inputs.values()), tuple(self.weights.values()),
                            out, tuple(sorted(meta.items())))


def _gcn_layer(b: _Builder, h: str, l: int, fi: int, fo: int) -> str:
    dn = b.input("deg_rsqrt", 1, "in_degree_rsqrt")
    s = b.op("mul", [h, dn])
    a = b.op("gather_sum", [b.op("scatter_fwd", [s])])
    z = b.op("gemm", [a, b.weight(f"l{l}.W", fi, fo)])
    return b.op("relu", [b.op("mul", [z, dn])])


def _gat_layer(b: _Builder, h: str, l: int, fi: int, fo: int) -> str:
    z = b.op("gemm", [h, b.weight(f"l{l}.W", fi, fo)])
    el = b.op("gemm", [z, b.weight(f"l{l}.attn_dst", fo, 1)])
    er = b.op("gemm", [z, b.weight(f"l{l}.attn_src", fo, 1)])
    e = b.op("add", [b.op("scatter_bwd", [el]), b.op("scatter_fwd", [er])])
    e = b.op("leakyrelu", [e], slope=LEAKY_SLOPE)
    m = b.op("gather_max", [e])
    p = b.op("exp", [b.op("sub", [e, b.op("scatter_bwd", [m])])])
    s = b.op("gather_sum", [p])
    alpha = b.op("div", [p, b.op("scatter_bwd", [s])])
    msg = b.op("mul", [b.op("scatter_fwd", [z]), alpha])
    return b.op("relu", [b.op("gather_sum", [msg])])


def _sage_layer(b: _Builder, h: str, l: int, fi: int, fo: int) -> str:
    p = b.op("gemm", [h, b.weight(f"l{l}.W_pool", fi, fi)])
    p = b.op("add", [p, b.weight(f"l{l}.b_pool", 1, fi)])
    mx = b.op("gather_max", [b.op("scatter_fwd", [p])])
    # empty neighborhoods: the max identity is masked to 0 before it reaches the gemm
    mx = b.op("mul", [mx, b.input("nonempty", 1, "nonempty")])
    c = b.op("concat", [h, mx])
    return b.op("relu", [b.op("gemm", [c, b.weight(f"l{l}.W", 2 * fi, fo)])])


def _ggnn_layer(b: _Builder, h: str, l: int, fi: int, fo: int) -> str:
    if fi != fo:
        raise UcgError(f"ggnn: GRU hidden state needs equal layer dims, got {fi} -> {fo}")
    w = lambda name, r=fi, c=fo: b.weight(f"l{l}.{name}", r, c)  # noqa: E731
    m = b.op("add", [b.op("gemm", [h, w("W")]), w("b", 1)])
    a = b.op("gather_sum", [b.op("scatter_fwd", [m])])

    def gate(tag: str, act: str) -> str:
        x = b.op("add", [b.op("gemm", [a, w(f"W_i{tag}")]), b.op("gemm", [h, w(f"W_h{tag}")])])
        return b.op(act, [b.op("add", [x, w(f"b_{tag}", 1)])])

    r = gate("r", "sigmoid")
    z = gate("z", "sigmoid")
    gi = b.op("add", [b.op("gemm", [a, w("W_in")]), w("b_in", 1)])
    gh = b.op("add", [b.op("gemm", [h, w("W_hn")]), w("b_hn", 1)])
    n = b.op("tanh", [b.op("add", [gi, b.op("mul", [r, gh])])])
    # (1 - z) * n + z * h, rearranged to avoid a constant
    return b.op("add", [n, b.op("mul", [z, b.op("sub", [h, n])])])


LAYERS = {"gcn": _gcn_layer, "gat": _gat_layer, "sage_pool": _sage_layer, "ggnn": _ggnn_layer}
MODEL_ALIASES = {"sage": "sage_pool", "gg-nn": "ggnn", "gg_nn": "ggnn"}
MODEL_KINDS = tuple(LAYERS)


def canonical_kind(kind: str) -> str:
    k = MODEL_ALIASES.get(kind.lower(), kind.lower())
    if k not in LAYERS:
        raise UcgError(f"unknown model kind {kind!r}; expected one of {', '.join(MODEL_KINDS)}")
    return k


def build_model(kind: str, num_layers: int, dims: Sequence[int]) -> UnifiedGraph:
    kind = canonical_kind(kind)
    if num_layers < 1:
        raise UcgError("num_layers must be >= 1")
    if len(dims) != num_layers + 1:
        raise UcgError(f"need {num_layers + 1} dims, got {len(dims)}")
    if any(int(d) < 1 for d in dims):
        raise UcgError(f"dims must be positive, got {list(dims)}")
    b = _Builder()
    h = b.input("x", int(dims[0]), "feature")
    for l in range(num_layers):
        h = LAYERS[kind](b, h, l, int(dims[l]), int(dims[l + 1]))
    return b.finish(h, kind=kind, layers=str(num_layers))


# --- text format --------------------------------------------------------------
#
#   ucg v1
#   meta <key> <value>
#   input <id> vertex <dim> role=<role>
#   weight <id> <rows> <cols>
#   node <id> <op> <out-id> <kind> <dim> <- <in-id> ... [key=value ...]
#   output <id>


def save_ucg(u: UnifiedGraph) -> str:
    out = [f"ucg v{UCG_FORMAT_VERSION}"]
    out += [f"meta {k} {v}" for k, v in u.meta]
    out += [f"input {t.id} {t.data_kind} {t.dim} role={t.role}" for t in u.inputs]
    out += [f"weight {w.id} {w.rows} {w.dim}" for w in u.weights]
    for n in u.nodes:
        attrs = "".join(f" {k}={v!r}" for k, v in n.attrs)
        ins = " ".join(n.inputs)
        out.append(f"node {n.id} {n.op} {n.output.id} {n.output.data_kind} {n.output.dim} <- {ins}{attrs}".rstrip())
    out.append(f"output {u.output}")
    return "\n".join(out) + "\n"


def load_ucg(text: TextIO | str) -> UnifiedGraph:
    if not isinstance(text, str):
        text = text.read()
    lines = [(k, ln.split("#", 1)[0].strip()) for k, ln in enumerate(io.StringIO(text), start=1)]
    lines = [(k, ln) for k, ln in lines if ln]
    if not lines:
        raise UcgError("empty model file")
    k0, head = lines[0]
    if head != f"ucg v{UCG_FORMAT_VERSION}":
        raise UcgError(f"line {k0}: expected 'ucg v{UCG_FORMAT_VERSION}' header")
    meta, inputs, weights, nodes = [], [], [], []
    output = None
    for k, ln in lines[1:]:
        tok = ln.split()
        try:
            if tok[0] == "meta":
                meta.append((tok[1], " ".join(tok[2:])))
            elif tok[0] == "input":
                role = tok[4].split("=", 1)[1] if len(tok) > 4 else "feature"
                inputs.append(TensorRef(tok[1], tok[2], int(tok[3]), role=role))
            elif tok[0] == "weight":
                weights.append(TensorRef(tok[1], WEIGHT, int(tok[3]), rows=int(tok[2])))
            elif tok[0] == "node":
                _, nid, op, oid, kind, dim, arrow, *rest = tok
                if op not in ALL_OPS:
                    raise UcgError(f"line {k}: unknown op {op!r}")
                if arrow != "<-":
                    raise UcgError(f"line {k}: expected '<-'")
                ins = tuple(t for t in rest if "=" not in t)
                attrs = tuple((a, float(v)) for a, v in (t.split("=", 1) for t in rest if "=" in t))
                nodes.append(UcgNode(int(nid), op, ins, TensorRef(oid, kind, int(dim)), tuple(sorted(attrs))))
            elif tok[0] == "output":
                output = tok[1]
            else:
                raise UcgError(f"line {k}: unknown record {tok[0]!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, UcgError):
                raise
            raise UcgError(f"line {k}: malformed record {ln!r}") from None
    if output is None:
        raise UcgError("missing output record")
    known = {t.id for t in inputs} | {w.id for w in weights} | {n.output.id for n in nodes}
    for n in nodes:
        for i in n.inputs:
            if i not in known:
                raise UcgError(f"node {n.id}: dangling tensor id {i!r}")
    if output not in known:
        raise UcgError(f"dangling output id {output!r}")
    return UnifiedGraph(tuple(nodes), tuple(inputs), tuple(weights), output, tuple(meta))


def role_array(role: str, g, features=None, dtype=np.float32) -> np.ndarray:
    """Per-vertex (n, k) array for a graph input role."""
    d = g.in_degree.astype(np.float64)
    if role == "feature":
        if features is None:
            raise UcgError("feature input needs a feature matrix")
        x = np.asarray(features, dtype=dtype)
        if x.ndim != 2 or x.shape[0] != g.num_vertices:
            raise UcgError(f"features must be ({g.num_vertices}, dim), got {x.shape}")
        return x
    if role == "in_degree":
        return np.maximum(d, 1.0).astype(dtype)[:, None]
    if role == "in_degree_rsqrt":
        return (1.0 / np.sqrt(np.maximum(d, 1.0))).astype(dtype)[:, None]
    if role == "nonempty":
        return (d > 0).astype(dtype)[:, None]
    raise UcgError(f"unknown input role {role!r}")
