"""Cut a UCG into Scatter/Gather/Apply phase groups and generate ISA code.

Group ``k`` holds the gathers whose longest chain of gather ancestors has
length ``k``.  Each value is materialized where it is demanded:

* ``S``  -- streamed over a shard's source rows in ScatterPhase (per-source
  transforms with no gather ancestor), or loaded with LD.S if it was
  produced in an earlier group;
* ``E``  -- edge values, recomputed in every GatherPhase that needs them;
* ``DS`` / ``DA`` -- destination rows of the current interval, available in
  ScatterPhase (to feed SCTR.B) or ApplyPhase.

Values that cross group boundaries are written back with ST.D and loaded
again (LD.D or LD.S) where they are consumed.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, replace

import numpy as np

from .isa import (ELW_OPCODES, Group, InputDecl, Instruction, Operand, ProgramBundle, Symbol)
from .model_ir import (EDGE, GATHER_OPS, GTR_OPS, SCATTER_OPS, VERTEX, WEIGHT, TensorRef, UcgError,
                       UcgNode, UnifiedGraph, validate_ucg)

FLT_LOWEST = float(np.finfo(np.float32).min)
GATHER_IDENTITY = {"gather_sum": 0.0, "gather_max": FLT_LOWEST}

OPCODE = {
    "add": "ADD", "sub": "SUB", "mul": "MUL", "div": "DIV", "exp": "EXP", "relu": "RELU",
    "leakyrelu": "LRELU", "sigmoid": "SIGM", "tanh": "TANH", "fill": "FILL", "concat": "CONCAT",
    "gemm": "GEMM", "scatter_fwd": "SCTR.F", "scatter_bwd": "SCTR.B",
    "gather_sum": "GTHR.SUM.F", "gather_max": "GTHR.MAX.F",
}

LABEL_RANK = {"src": 1, "edge": 2, "dst": 3}
IN_PLACE_OPS = tuple(op for op in ELW_OPCODES if op not in ("CONCAT", "FILL"))


class CompileError(ValueError):
    pass


# --- preprocessing ------------------------------------------------------------------


def lower_mean(u: UnifiedGraph) -> UnifiedGraph:
    """Rewrite gather_mean as gather_sum followed by a divide by max(d, 1)."""
    if not any(n.op == "gather_mean" for n in u.nodes):
        return u
    inputs = list(u.inputs)
    deg = next((t for t in inputs if t.role == "in_degree"), None)
    if deg is None:
        deg = TensorRef("deg", VERTEX, 1, role="in_degree")
        inputs.append(deg)
    nodes: list[UcgNode] = []
    rename: dict[str, str] = {}
    next_id = max(n.id for n in u.nodes) + 1
    for n in u.nodes:
        n = replace(n, inputs=tuple(rename.get(i, i) for i in n.inputs))
        if n.op != "gather_mean":
            nodes.append(n)
            continue
        acc = TensorRef(f"{n.output.id}.sum", VERTEX, n.output.dim)
        nodes.append(UcgNode(n.id, "gather_sum", n.inputs, acc))
        nodes.append(UcgNode(next_id, "div", (acc.id, deg.id), n.output))
        next_id += 1
    # ids must stay increasing along the list for the topological tie-break
    nodes = [replace(n, id=k) for k, n in enumerate(nodes)]
    return UnifiedGraph(tuple(nodes), tuple(inputs), u.weights, u.output, u.meta)


def prune_dead(u: UnifiedGraph) -> UnifiedGraph:
    prod = u.producers()
    live: set[str] = set()
    stack = [u.output]
    while stack:
        t = stack.pop()
        if t in live:
            continue
        live.add(t)
        if t in prod:
            stack.extend(prod[t].inputs)
    nodes = tuple(n for n in u.nodes if n.output.id in live)
    return UnifiedGraph(nodes, tuple(t for t in u.inputs if t.id in live),
                        tuple(w for w in u.weights if w.id in live), u.output, u.meta)


# --- labeling ---------------------------------------------------------------------


@dataclass
class LabeledGraph:
    ucg: UnifiedGraph
    labels: dict[tuple[str, int, int], str]  # (tensor, consumer node id, input slot) -> label

    def label(self, tensor: str, node_id: int, slot: int = 0) -> str:
        return self.labels[(tensor, node_id, slot)]

    def labels_into(self, node_id: int) -> list[str]:
        return [v for (t, n, s), v in sorted(self.labels.items(), key=lambda kv: kv[0][2]) if n == node_id]


def label_dataflow(u: UnifiedGraph) -> LabeledGraph:
    rep = validate_ucg(u)
    if rep:
        raise CompileError("invalid UCG: " + "; ".join(rep.violations[:5]))
    prod = u.producers()
    cons = defaultdict(list)
    for n in u.nodes:
        for s, t in enumerate(n.inputs):
            cons[t].append((n, s))
    labels: dict[tuple[str, int, int], str] = {}

    def put(key, lab):
        if key not in labels or LABEL_RANK[lab] > LABEL_RANK[labels[key]]:
            labels[key] = lab

    def forward(n: UcgNode, lab: str):
        stack, seen = [n], set()
        while stack:
            m = stack.pop()
            for c, s in cons[m.output.id]:
                put((m.output.id, c.id, s), lab)
                if c.op not in GTR_OPS and c.id not in seen:
                    seen.add(c.id)
                    stack.append(c)

    def backward(n: UcgNode, lab: str):
        stack, seen = [n], set()
        while stack:
            m = stack.pop()
            for s, t in enumerate(m.inputs):
                put((t, m.id, s), lab)
                p = prod.get(t)
                if p is not None and p.op not in GTR_OPS and p.id not in seen:
                    seen.add(p.id)
                    stack.append(p)

    for n in u.nodes:
        if n.op in GATHER_OPS:
            forward(n, "dst")
            backward(n, "edge")
        elif n.op in SCATTER_OPS:
            forward(n, "edge")
            backward(n, "src" if n.op == "scatter_fwd" else "dst")

    # edges outside every GTR region inherit a neighbouring region's label
    keys = [(t, n.id, s) for n in u.nodes for s, t in enumerate(n.inputs)]
    changed = True
    while changed:
        changed = False
        for t, nid, s in keys:
            if (t, nid, s) in labels:
                continue
            outs = [labels[(x, c.id, k)] for x in (u.node(nid).output.id,) for c, k in cons[x]
                    if (x, c.id, k) in labels]
            p = prod.get(t)
            ins = [labels[(x, p.id, k)] for k, x in enumerate(p.inputs) if (x, p.id, k) in labels] if p else []
            cand = outs or ins
            if cand:
                labels[(t, nid, s)] = max(cand, key=LABEL_RANK.get)
                changed = True
    for key in keys:
        labels.setdefault(key, "dst")
    return LabeledGraph(u, labels)


# --- placement --------------------------------------------------------------------

S, DS, E, G, DA = "S", "DS", "E", "G", "DA"  # contexts; G = the gather instruction itself
PHASE_OF = {DS: "scatter", S: "scatter", E: "gather", G: "gather", DA: "apply"}


@dataclass
class Placement:
    ucg: UnifiedGraph
    num_groups: int
    level: dict[str, int]  # tensor -> gather level of its value (-1: no gather ancestor)
    compute: dict[int, set[tuple[str, int]]]  # node id -> {(context, group)}
    loads: set[tuple[str, str, int]]  # (tensor, context, group)
    stores: dict[str, tuple[str, int]]  # tensor -> home (context, group)
    fills: dict[int, int]  # gather node id -> group


def place(lg: LabeledGraph) -> Placement:
    u = prune_dead(lg.ucg)
    prod = u.producers()
    weights = {w.id for w in u.weights}
    level: dict[str, int] = {t.id: -1 for t in u.inputs}
    level.update({w.id: -1 for w in u.weights})
    for n in u.nodes:
        m = max((level[i] for i in n.inputs), default=-1)
        level[n.output.id] = m + 1 if n.op in GATHER_OPS else m
    gather_levels = [level[n.output.id] for n in u.nodes if n.op in GATHER_OPS]
    num_groups = max(gather_levels) + 1 if gather_levels else 1

    demands: dict[str, set[tuple[str, int]]] = defaultdict(set)
    compute: dict[int, set[tuple[str, int]]] = defaultdict(set)
    loads: set[tuple[str, str, int]] = set()
    stores: dict[str, tuple[str, int]] = {}
    fills: dict[int, int] = {}
    demands[u.output].add((DA, num_groups - 1))

    def need(t: str, ctx: str, k: int):
        if t not in weights:
            demands[t].add((ctx, k))

    def feed(n: UcgNode, ctx: str, k: int):
        for t in n.inputs:
            if n.op == "scatter_fwd":
                need(t, S, k)
            elif n.op == "scatter_bwd":
                need(t, DS, k)
            elif n.op in GATHER_OPS:
                need(t, E, k)
            else:
                need(t, ctx, k)

    def spill(t: str, home: tuple[str, int], away: set[tuple[str, int]]):
        if away:
            stores[t] = home
            loads.update((t, c, k) for c, k in away)

    for n in reversed(u.nodes):
        t = n.output.id
        dem = demands.get(t, set())
        a = level[t]
        if n.output.data_kind == EDGE:
            for c, k in dem:
                if c != E:
                    raise CompileError(f"edge tensor {t} demanded in {c} context")
                compute[n.id].add((E, k))
                feed(n, E, k)
        elif n.op in GATHER_OPS:
            compute[n.id].add((G, a))
            fills[n.id] = a
            feed(n, G, a)
            spill(t, (DA, a), {d for d in dem if d != (DA, a)})
        elif a >= 0:
            if dem:
                compute[n.id].add((DA, a))
                feed(n, DA, a)
            spill(t, (DA, a), {d for d in dem if d != (DA, a)})
        else:
            for c, k in dem:
                if c == S:
                    compute[n.id].add((S, k))
                    feed(n, S, k)
            dd = {d for d in dem if d[0] in (DS, DA)}
            if dd:
                hk = min(k for _, k in dd)
                hc = DS if (DS, hk) in dd else DA
                compute[n.id].add((hc, hk))
                feed(n, hc, hk)
                spill(t, (hc, hk), {(c, k) for c, k in dd if k != hk})
    for t in u.inputs:
        dem = demands.get(t.id, set())
        for c, k in dem:
            if c == DA and (DS, k) in dem:
                continue  # loaded once in ScatterPhase, still resident in ApplyPhase
            loads.add((t.id, c, k))
    if u.output not in stores:
        stores[u.output] = (DA, num_groups - 1)
        if u.output not in prod:
            loads.add((u.output, DA, num_groups - 1))
    return Placement(u, num_groups, level, dict(compute), loads, stores, fills)


@dataclass(frozen=True)
class PhaseGroup:
    scatter_ops: tuple[UcgNode, ...]
    gather_ops: tuple[UcgNode, ...]
    apply_ops: tuple[UcgNode, ...]

    def all_ops(self) -> tuple[UcgNode, ...]:
        return self.scatter_ops + self.gather_ops + self.apply_ops


def cut_groups(lg: LabeledGraph) -> list[list[int]]:
    """Node ids placed in each group (a node may be replicated across groups)."""
    p = place(lg)
    out: list[set[int]] = [set() for _ in range(p.num_groups)]
    for nid, sites in p.compute.items():
        for _, k in sites:
            out[k].add(nid)
    return [sorted(s) for s in out]


def assign_phases(k: int, lg: LabeledGraph | Placement) -> PhaseGroup:
    p = lg if isinstance(lg, Placement) else place(lg)
    by_phase: dict[str, set[int]] = {"scatter": set(), "gather": set(), "apply": set()}
    for nid, sites in p.compute.items():
        for c, g in sites:
            if g == k:
                by_phase[PHASE_OF[c]].add(nid)
    pick = lambda ph: tuple(p.ucg.node(i) for i in sorted(by_phase[ph]))  # noqa: E731
    return PhaseGroup(pick("scatter"), pick("gather"), pick("apply"))


# --- codegen ----------------------------------------------------------------------


class _Symbols:
    def __init__(self):
        self.table: dict[tuple[str, str, int], str] = {}
        self.dims: dict[str, Symbol] = {}
        self.count: dict[str, int] = defaultdict(int)

    def get(self, tensor: str, typ: str, k: int, dim: int) -> str:
        key = (tensor, typ, k)
        if key not in self.table:
            name = f"{typ}{self.count[typ]}"
            self.count[typ] += 1
            self.table[key] = name
            self.dims[name] = Symbol(name, dim)
        return self.table[key]


SYM_TYPE = {S: "S", DS: "D", DA: "D", E: "E", G: "E"}
ROW = {"D": "V", "S": "S", "E": "E"}


def codegen(lg: LabeledGraph | Placement) -> ProgramBundle:
    p = lg if isinstance(lg, Placement) else place(lg)
    u = p.ucg
    tensors = u.tensors()
    syms = _Symbols()
    wsym = {w.id: f"W{k}" for k, w in enumerate(u.weights)}
    wtab = [Symbol(wsym[w.id], w.dim, w.rows) for w in u.weights]
    init = tuple(Instruction("LD.W", Operand(wsym[w.id], (w.rows, w.dim)), mem=w.id) for w in u.weights)

    def opnd(t: str, typ: str, k: int) -> Operand:
        ref = tensors[t]
        if ref.data_kind == WEIGHT:
            return Operand(wsym[t], (ref.rows, ref.dim))
        return Operand(syms.get(t, typ, k, ref.dim), (ROW[typ], ref.dim))

    def compute_instr(n: UcgNode, ctx: str, k: int) -> Instruction:
        if n.op in GATHER_OPS:
            dst = opnd(n.output.id, "D", k)
            return Instruction(OPCODE[n.op], dst, (opnd(n.inputs[0], "E", k),))
        typ = SYM_TYPE[ctx]
        dst = opnd(n.output.id, typ, k)
        if n.op == "scatter_fwd":
            srcs = (opnd(n.inputs[0], "S", k),)
        elif n.op == "scatter_bwd":
            srcs = (opnd(n.inputs[0], "D", k),)
        else:
            srcs = tuple(opnd(t, typ, k) for t in n.inputs)
        imm: tuple[float, ...] = ()
        if n.op == "leakyrelu":
            imm = (float(n.attr("slope", 0.2)),)
        elif n.op == "fill":
            imm = (float(n.attr("value", 0.0)),)
        return Instruction(OPCODE[n.op], dst, srcs, imm)

    consumers_at: dict[tuple[str, str, int], list[int]] = defaultdict(list)
    for nid, sites in p.compute.items():
        n = u.node(nid)
        for c, k in sites:
            for t in n.inputs:
                if n.op == "scatter_fwd":
                    cc = S
                elif n.op == "scatter_bwd":
                    cc = DS
                elif n.op in GATHER_OPS:
                    cc = E
                else:
                    cc = c
                consumers_at[(t, cc, k)].append(nid)

    groups = []
    for k in range(p.num_groups):
        local, stream, gather, apply = [], [], [], []
        for nid, k2 in p.fills.items():
            if k2 == k:
                n = u.node(nid)
                local.append(((-1, nid, 0), Instruction(
                    "FILL", opnd(n.output.id, "D", k), imm=(GATHER_IDENTITY[n.op],))))
        for t, c, k2 in sorted(p.loads):
            if k2 != k:
                continue
            first = min(consumers_at.get((t, c, k), [10 ** 9]))
            if c == S:
                stream.append(((-1, first, 0), Instruction("LD.S", opnd(t, "S", k), mem=t)))
            else:
                if c == DS:
                    # a D value feeding SCTR.B is consumed in GatherPhase; load it last in ScatterPhase
                    first = min(consumers_at.get((t, DS, k), [10 ** 9]))
                (local if c == DS else apply).append(((first, -1, 0), Instruction("LD.D", opnd(t, "D", k), mem=t)))
        for nid, sites in p.compute.items():
            n = u.node(nid)
            for c, k2 in sorted(sites):
                if k2 != k:
                    continue
                ins = compute_instr(n, c, k)
                {S: stream, DS: local, E: gather, G: gather, DA: apply}[c].append(((nid, 0, 1), ins))
        for t, (c, k2) in p.stores.items():
            if k2 != k:
                continue
            src = opnd(t, "D", k)
            n = u.producers().get(t)
            key = (-1, n.id, 2) if n is not None and n.op in GATHER_OPS else ((n.id if n else -1), 0, 2)
            (local if c == DS else apply).append((key, Instruction("ST.D", None, (src,), mem=t)))
        srt = lambda xs: tuple(i for _, i in sorted(xs, key=lambda x: x[0]))  # noqa: E731
        groups.append(Group(srt(local) + srt(stream), srt(gather), srt(apply)))

    inputs = tuple(InputDecl(t.id, t.role, t.dim) for t in u.inputs)
    symbols = tuple(wtab) + tuple(syms.dims.values())
    b = ProgramBundle(tuple(groups), symbols, init, inputs, u.output, tensors[u.output].dim)
    return canonicalize(b)


# --- liveness -----------------------------------------------------------------------


def _linear(b: ProgramBundle):
    """Yield (position, group, section, instruction) in execution order."""
    pos = 0
    for k, g in enumerate(b.groups):
        for sec, instrs in (("local", g.scatter_local), ("stream", g.scatter_stream),
                            ("gather", g.gather), ("apply", g.apply)):
            for i in instrs:
                yield pos, k, sec, i
                pos += 1


def live_ranges(b: ProgramBundle) -> dict[str, tuple[int, int]]:
    first: dict[str, int] = {}
    last: dict[str, int] = {}
    gspan: dict[int, tuple[int, int]] = {}
    items = list(_linear(b))
    for pos, k, sec, _ in items:
        if sec == "gather":
            lo, hi = gspan.get(k, (pos, pos))
            gspan[k] = (min(lo, pos), max(hi, pos))
    for pos, k, sec, i in items:
        for s in i.symbols():
            if s[0] == "W":
                continue
            lo = hi = pos
            if s[0] == "D" and sec == "gather":
                # shared destination rows stay live while any shard may still touch them
                lo, hi = gspan[k]
            first[s] = min(first.get(s, lo), lo)
            last[s] = max(last.get(s, hi), hi)
    return {s: (first[s], last[s]) for s in first}


def liveness_merge(b: ProgramBundle) -> ProgramBundle:
    """Reuse a symbol once its previous occupant is dead.

    Symbols of the same type and dim share storage when the earlier one's
    last use precedes the later one's first definition.  An element-wise
    instruction may also overwrite the operand it consumes last.
    """
    ranges = live_ranges(b)
    table = b.symbol_table()
    in_place: set[tuple[str, str]] = set()
    for pos, _, sec, i in _linear(b):
        if i.op in IN_PLACE_OPS and i.dst is not None:
            for s in i.srcs:
                if s.type == i.dst.type and s.sym != i.dst.sym and ranges[s.sym][1] == pos \
                        and ranges[i.dst.sym][0] == pos and table[s.sym].dim == table[i.dst.sym].dim:
                    in_place.add((s.sym, i.dst.sym))
    order = sorted(ranges, key=lambda s: (ranges[s][0], s[0], int(s[1:])))
    phys_end: dict[str, int] = {}
    phys_last_sym: dict[str, str] = {}
    rename: dict[str, str] = {}
    for s in order:
        lo, hi = ranges[s]
        key = (s[0], table[s].dim)
        choice = None
        for ph in sorted(phys_end, key=lambda x: int(x[1:])):
            if (ph[0], table[ph].dim) != key:
                continue
            if phys_end[ph] < lo or (phys_end[ph] == lo and (phys_last_sym[ph], s) in in_place):
                choice = ph
                break
        if choice is None:
            choice = s
        rename[s] = choice
        phys_end[choice] = hi
        phys_last_sym[choice] = s

    def ren(o: Operand) -> Operand:
        return Operand(rename.get(o.sym, o.sym), o.dims)

    def ren_i(i: Instruction) -> Instruction:
        return replace(i, dst=ren(i.dst) if i.dst else None, srcs=tuple(ren(s) for s in i.srcs))

    groups = tuple(Group(*(tuple(ren_i(i) for i in g.phase(ph)) for ph in ("scatter", "gather", "apply")))
                   for g in b.groups)
    kept = {rename.get(s.name, s.name) for s in b.symbols}
    symbols = tuple(s for s in b.symbols if s.name in kept)
    return canonicalize(replace(b, groups=groups, symbols=symbols))


def canonicalize(b: ProgramBundle) -> ProgramBundle:
    """Renumber symbols per type in order of first appearance."""
    table = b.symbol_table()
    rename: dict[str, str] = {}
    count: dict[str, int] = defaultdict(int)
    for i in b.instructions():
        for s in i.symbols():
            if s not in rename:
                rename[s] = f"{s[0]}{count[s[0]]}"
                count[s[0]] += 1
    ren = lambda o: Operand(rename[o.sym], o.dims)  # noqa: E731
    ren_i = lambda i: replace(i, dst=ren(i.dst) if i.dst else None, srcs=tuple(ren(s) for s in i.srcs))  # noqa: E731
    groups = tuple(Group(*(tuple(ren_i(i) for i in g.phase(ph)) for ph in ("scatter", "gather", "apply")))
                   for g in b.groups)
    symbols = sorted((replace(table[old], name=new) for old, new in rename.items()),
                     key=lambda s: ("WDSE".index(s.name[0]), int(s.name[1:])))
    return replace(b, groups=groups, init=tuple(ren_i(i) for i in b.init), symbols=tuple(symbols))


# --- partitioning parameters ---------------------------------------------------------


@dataclass(frozen=True)
class Sidecar:
    dim_src: int
    dim_edge: int
    dim_dst: int
    group_dim_src: tuple[int, ...]
    group_dim_edge: tuple[int, ...]
    group_dim_dst: tuple[int, ...]
    group_dim_src_loaded: tuple[int, ...]  # per-row elements fetched by LD.S per shard
    weight_elements: int
    symbol_dims: tuple[tuple[str, int], ...]

    def to_dict(self) -> dict:
        return {
            "dim_src": self.dim_src, "dim_edge": self.dim_edge, "dim_dst": self.dim_dst,
            "group_dim_src": list(self.group_dim_src), "group_dim_edge": list(self.group_dim_edge),
            "group_dim_dst": list(self.group_dim_dst), "group_dim_src_loaded": list(self.group_dim_src_loaded),
            "weight_elements": self.weight_elements, "symbol_dims": dict(self.symbol_dims),
        }


def sidecar(b: ProgramBundle) -> Sidecar:
    table = b.symbol_table()
    per: dict[str, list[int]] = {t: [] for t in "SED"}
    loaded = []
    for g in b.groups:
        used = {s for i in g.instructions() for s in i.symbols()}
        for t in per:
            per[t].append(sum(table[s].dim for s in used if s[0] == t))
        loaded.append(sum(i.dst.dims[1] for i in g.scatter if i.op == "LD.S"))
    mx = lambda xs: max(xs, default=0)  # noqa: E731
    return Sidecar(mx(per["S"]), mx(per["E"]), mx(per["D"]), tuple(per["S"]), tuple(per["E"]),
                   tuple(per["D"]), tuple(loaded),
                   sum(s.dim * s.rows for s in b.symbols if s.type == "W"),
                   tuple((s.name, s.dim if s.type != "W" else s.dim * s.rows) for s in b.symbols))


def partition_params(b: ProgramBundle) -> tuple[int, int]:
    sc = sidecar(b)
    return sc.dim_src, sc.dim_edge


def compile_model(u: UnifiedGraph, merge: bool = True) -> ProgramBundle:
    try:
        lg = label_dataflow(lower_mean(u))
    except UcgError as exc:
        raise CompileError(str(exc)) from exc
    b = codegen(lg)
    return liveness_merge(b) if merge else b
