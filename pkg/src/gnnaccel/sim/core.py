"""Event-driven simulation of the phase-scheduled accelerator.

One iThread runs each interval's ScatterPhase and ApplyPhase.  ``num_sthread``
sThreads each own a slot of the source/edge buffer and the graph buffer.
A stale slot claims the next shard of the group (shards are claimed in
interval order, possibly ahead of the iThread), fetches its COO and source
rows through the LSU, then waits until the iThread has issued the shard's
interval ScatterPhase before running the streamed per-source ops and the
GatherPhase.  ApplyPhase of an interval starts once every shard of that
interval has been issued; the scoreboard holds it until the reductions land.

Each thread issues in order, one instruction per cycle, when the target
unit is free and the scoreboard reports its operands ready.  VU and MU are
single-server units; memory instructions go through a one-per-cycle LSU into
a FIFO DRAM channel.  Values are computed when an instruction issues, so the
functional result depends only on the issue order of the reductions.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..compiler import partition_params
from ..graph import Graph, PartitionPlan, Shard, VertexInterval
from ..isa import (ELW_OPCODES, GATHER_OPCODES, GroupLayout, Instruction, ProgramBundle, ResolutionError,
                   resolve)
from ..model_ir import role_array
from ..partition import shard_graph_bytes
from .config import ConfigError, SimConfig
from .stats import Stats
from .timing import DramChannel, mu_cycles, vu_cycles


class SimulationFault(RuntimeError):
    pass


class SizingError(ValueError):
    pass


@dataclass
class RunResult:
    output: np.ndarray
    stats: Stats
    phase_trace: list[tuple] = field(default_factory=list)
    trace_csv: str | None = None


# --- functional state -------------------------------------------------------------


@dataclass
class _ShardView:
    shard: Shard
    sources: np.ndarray
    src_slot: np.ndarray
    dst_local: np.ndarray
    useless: int

    @classmethod
    def of(cls, s: Shard, iv: VertexInterval) -> "_ShardView":
        src = np.asarray(s.sources, dtype=np.int64)
        ss = np.asarray(s.coo_src, dtype=np.int64)
        dl = np.asarray(s.coo_dst, dtype=np.int64) - iv.dst_begin
        used = np.zeros(len(src), dtype=bool)
        used[ss] = True
        return cls(s, src, ss, dl, int((~used).sum()))


class Machine:
    """Buffers, DRAM contents and instruction semantics (no timing)."""

    def __init__(self, b: ProgramBundle, g: Graph, features, weights: Mapping[str, np.ndarray]):
        self.b = b
        self.dram: dict[str, np.ndarray] = {}
        for d in b.inputs:
            arr = role_array(d.role, g, features)
            if arr.shape[1] != d.dim:
                raise ConfigError(f"input {d.name}: expected dim {d.dim}, got {arr.shape[1]}")
            self.dram[d.name] = arr
        for i in b.instructions():
            if i.op == "ST.D" and i.mem not in self.dram:
                self.dram[i.mem] = np.zeros((g.num_vertices, i.srcs[0].dims[1]), dtype=np.float32)
        table = b.symbol_table()
        self.weights: dict[str, np.ndarray] = {}
        for i in b.init:
            s = table[i.dst.sym]
            if i.mem not in weights:
                raise ConfigError(f"missing weight {i.mem!r}")
            w = np.asarray(weights[i.mem], dtype=np.float32)
            if w.shape != (s.rows, s.dim):
                raise ConfigError(f"weight {i.mem}: expected shape {(s.rows, s.dim)}, got {w.shape}")
            self.weights[i.mem] = w
        self.D: dict[str, np.ndarray] = {}
        self.SE: dict[tuple[int, str], np.ndarray] = {}
        self.W: dict[str, np.ndarray] = {}

    def _get(self, o, slot: int) -> np.ndarray:
        if o.type == "D":
            return self.D[o.sym]
        if o.type == "W":
            return self.W[o.sym]
        return self.SE[(slot, o.sym)]

    def _put(self, o, slot: int, val: np.ndarray) -> None:
        val = np.asarray(val, dtype=np.float32)
        if o.type == "D":
            self.D[o.sym] = val
        elif o.type == "W":
            self.W[o.sym] = val
        else:
            self.SE[(slot, o.sym)] = val

    def execute(self, i: Instruction, iv: VertexInterval | None, sv: _ShardView | None, slot: int) -> None:
        op = i.op
        if op == "LD.W":
            self.W[i.dst.sym] = self.weights[i.mem]
            return
        if op == "LD.D":
            self._put(i.dst, slot, self.dram[i.mem][iv.dst_begin:iv.dst_end].copy())
            return
        if op == "LD.S":
            self._put(i.dst, slot, self.dram[i.mem][sv.sources])
            return
        if op == "ST.D":
            self.dram[i.mem][iv.dst_begin:iv.dst_end] = self._get(i.srcs[0], slot)
            return
        if op == "FILL":
            rows = {"D": iv.width if iv else 0, "S": len(sv.sources) if sv else 0,
                    "E": len(sv.src_slot) if sv else 0}[i.dst.type]
            self._put(i.dst, slot, np.full((rows, i.dst.dims[1]), i.imm[0], dtype=np.float32))
            return
        if op in GATHER_OPCODES:
            acc = self.D[i.dst.sym]
            e = self._get(i.srcs[0], slot)
            (np.add if op == "GTHR.SUM.F" else np.maximum).at(acc, sv.dst_local, e)
            return
        a = [self._get(s, slot) for s in i.srcs]
        if op == "SCTR.F":
            r = a[0][sv.src_slot]
        elif op == "SCTR.B":
            r = a[0][sv.dst_local]
        elif op == "GEMM":
            r = a[0] @ a[1]
        elif op == "CONCAT":
            r = np.concatenate(a, axis=1)
        else:
            r = _elw(op, a, i.imm)
        self._put(i.dst, slot, r)


def _elw(op: str, a: list[np.ndarray], imm: tuple[float, ...]) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if op == "ADD":
            return a[0] + a[1]
        if op == "SUB":
            return a[0] - a[1]
        if op == "MUL":
            return a[0] * a[1]
        if op == "DIV":
            return a[0] / a[1]
        if op == "EXP":
            return np.exp(a[0])
        if op == "RELU":
            return np.maximum(a[0], np.float32(0))
        if op == "LRELU":
            return np.where(a[0] > 0, a[0], a[0] * np.float32(imm[0]))
        if op == "SIGM":
            return np.float32(1) / (np.float32(1) + np.exp(-a[0]))
        if op == "TANH":
            return np.tanh(a[0])
    raise SimulationFault(f"no semantics for {op}")


# --- checks -------------------------------------------------------------------------


def _check_inputs(b: ProgramBundle, p: PartitionPlan, g: Graph, cfg: SimConfig, check_sidecar: bool):
    if check_sidecar and tuple(p.dims) != partition_params(b):
        raise ConfigError(f"plan was sized for dims {tuple(p.dims)}, bundle needs {partition_params(b)}")
    covered = sum(iv.width for iv in p.intervals)
    if covered != g.num_vertices:
        raise ConfigError(f"plan covers {covered} vertices, graph has {g.num_vertices}")


def _layouts(b: ProgramBundle, p: PartitionPlan, cfg: SimConfig) -> list[list[GroupLayout]]:
    width = max((iv.width for iv in p.intervals), default=0)
    out = []
    for k in range(len(b.groups)):
        per_slot = [GroupLayout.for_group(b, k, width, cfg.dst_buffer, cfg.srcedge_buffer, cfg.weight_buffer,
                                          cfg.num_sthread, slot) for slot in range(cfg.num_sthread)]
        per_slot[0].offsets(0, 0)  # destination and weight buffers must fit regardless of shards
        out.append(per_slot)
    return out


def _graph_bytes_check(s: Shard, cfg: SimConfig) -> int:
    nbytes = shard_graph_bytes(s.num_src, s.num_edge)
    if nbytes > cfg.graph_slot_bytes:
        raise SizingError(f"shard COO needs {nbytes} B but a graph-buffer slot holds {cfg.graph_slot_bytes} B")
    return nbytes


# --- sequential reference -------------------------------------------------------------


def interpret(b: ProgramBundle, p: PartitionPlan, g: Graph, features, weights,
              cfg: SimConfig | None = None, check_sidecar: bool = True) -> np.ndarray:
    """Run the bundle in plain program order: the loop the hardware overlaps."""
    cfg = cfg or SimConfig(num_sthread=1)
    _check_inputs(b, p, g, cfg, check_sidecar)
    m = Machine(b, g, features, weights)
    for i in b.init:
        m.execute(i, None, None, 0)
    for k, grp in enumerate(b.groups):
        local, stream = grp.scatter_local, grp.scatter_stream
        for iv, shards in zip(p.intervals, p.shards):
            for i in local:
                m.execute(i, iv, None, 0)
            for s in shards:
                sv = _ShardView.of(s, iv)
                for i in (*stream, *grp.gather):
                    m.execute(i, iv, sv, 0)
            for i in grp.apply:
                m.execute(i, iv, None, 0)
    return m.dram[b.output].copy()


# --- timed simulation -----------------------------------------------------------------


_MARK = "mark"
_NO_INTERVAL = VertexInterval(-1, 0, 0)


def _weight_bytes(i: Instruction) -> int:
    rows, cols = i.dst.dims
    return int(rows) * int(cols) * 4


class _Thread:
    def __init__(self, name: str, slot: int):
        self.name = name
        self.slot = slot
        self.ops: list = []
        self.pos = 0
        self.next_free = 0

    def head(self):
        return self.ops[self.pos] if self.pos < len(self.ops) else None


class _Engine:
    def __init__(self, b: ProgramBundle, cfg: SimConfig, stats: Stats, trace: list | None):
        self.b = b
        self.cfg = cfg
        self.stats = stats
        self.chan = DramChannel(cfg)
        self.unit_free = {"VU": 0, "MU": 0, "LSU": 0}
        self.wdone: dict = defaultdict(int)
        self.rdone: dict = defaultdict(int)
        self.last_done = 0
        self.trace = trace

    @staticmethod
    def _key(sym: str, slot: int):
        return ("G", sym) if sym[0] in "DW" else (slot, sym)

    def cost(self, i: Instruction, r) -> tuple[str, int]:
        if i.is_memory:
            o = r.dst if r.dst is not None else r.srcs[0]
            return "LSU", o.extent
        if i.op == "GEMM":
            return "MU", mu_cycles(r.srcs[0].rows, r.srcs[0].dim, r.srcs[1].dim, self.cfg)
        if i.op in GATHER_OPCODES:
            return "VU", vu_cycles("gtr", r.srcs[0].rows, r.srcs[0].dim, self.cfg)
        if i.op in ("SCTR.F", "SCTR.B"):
            return "VU", vu_cycles("gtr", r.dst.rows, r.dst.dim, self.cfg)
        if i.op in ELW_OPCODES:
            return "VU", vu_cycles("elw", r.dst.rows, r.dst.dim, self.cfg)
        raise SimulationFault(f"no unit for {i.op}")

    def operand_keys(self, i: Instruction, slot: int):
        reads = [self._key(s.sym, slot) for s in i.srcs]
        writes = [self._key(i.dst.sym, slot)] if i.dst is not None else []
        if i.op in GATHER_OPCODES:
            reads += writes  # read-modify-write accumulation
        if i.op in GATHER_OPCODES or i.op.startswith("SCTR"):
            reads.append(("COO", slot))
        return reads, writes

    def earliest(self, unit: str, reads, writes, t0: int) -> int:
        t = max(t0, self.unit_free[unit])
        for k in reads:
            t = max(t, self.wdone[k])
        for k in writes:
            t = max(t, self.wdone[k], self.rdone[k])
        return t

    def commit(self, unit: str, amount: int, reads, writes, t: int, kind: str | None) -> int:
        if unit == "LSU":
            self.unit_free["LSU"] = t + 1
            _, done = self.chan.request(t, amount)
            self.stats.charge(kind, amount)
        else:
            self.unit_free[unit] = t + amount
            done = t + amount
            if unit == "VU":
                self.stats.vu_busy += amount
            else:
                self.stats.mu_busy += amount
        for k in reads:
            self.rdone[k] = max(self.rdone[k], done)
        for k in writes:
            self.wdone[k] = done
        self.last_done = max(self.last_done, done)
        return done


def simulate(b: ProgramBundle, p: PartitionPlan, g: Graph, features, weights, cfg: SimConfig | None = None,
             *, check_sidecar: bool = True, trace: bool = False, max_idle_cycles: int = 10 ** 12) -> RunResult:
    cfg = cfg or SimConfig()
    _check_inputs(b, p, g, cfg, check_sidecar)
    layouts = _layouts(b, p, cfg)
    m = Machine(b, g, features, weights)
    stats = Stats(num_groups=len(b.groups), num_intervals=len(p.intervals), num_shards=p.num_shards,
                  num_sthread=cfg.num_sthread, hbm_energy_pj_per_bit=cfg.hbm_energy_pj_per_bit)
    rows: list | None = [] if trace else None
    eng = _Engine(b, cfg, stats, rows)
    phase_trace: list[tuple] = []
    slot_bytes = layouts[0][0].slot_elements * 4 if layouts else cfg.seb_slot_bytes
    now = 0

    def run(threads: list[_Thread], claim, marks) -> None:
        nonlocal now
        while True:
            progressed = True
            while progressed:
                progressed = False
                for th in threads:
                    while True:
                        h = th.head()
                        if h is None and th.slot >= 0 and claim(th):
                            progressed = True
                            continue
                        if h is None or h[0] != _MARK:
                            break
                        if not marks(th, h[1:]):
                            break
                        th.pos += 1
                        progressed = True
            best = None
            for th in threads:
                h = th.head()
                if h is None or h[0] == _MARK:
                    continue
                tag, x, iv, sv, grp = h
                slot = max(th.slot, 0)
                if tag == "coo":
                    unit, amount, res = "LSU", x, None
                    reads, writes = [], [("COO", slot)]
                else:
                    res = resolve(x, iv or _NO_INTERVAL, sv.shard if sv else None, layouts[grp][slot]) \
                        if grp >= 0 else None
                    unit, amount = ("LSU", _weight_bytes(x)) if res is None else eng.cost(x, res)
                    reads, writes = eng.operand_keys(x, slot)
                t = eng.earliest(unit, reads, writes, max(th.next_free, now))
                if best is None or t < best[0]:
                    best = (t, th, unit, amount, reads, writes)
            if best is None:
                if all(th.head() is None for th in threads):
                    return
                state = "; ".join(f"{th.name}@{th.pos}/{len(th.ops)} head={th.head()!r:.80}" for th in threads)
                raise SimulationFault(f"deadlock at cycle {now}: {state}")
            t, th, unit, amount, reads, writes = best
            if t - now > max_idle_cycles:
                raise SimulationFault(f"no progress for {t - now} cycles at cycle {now}")
            tag, x, iv, sv, grp = th.head()
            if tag == "coo":
                kind, text = "GRAPH", f"COO {x}B"
            else:
                kind, text = x.op, x.text()
                m.execute(x, iv, sv, max(th.slot, 0))
                stats.instructions += 1
            done = eng.commit(unit, amount, reads, writes, t, kind)
            if rows is not None:
                rows.append((t, done, th.name, grp, unit, text))
            th.next_free = t + 1
            th.pos += 1
            now = t

    ithread = _Thread("iThread", -1)
    ithread.ops = [("op", i, None, None, -1) for i in b.init]
    for k, grp in enumerate(b.groups):
        lay = layouts[k][0]
        order = [(ix, s) for ix, shards in enumerate(p.shards) for s in shards]
        remaining = [len(sh) for sh in p.shards]
        scattered = [False] * len(p.intervals)
        cursor = [0]
        first_of = np.concatenate([[0], np.cumsum([len(sh) for sh in p.shards])]).astype(int).tolist()
        sthreads = [_Thread(f"sThread{j}", j) for j in range(cfg.num_sthread)]
        stream_loads = [i for i in grp.scatter_stream if i.op == "LD.S"]
        stream_ops = [i for i in grp.scatter_stream if i.op != "LD.S"]
        for ix, iv in enumerate(p.intervals):
            ithread.ops.append((_MARK, "phase", k, ix, "scatter"))
            ithread.ops += [("op", i, iv, None, k) for i in grp.scatter_local]
            ithread.ops.append((_MARK, "scattered", ix))
            ithread.ops.append((_MARK, "wait", ix))
            ithread.ops.append((_MARK, "phase", k, ix, "apply"))
            ithread.ops += [("op", i, iv, None, k) for i in grp.apply]

        def claim(th: _Thread, k=k, order=order, cursor=cursor, lay=lay, stream_loads=stream_loads,
                  stream_ops=stream_ops, grp=grp, first_of=first_of) -> bool:
            if cursor[0] >= len(order):
                return False
            ix, s = order[cursor[0]]
            cursor[0] += 1
            iv = p.intervals[ix]
            sv = _ShardView.of(s, iv)
            try:
                layouts[k][th.slot].offsets(s.num_src, s.num_edge)
            except ResolutionError as exc:
                raise ResolutionError(f"group {k} interval {ix}: {exc}") from None
            nbytes = _graph_bytes_check(s, cfg)
            useful = ((s.num_src - sv.useless) * lay.dim_src + s.num_edge * lay.dim_edge) * 4
            stats.seb_log.append((useful, slot_bytes))
            pos = cursor[0] - 1 - first_of[ix]
            ops: list = [("coo", nbytes, iv, sv, k)]
            ops += [("op", i, iv, sv, k) for i in stream_loads]
            ops.append((_MARK, "gate", ix))
            ops.append((_MARK, "phase", k, ix, "gather", pos))
            ops += [("op", i, iv, sv, k) for i in (*stream_ops, *grp.gather)]
            ops.append((_MARK, "shard_done", ix))
            th.ops, th.pos = ops, 0
            return True

        def marks(th: _Thread, mk, remaining=remaining, scattered=scattered, lay=lay) -> bool:
            tag = mk[0]
            if tag == "phase":
                phase_trace.append(tuple(mk[1:]))
                if mk[3] == "scatter":
                    stats.db_log.append((p.intervals[mk[2]].width * lay.dim_dst * 4, cfg.dst_buffer))
                return True
            if tag == "scattered":
                scattered[mk[1]] = True
                return True
            if tag == "wait":
                return remaining[mk[1]] == 0
            if tag == "gate":
                return scattered[mk[1]]
            if tag == "shard_done":
                remaining[mk[1]] -= 1
                return True
            raise SimulationFault(f"unknown marker {mk!r}")

        run([ithread] + sthreads, claim, marks)
        # group barrier: everything issued so far must land before the next group reads DRAM
        now = max(now, eng.last_done)
        for th in [ithread] + sthreads:
            th.next_free = now
        ithread.ops, ithread.pos = [], 0
    if not b.groups and ithread.ops:
        run([ithread], lambda th: False, lambda th, mk: True)
    stats.total_cycles = max(eng.last_done, now)
    stats.dram_busy = eng.chan.busy
    csv_text = None
    if rows is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["issue", "done", "thread", "group", "unit", "instruction"])
        w.writerows(rows)
        csv_text = buf.getvalue()
    return RunResult(m.dram[b.output].copy(), stats, phase_trace, csv_text)
