"""Shard construction: fine-grained (edge-by-edge) and coarse (square window) partitioners.

Footprints are counted in 4-byte elements.  A shard with ``num_src``
sources and ``num_edge`` edges occupies ``num_src*dim_src + num_edge*dim_edge``
elements of its sThread's slot in the source/edge buffer.
"""

from __future__ import annotations

import io
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from .graph import Graph, PartitionPlan, Shard, VertexInterval, make_intervals

PLAN_FORMAT_VERSION = 1
COO_ENTRY_BYTES = 8  # (src-slot, dst) as two u32
SOURCE_ID_BYTES = 4
SHARD_META_BYTES = 8  # num_src, num_edge


class CapacityError(ValueError):
    pass


def shard_graph_bytes(num_src: int, num_edge: int) -> int:
    """Bytes of graph-buffer space a shard needs: COO, source ids, metadata."""
    return COO_ENTRY_BYTES * num_edge + SOURCE_ID_BYTES * num_src + SHARD_META_BYTES


@dataclass(frozen=True)
class SizingBudget:
    mem_capacity: int
    num_sthread: int
    dim_src: int
    dim_edge: int
    # graph-buffer bytes per sThread slot; None disables the COO check
    graph_slot_bytes: int | None = None

    def __post_init__(self):
        if self.mem_capacity <= 0 or self.num_sthread <= 0:
            raise ValueError("mem_capacity and num_sthread must be positive")
        if self.dim_src < 0 or self.dim_edge < 0 or self.dim_src + self.dim_edge == 0:
            raise ValueError("dims must be non-negative and not both zero")

    @property
    def per_shard(self) -> int:
        return self.mem_capacity // self.num_sthread

    @classmethod
    def from_bytes(cls, buffer_bytes: int, num_sthread: int, dim_src: int, dim_edge: int,
                   graph_buffer_bytes: int | None = None) -> "SizingBudget":
        gb = None if graph_buffer_bytes is None else graph_buffer_bytes // num_sthread
        return cls(buffer_bytes // 4, num_sthread, dim_src, dim_edge, gb)


@dataclass
class ShardDraft:
    interval_index: int
    sources: list[int] = field(default_factory=list)
    coo_src: list[int] = field(default_factory=list)
    coo_dst: list[int] = field(default_factory=list)
    edge_ids: list[int] = field(default_factory=list)

    @property
    def num_src(self) -> int:
        return len(self.sources)

    @property
    def num_edge(self) -> int:
        return len(self.coo_src)

    def append_source(self, src: int, dst_list: list[tuple[int, int]]) -> None:
        slot = len(self.sources)
        self.sources.append(src)
        for d, e in dst_list:
            self.coo_src.append(slot)
            self.coo_dst.append(d)
            self.edge_ids.append(e)

    def finalize(self) -> Shard:
        return Shard(self.interval_index, tuple(self.sources), tuple(self.coo_src),
                     tuple(self.coo_dst), tuple(self.edge_ids))


def acquire_nei_list(g: Graph, i: VertexInterval, src: int) -> list[tuple[int, int]]:
    """``(dst, edge_id)`` pairs for edges ``src -> dst`` with ``dst`` in ``i``, sorted by dst."""
    if not 0 <= src < g.num_vertices:
        raise IndexError(f"source {src} out of range")
    if i.width <= 0:
        return []
    eids = g.out_edges(src)
    dsts = g.dst[eids].astype(np.int64)
    lo, hi = np.searchsorted(dsts, [i.dst_begin, i.dst_end])
    return list(zip(dsts[lo:hi].tolist(), eids[lo:hi].tolist()))


def probe_shard_size(s: ShardDraft, dst_list: list[tuple[int, int]], b: SizingBudget) -> bool:
    """True when adding this source would overflow the slot, i.e. finalize first."""
    if not dst_list:
        raise ValueError("dst_list must be non-empty")
    k = len(dst_list)
    alone = b.dim_src + k * b.dim_edge
    if alone > b.per_shard:
        raise CapacityError(f"one source with {k} edges needs {alone} elements, slot holds {b.per_shard}")
    if b.graph_slot_bytes is not None and shard_graph_bytes(1, k) > b.graph_slot_bytes:
        raise CapacityError(f"one source with {k} edges needs {shard_graph_bytes(1, k)} graph-buffer bytes, "
                            f"slot holds {b.graph_slot_bytes}")
    need = (s.num_src + 1) * b.dim_src + (s.num_edge + k) * b.dim_edge
    if need > b.per_shard:
        return True
    if b.graph_slot_bytes is not None:
        return shard_graph_bytes(s.num_src + 1, s.num_edge + k) > b.graph_slot_bytes
    return False


def _interval_neighbor_lists(g: Graph, iv: VertexInterval):
    """Yield ``(src, dst_list)`` for each source with edges into ``iv`` in source order."""
    indptr, ids = g.dst_index
    eids = ids[indptr[iv.dst_begin] : indptr[iv.dst_end]]
    if len(eids) == 0:
        return
    srcs = g.src[eids].astype(np.int64)
    dsts = g.dst[eids].astype(np.int64)
    order = np.lexsort((eids, dsts, srcs))
    srcs, dsts, eids = srcs[order], dsts[order], eids[order]
    cuts = np.flatnonzero(np.diff(srcs)) + 1
    starts = np.concatenate([[0], cuts]).tolist()
    ends = np.concatenate([cuts, [len(srcs)]]).tolist()
    dl, el, sl = dsts.tolist(), eids.tolist(), srcs.tolist()
    for a, z in zip(starts, ends):
        yield sl[a], list(zip(dl[a:z], el[a:z]))


def _fggp_interval(g: Graph, iv: VertexInterval, b: SizingBudget) -> tuple[Shard, ...]:
    out: list[Shard] = []
    s = ShardDraft(iv.index)
    # sources without edges into the interval never appear, so they are skipped
    for src, dst_list in _interval_neighbor_lists(g, iv):
        if probe_shard_size(s, dst_list, b):
            out.append(s.finalize())
            s = ShardDraft(iv.index)
        s.append_source(src, dst_list)
    if s.num_src:
        out.append(s.finalize())
    return tuple(out)


def partition_fggp(g: Graph, interval_size: int, b: SizingBudget) -> PartitionPlan:
    """Fine-grained partitioning: per interval, add each source with all its edges until the slot is full."""
    intervals = make_intervals(g.num_vertices, interval_size)
    shards = tuple(_fggp_interval(g, iv, b) for iv in intervals)
    return PartitionPlan(intervals, shards, "fggp", (b.dim_src, b.dim_edge), g.num_vertices)


def partition_fggp_literal(g: Graph, interval_size: int, b: SizingBudget) -> PartitionPlan:
    """Line-by-line source sweep (every source probed with acquire_nei_list); slow, used as a cross-check."""
    intervals = make_intervals(g.num_vertices, interval_size)
    shards = []
    for iv in intervals:
        out = []
        s = ShardDraft(iv.index)
        for src in range(g.num_vertices):
            dst_list = acquire_nei_list(g, iv, src)
            if dst_list:
                if probe_shard_size(s, dst_list, b):
                    out.append(s.finalize())
                    s = ShardDraft(iv.index)
                s.append_source(src, dst_list)
        if s.num_src:
            out.append(s.finalize())
        shards.append(tuple(out))
    return PartitionPlan(intervals, tuple(shards), "fggp", (b.dim_src, b.dim_edge), g.num_vertices)


def coarse_shard_height(g: Graph, b: SizingBudget) -> int:
    """Largest H with ``H*dim_src + H*ceil(avg_in_degree)*dim_edge`` inside one slot (at least 1)."""
    avg = math.ceil(g.num_edges / g.num_vertices) if g.num_vertices else 0
    per_row = b.dim_src + avg * b.dim_edge
    h = b.per_shard // per_row if per_row else g.num_vertices
    return max(1, min(h, max(g.num_vertices, 1)))


def _fits(b: SizingBudget, num_src: int, num_edge: int) -> bool:
    if num_src * b.dim_src + num_edge * b.dim_edge > b.per_shard:
        return False
    return b.graph_slot_bytes is None or shard_graph_bytes(num_src, num_edge) <= b.graph_slot_bytes


def partition_coarse(g: Graph, b: SizingBudget, shard_height: int | None = None) -> PartitionPlan:
    """Square-window partitioning with sparsity elimination (trim-only stand-in for window shrinking).

    Interval height equals the window height ``H``.  Each window's source
    range is trimmed at both ends to sources that have an edge into the
    interval; interior unused sources stay.  Empty windows are dropped and
    windows whose real edge count overflows the slot are split in source order.
    """
    h = shard_height or coarse_shard_height(g, b)
    intervals = make_intervals(g.num_vertices, h)
    all_shards = []
    for iv in intervals:
        per: list[Shard] = []
        groups = list(_interval_neighbor_lists(g, iv))
        w = 0
        while w < len(groups):
            hi_w = min((groups[w][0] // h + 1) * h, g.num_vertices)
            inside = []
            while w < len(groups) and groups[w][0] < hi_w:
                inside.append(groups[w])
                w += 1
            per.extend(_window_shards(iv, inside, b))
        all_shards.append(tuple(per))
    return PartitionPlan(intervals, tuple(all_shards), "coarse", (b.dim_src, b.dim_edge), g.num_vertices)


def _window_shards(iv: VertexInterval, inside, b: SizingBudget) -> list[Shard]:
    # inside: (src, dst_list) for used sources of one window, ascending
    out = []
    k = 0
    while k < len(inside):
        first = inside[k][0]
        s = ShardDraft(iv.index)
        j = k
        while j < len(inside):
            src, dl = inside[j]
            span = src - first + 1
            if not _fits(b, span, s.num_edge + len(dl)):
                break
            j += 1
            s.coo_src.extend([src - first] * len(dl))
            s.coo_dst.extend(d for d, _ in dl)
            s.edge_ids.extend(e for _, e in dl)
        if j == k:
            src, dl = inside[k]
            raise CapacityError(f"source {src} with {len(dl)} edges does not fit a slot")
        last = inside[j - 1][0]
        s.sources = list(range(first, last + 1))
        out.append(s.finalize())
        k = j
    return out


@dataclass(frozen=True)
class RedundancyReport:
    loads_per_source: dict[int, int]
    useless_source_count: int

    @property
    def total_source_loads(self) -> int:
        return sum(self.loads_per_source.values())

    @property
    def max_loads(self) -> int:
        return max(self.loads_per_source.values(), default=0)

    def histogram(self) -> dict[int, int]:
        """Number of sources loaded exactly k times, keyed by k."""
        return dict(sorted(Counter(self.loads_per_source.values()).items()))


def redundancy_report(p: PartitionPlan) -> RedundancyReport:
    loads: Counter[int] = Counter()
    useless = 0
    for sh in p.all_shards():
        loads.update(sh.sources)
        useless += sh.useless_sources()
    return RedundancyReport(dict(sorted(loads.items())), useless)


# --- text serialization ----------------------------------------------------
#
#   plan v1 origin=<str> dim_src=<int> dim_edge=<int> num_vertices=<int>
#   interval <k> <dst_begin> <dst_end> shards=<n>
#   shard <j> src <s0> <s1> ... | coo <slot>:<dst> <slot>:<dst> ...
#
# Edge ids are not serialized; a reloaded plan has empty edge_ids.


def save_plan(p: PartitionPlan) -> str:
    out = [f"plan v{PLAN_FORMAT_VERSION} origin={p.origin} dim_src={p.dims[0]} dim_edge={p.dims[1]} "
           f"num_vertices={p.num_vertices}"]
    for iv, per in zip(p.intervals, p.shards):
        out.append(f"interval {iv.index} {iv.dst_begin} {iv.dst_end} shards={len(per)}")
        for j, sh in enumerate(per):
            srcs = " ".join(map(str, sh.sources))
            coo = " ".join(f"{s}:{d}" for s, d in zip(sh.coo_src, sh.coo_dst))
            out.append(f"shard {j} src {srcs} | coo {coo}".replace("  ", " ").rstrip())
    return "\n".join(out) + "\n"


def load_plan(stream: TextIO | str) -> PartitionPlan:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    lines = [ln.rstrip("\n") for ln in stream if ln.strip()]
    if not lines or not lines[0].startswith("plan v"):
        raise ValueError("missing plan header")
    head = lines[0].split()
    if head[1] != f"v{PLAN_FORMAT_VERSION}":
        raise ValueError(f"unsupported plan version {head[1]}")
    kv = dict(t.split("=", 1) for t in head[2:])
    intervals: list[VertexInterval] = []
    shards: list[list[Shard]] = []
    for lineno, ln in enumerate(lines[1:], start=2):
        tok = ln.split()
        if tok[0] == "interval":
            intervals.append(VertexInterval(int(tok[1]), int(tok[2]), int(tok[3])))
            shards.append([])
        elif tok[0] == "shard":
            if not intervals:
                raise ValueError(f"line {lineno}: shard before any interval")
            left, _, right = ln.partition("|")
            srcs = tuple(int(x) for x in left.split()[3:])
            pairs = [t.split(":") for t in right.split()[1:]]
            shards[-1].append(Shard(intervals[-1].index, srcs, tuple(int(a) for a, _ in pairs),
                                    tuple(int(b) for _, b in pairs)))
        else:
            raise ValueError(f"line {lineno}: unknown record {tok[0]!r}")
    return PartitionPlan(tuple(intervals), tuple(tuple(s) for s in shards), kv["origin"],
                         (int(kv["dim_src"]), int(kv["dim_edge"])), int(kv.get("num_vertices", 0)))
