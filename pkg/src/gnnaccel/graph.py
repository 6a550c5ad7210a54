"""Directed multigraphs, destination intervals, and shards.

A :class:`Graph` keeps the edge list in load order plus two derived indexes:
``dst_index`` (CSC-like, in-edges grouped by destination) and ``src_index``
(CSR-like, out-edges grouped by source).  Both are stored as ``(indptr,
edge_ids)`` pairs so that an edge id always points back into ``src``/``dst``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np


class GraphError(ValueError):
    pass


class GraphParseError(GraphError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _build_index(keys: np.ndarray, other: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    # stable lexsort: primary key, then the other endpoint, then edge id
    order = np.lexsort((np.arange(len(keys)), other, keys)).astype(np.int64)
    counts = np.bincount(keys, minlength=n) if len(keys) else np.zeros(n, dtype=np.int64)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return _frozen(indptr), _frozen(order)


class Graph:
    """Immutable directed multigraph with dense vertex ids ``0..num_vertices-1``."""

    __slots__ = ("num_vertices", "src", "dst", "dst_index", "src_index", "in_degree", "out_degree")

    def __init__(self, num_vertices: int, src: Sequence[int] | np.ndarray, dst: Sequence[int] | np.ndarray):
        src = np.asarray(src, dtype=np.int64).reshape(-1)
        dst = np.asarray(dst, dtype=np.int64).reshape(-1)
        if src.shape != dst.shape:
            raise GraphError("src and dst must have the same length")
        if num_vertices < 0 or num_vertices >= 2**32:
            raise GraphError(f"num_vertices out of range: {num_vertices}")
        if len(src) and (src.min() < 0 or dst.min() < 0):
            raise GraphError("negative vertex id")
        if len(src) and (src.max() >= num_vertices or dst.max() >= num_vertices):
            raise GraphError("vertex id >= num_vertices")
        self.num_vertices = int(num_vertices)
        self.src = _frozen(src.astype(np.uint32))
        self.dst = _frozen(dst.astype(np.uint32))
        self.dst_index = _build_index(dst, src, self.num_vertices)
        self.src_index = _build_index(src, dst, self.num_vertices)
        self.in_degree = _frozen(np.diff(self.dst_index[0]))
        self.out_degree = _frozen(np.diff(self.src_index[0]))

    @property
    def num_edges(self) -> int:
        return int(len(self.src))

    @property
    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.src.tolist(), self.dst.tolist()))

    def in_edges(self, v: int) -> np.ndarray:
        """Edge ids entering ``v``, sorted by source."""
        indptr, ids = self.dst_index
        return ids[indptr[v] : indptr[v + 1]]

    def out_edges(self, v: int) -> np.ndarray:
        """Edge ids leaving ``v``, sorted by destination."""
        indptr, ids = self.src_index
        return ids[indptr[v] : indptr[v + 1]]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_vertices == other.num_vertices
            and np.array_equal(self.src, other.src)
            and np.array_equal(self.dst, other.dst)
        )

    def __hash__(self):
        return hash((self.num_vertices, self.src.tobytes(), self.dst.tobytes()))

    def __repr__(self) -> str:
        return f"Graph(num_vertices={self.num_vertices}, num_edges={self.num_edges})"

    def symmetrized(self) -> "Graph":
        """Graph with every edge mirrored (self-loops are not duplicated)."""
        s, d = self.src.astype(np.int64), self.dst.astype(np.int64)
        keep = s != d
        return Graph(self.num_vertices, np.concatenate([s, d[keep]]), np.concatenate([d, s[keep]]))

    def deduplicated(self) -> "Graph":
        pairs = np.stack([self.src, self.dst], axis=1).astype(np.int64)
        _, first = np.unique(pairs, axis=0, return_index=True)
        keep = np.sort(first)
        return Graph(self.num_vertices, pairs[keep, 0], pairs[keep, 1])

    def permuted(self, perm: Sequence[int]) -> "Graph":
        """Relabel vertex ``v`` as ``perm[v]``."""
        p = np.asarray(perm, dtype=np.int64)
        return Graph(self.num_vertices, p[self.src.astype(np.int64)], p[self.dst.astype(np.int64)])


def degree(g: Graph, v: int, direction: str = "in") -> int:
    if not 0 <= v < g.num_vertices:
        raise IndexError(f"vertex {v} out of range [0, {g.num_vertices})")
    if direction == "in":
        return int(g.in_degree[v])
    if direction == "out":
        return int(g.out_degree[v])
    raise ValueError(f"direction must be 'in' or 'out', got {direction!r}")


def _finish(rows: list[tuple[int, int]], remap: bool, num_vertices: int | None,
            symmetrize: bool, dedup: bool) -> Graph:
    if remap:
        ids: dict[int, int] = {}
        out = []
        for s, d in rows:
            out.append((ids.setdefault(s, len(ids)), ids.setdefault(d, len(ids))))
        rows = out
        n = len(ids)
    else:
        n = 1 + max((max(s, d) for s, d in rows), default=-1)
    if num_vertices is not None:
        if num_vertices < n:
            raise GraphError(f"declared {num_vertices} vertices but ids reach {n - 1}")
        n = num_vertices
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, 2)
    g = Graph(n, arr[:, 0], arr[:, 1])
    if dedup:
        g = g.deduplicated()
    if symmetrize:
        g = g.symmetrized()
    return g


def load_edge_list(stream: TextIO | str, remap: bool = False, *, num_vertices: int | None = None,
                   symmetrize: bool = False, dedup: bool = False) -> Graph:
    """Parse ``src dst`` lines; ``#`` starts a comment.

    Duplicate edges and self-loops are kept unless ``dedup`` is set.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    rows: list[tuple[int, int]] = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphParseError(lineno, f"expected 2 tokens, got {len(parts)}: {raw.rstrip()!r}")
        try:
            s, d = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphParseError(lineno, f"non-integer token in {raw.rstrip()!r}") from None
        if s < 0 or d < 0:
            raise GraphError(f"line {lineno}: negative vertex id")
        rows.append((s, d))
    return _finish(rows, remap, num_vertices, symmetrize, dedup)


def load_matrix_market(stream: TextIO | str, *, symmetrize: bool = False, dedup: bool = False) -> Graph:
    """Read a coordinate Matrix Market file; entry ``(i, j)`` becomes edge ``i-1 -> j-1``.

    Values after the two indices are ignored.  Symmetric files are read
    as stored (one triangle) unless ``symmetrize`` is set.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    header = stream.readline()
    if not header.lower().startswith("%%matrixmarket"):
        raise GraphParseError(1, "missing %%MatrixMarket header")
    if "coordinate" not in header.lower():
        raise GraphParseError(1, "only coordinate format is supported")
    lineno = 1
    size = None
    rows: list[tuple[int, int]] = []
    for raw in stream:
        lineno += 1
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        parts = line.split()
        if size is None:
            if len(parts) < 3:
                raise GraphParseError(lineno, "bad size line")
            size = (int(parts[0]), int(parts[1]), int(parts[2]))
            continue
        if len(parts) < 2:
            raise GraphParseError(lineno, f"bad entry {line!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphParseError(lineno, f"non-integer index in {line!r}") from None
        if i < 1 or j < 1:
            raise GraphError(f"line {lineno}: Matrix Market indices are 1-based")
        rows.append((i - 1, j - 1))
    if size is None:
        raise GraphParseError(lineno, "missing size line")
    if len(rows) != size[2]:
        raise GraphParseError(lineno, f"expected {size[2]} entries, found {len(rows)}")
    return _finish(rows, False, max(size[0], size[1]), symmetrize, dedup)


def load_graph_file(path: str, **kw) -> Graph:
    with open(path) as f:
        first = f.readline()
        f.seek(0)
        if first.lower().startswith("%%matrixmarket"):
            return load_matrix_market(f, **kw)
        return load_edge_list(f, **kw)


def dump_edge_list(g: Graph) -> str:
    lines = [f"# vertices {g.num_vertices} edges {g.num_edges}"]
    lines += [f"{s} {d}" for s, d in zip(g.src.tolist(), g.dst.tolist())]
    return "\n".join(lines) + "\n"


# --- intervals, shards, plans ---------------------------------------------


@dataclass(frozen=True)
class VertexInterval:
    index: int
    dst_begin: int
    dst_end: int

    @property
    def width(self) -> int:
        return self.dst_end - self.dst_begin

    def __contains__(self, v: int) -> bool:
        return self.dst_begin <= v < self.dst_end


def make_intervals(num_vertices: int, interval_size: int) -> tuple[VertexInterval, ...]:
    if interval_size < 1:
        raise ValueError("interval_size must be >= 1")
    return tuple(
        VertexInterval(k, b, min(b + interval_size, num_vertices))
        for k, b in enumerate(range(0, num_vertices, interval_size))
    )


@dataclass(frozen=True)
class Shard:
    """Edges of one interval that fit one buffer slot.

    ``coo_src`` holds slots into ``sources``; ``coo_dst`` holds global
    destination ids.  ``edge_ids`` maps each COO entry back to the graph.
    """

    interval_index: int
    sources: tuple[int, ...]
    coo_src: tuple[int, ...]
    coo_dst: tuple[int, ...]
    edge_ids: tuple[int, ...] = ()

    @property
    def num_src(self) -> int:
        return len(self.sources)

    @property
    def num_edge(self) -> int:
        return len(self.coo_src)

    @property
    def edges_coo(self) -> list[tuple[int, int]]:
        return list(zip(self.coo_src, self.coo_dst))

    def resolved_edges(self) -> list[tuple[int, int]]:
        return [(self.sources[s], d) for s, d in zip(self.coo_src, self.coo_dst)]

    def useless_sources(self) -> int:
        used = set(self.coo_src)
        return sum(1 for k in range(self.num_src) if k not in used)


@dataclass(frozen=True)
class PartitionPlan:
    intervals: tuple[VertexInterval, ...]
    shards: tuple[tuple[Shard, ...], ...]
    origin: str
    dims: tuple[int, int]
    num_vertices: int = 0

    @property
    def num_shards(self) -> int:
        return sum(len(s) for s in self.shards)

    def all_shards(self) -> Iterable[Shard]:
        for per in self.shards:
            yield from per


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    def add(self, msg: str) -> None:
        self.violations.append(msg)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        # truthy when there is something to report
        return bool(self.violations)

    def __iter__(self):
        return iter(self.violations)


def validate_plan(g: Graph, p: PartitionPlan, budget: int | None = None,
                  max_violations: int = 100) -> ValidationReport:
    """Check a plan against the graph; never raises.

    With ``budget`` (elements per shard slot), every shard is also checked
    against ``num_src*dim_src + num_edge*dim_edge <= budget`` using ``p.dims``.
    """
    rep = ValidationReport()
    n = g.num_vertices
    pos = 0
    for k, iv in enumerate(p.intervals):
        if iv.index != k:
            rep.add(f"interval {k}: index field is {iv.index}")
        if iv.dst_begin != pos or iv.dst_end <= iv.dst_begin:
            rep.add(f"interval {k}: range [{iv.dst_begin},{iv.dst_end}) does not tile from {pos}")
        pos = iv.dst_end
    if pos != n:
        rep.add(f"intervals cover [0,{pos}) but graph has {n} vertices")
    if len(p.shards) != len(p.intervals):
        rep.add(f"{len(p.shards)} shard lists for {len(p.intervals)} intervals")

    coarse = p.origin.startswith("coarse")
    dim_src, dim_edge = p.dims
    seen: dict[tuple[int, int], int] = {}
    for k, per in enumerate(p.shards):
        iv = p.intervals[k] if k < len(p.intervals) else None
        for j, sh in enumerate(per):
            tag = f"interval {k} shard {j}"
            if sh.interval_index != k:
                rep.add(f"{tag}: interval_index field is {sh.interval_index}")
            if len(sh.coo_src) != len(sh.coo_dst):
                rep.add(f"{tag}: COO arrays differ in length")
            used = set()
            for s, d in zip(sh.coo_src, sh.coo_dst):
                if not 0 <= s < sh.num_src:
                    rep.add(f"{tag}: src-slot {s} out of range")
                    continue
                used.add(s)
                if iv is not None and d not in iv:
                    rep.add(f"{tag}: dst {d} outside interval [{iv.dst_begin},{iv.dst_end})")
                key = (sh.sources[s], d)
                seen[key] = seen.get(key, 0) + 1
            if not coarse and len(used) != sh.num_src:
                rep.add(f"{tag}: {sh.num_src - len(used)} unreferenced sources")
            if budget is not None and sh.num_src * dim_src + sh.num_edge * dim_edge > budget:
                rep.add(f"{tag}: footprint {sh.num_src * dim_src + sh.num_edge * dim_edge} exceeds budget {budget}")
            if len(rep.violations) >= max_violations:
                return rep

    expected: dict[tuple[int, int], int] = {}
    for s, d in zip(g.src.tolist(), g.dst.tolist()):
        expected[(s, d)] = expected.get((s, d), 0) + 1
    for key, cnt in expected.items():
        got = seen.get(key, 0)
        if got != cnt:
            rep.add(f"edge coverage: {key} expected {cnt}, found {got}")
            if len(rep.violations) >= max_violations:
                return rep
    for key in seen.keys() - expected.keys():
        rep.add(f"edge coverage: {key} not in graph")
    return rep
