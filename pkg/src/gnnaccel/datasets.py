"""Evaluation graphs: a 6-vertex fixture, seeded random graphs and a road-map-like surrogate."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

from .graph import Graph, GraphError, load_graph_file

# Source 5 feeds destinations 0 and 3, so at interval size 3 it lands in both intervals.
TOY6_EDGES = ((5, 0), (1, 0), (0, 1), (2, 2), (5, 3), (3, 4), (4, 5))

AK2010_VERTICES = 45_293
AK2010_EDGES = 108_549


def toy6() -> Graph:
    src, dst = zip(*TOY6_EDGES)
    return Graph(6, src, dst)


def chain(n: int) -> Graph:
    return Graph(n, list(range(n - 1)), list(range(1, n)))


def random_graph(num_vertices: int, num_edges: int, seed: int = 0) -> Graph:
    """Uniform random multigraph (self-loops allowed)."""
    rng = np.random.default_rng(seed)
    if num_vertices == 0:
        return Graph(0, [], [])
    return Graph(num_vertices, rng.integers(0, num_vertices, num_edges), rng.integers(0, num_vertices, num_edges))


def _morton_order(xy: np.ndarray, bits: int = 16) -> np.ndarray:
    q = np.clip((xy * (1 << bits)).astype(np.uint64), 0, (1 << bits) - 1)
    code = np.zeros(len(xy), dtype=np.uint64)
    for b in range(bits):
        for axis in (0, 1):
            code |= ((q[:, axis] >> np.uint64(b)) & np.uint64(1)) << np.uint64(2 * b + axis)
    return np.argsort(code, kind="stable")


def planar_surrogate(num_vertices: int = AK2010_VERTICES, num_edges: int = AK2010_EDGES, seed: int = 2010) -> Graph:
    """Planar, road-map-like graph with a fixed vertex and edge count.

    Points are scattered with clustered density, triangulated, and the
    ``num_edges`` shortest triangulation edges are kept.  Vertices are
    numbered along a Morton curve so that nearby vertices get nearby ids,
    the way census-block datasets are ordered; each edge gets a random
    orientation.
    """
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0, 1, size=(64, 2))
    pick = rng.integers(0, len(centers), num_vertices)
    spread = rng.uniform(0.01, 0.12, size=len(centers))[pick, None]
    xy = np.mod(centers[pick] + rng.normal(0, 1, size=(num_vertices, 2)) * spread, 1.0)
    tri = Delaunay(xy)
    s = tri.simplices
    pairs = np.concatenate([s[:, [0, 1]], s[:, [1, 2]], s[:, [0, 2]]])
    pairs = np.unique(np.sort(pairs, axis=1), axis=0)
    if len(pairs) < num_edges:
        raise GraphError(f"triangulation has only {len(pairs)} edges, need {num_edges}")
    length = np.linalg.norm(xy[pairs[:, 0]] - xy[pairs[:, 1]], axis=1)
    keep = pairs[np.argsort(length, kind="stable")[:num_edges]]
    order = _morton_order(xy)
    rank = np.empty(num_vertices, dtype=np.int64)
    rank[order] = np.arange(num_vertices)
    keep = rank[keep]
    flip = rng.random(num_edges) < 0.5
    src = np.where(flip, keep[:, 1], keep[:, 0])
    dst = np.where(flip, keep[:, 0], keep[:, 1])
    return Graph(num_vertices, src, dst)


def data_dir() -> Path:
    return Path(os.environ.get("GNNACCEL_DATA", Path.home() / ".cache" / "gnnaccel"))


def load_dataset(name: str, symmetrize: bool = False) -> Graph:
    """Resolve a dataset name or path.

    ``toy6``, ``chain:<n>``, ``random:<n>:<m>[:<seed>]``, ``ak2010`` (the real
    file from the data directory if present, else the planar surrogate), or
    a path to an edge-list / Matrix Market file.
    """
    g = _resolve(name)
    return g.symmetrized() if symmetrize else g


def _resolve(name: str) -> Graph:
    if name == "toy6":
        return toy6()
    if name.startswith("chain:"):
        return chain(int(name.split(":")[1]))
    if name.startswith("random:"):
        parts = [int(x) for x in name.split(":")[1:]]
        return random_graph(*parts)
    if name == "ak2010":
        for cand in (data_dir() / "ak2010.mtx", data_dir() / "ak2010.txt"):
            if cand.exists():
                return load_graph_file(str(cand))
        return planar_surrogate()
    if not Path(name).exists():
        raise FileNotFoundError(f"graph file not found: {name}")
    return load_graph_file(name)
