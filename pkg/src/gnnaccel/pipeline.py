"""Glue: build, compile, partition, simulate and verify one configuration."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .compiler import compile_model, partition_params, sidecar
from .datasets import load_dataset
from .graph import Graph, PartitionPlan, validate_plan
from .isa import ProgramBundle
from .model_ir import UnifiedGraph, build_model, canonical_kind
from .oracle import execute_dense, op_by_op_traffic, random_features, random_weights, relative_error
from .partition import SizingBudget, partition_coarse, partition_fggp
from .sim import RunResult, SimConfig, simulate

VERIFY_EDGE_LIMIT = 100_000
PARTITIONERS = ("fggp", "coarse")


@dataclass(frozen=True)
class ExperimentConfig:
    graph: str = "ak2010"
    model: str = "gcn"
    layers: int = 2
    dim: int = 128
    dims: tuple[int, ...] | None = None  # overrides layers/dim when given
    interval_size: int | None = None  # None: widest interval whose D symbols fit the DstBuffer
    partitioner: str = "fggp"
    seed: int = 0
    verify: bool | None = None  # None: on for graphs up to VERIFY_EDGE_LIMIT edges
    symmetrize: bool = False
    sim: SimConfig = field(default_factory=SimConfig)

    def __post_init__(self):
        canonical_kind(self.model)
        if self.partitioner not in PARTITIONERS:
            raise ValueError(f"partitioner must be one of {PARTITIONERS}, got {self.partitioner!r}")
        if self.layers < 1 or self.dim < 1:
            raise ValueError("layers and dim must be positive")
        if self.interval_size is not None and self.interval_size < 1:
            raise ValueError("interval_size must be positive")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return tuple(self.dims) if self.dims else (self.dim,) * (self.layers + 1)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["dims"] = list(self.layer_dims)
        d["model"] = canonical_kind(self.model)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def replace(self, **kw) -> "ExperimentConfig":
        sim_kw = {k: kw.pop(k) for k in list(kw) if k in SimConfig.__dataclass_fields__}
        cfg = dataclasses.replace(self, **kw)
        if sim_kw:
            cfg = dataclasses.replace(cfg, sim=cfg.sim.replace(**sim_kw))
        return cfg


def auto_interval_size(b: ProgramBundle, cfg: SimConfig) -> int:
    dim_dst = sidecar(b).dim_dst
    return max(1, (cfg.dst_buffer // 4) // max(dim_dst, 1))


def sizing_budget(b: ProgramBundle, cfg: SimConfig) -> SizingBudget:
    dim_src, dim_edge = partition_params(b)
    if dim_src + dim_edge == 0:
        dim_src = 1  # model without GTR ops still needs a non-degenerate budget
    return SizingBudget.from_bytes(cfg.srcedge_buffer, cfg.num_sthread, dim_src, dim_edge, cfg.graph_buffer)


def make_plan(g: Graph, b: ProgramBundle, cfg: SimConfig, partitioner: str = "fggp",
              interval_size: int | None = None) -> PartitionPlan:
    budget = sizing_budget(b, cfg)
    if partitioner == "fggp":
        size = interval_size or auto_interval_size(b, cfg)
        return partition_fggp(g, min(size, max(g.num_vertices, 1)), budget)
    if partitioner == "coarse":
        return partition_coarse(g, budget)
    raise ValueError(f"unknown partitioner {partitioner!r}")


@dataclass
class Prepared:
    config: ExperimentConfig
    graph: Graph
    ucg: UnifiedGraph
    bundle: ProgramBundle
    plan: PartitionPlan
    features: np.ndarray
    weights: dict[str, np.ndarray]


def prepare(cfg: ExperimentConfig, graph: Graph | None = None) -> Prepared:
    g = graph if graph is not None else load_dataset(cfg.graph, symmetrize=cfg.symmetrize)
    dims = cfg.layer_dims
    u = build_model(cfg.model, len(dims) - 1, dims)
    b = compile_model(u)
    plan = make_plan(g, b, cfg.sim, cfg.partitioner, cfg.interval_size)
    return Prepared(cfg, g, u, b, plan, random_features(g.num_vertices, dims[0], cfg.seed),
                    random_weights(u, cfg.seed))


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    run: RunResult
    verify_error: float | None
    op_by_op_bytes: int
    plan_violations: int

    @property
    def stats(self):
        return self.run.stats

    def row(self) -> dict:
        s = self.run.stats
        d = s.to_dict()
        c = self.config
        return {
            "config_hash": c.config_hash(), "graph": c.graph, "model": canonical_kind(c.model),
            "layers": len(c.layer_dims) - 1, "dim": c.layer_dims[-1], "partitioner": c.partitioner,
            "num_sthread": c.sim.num_sthread, "srcedge_buffer": c.sim.srcedge_buffer,
            "dst_buffer": c.sim.dst_buffer, "seed": c.seed,
            "latency": s.total_cycles, "utilization": d["utilization"],
            "vu_busy": s.vu_busy, "mu_busy": s.mu_busy, "dram_busy": s.dram_busy,
            "dram_bytes": s.dram_bytes, "dram_bytes_ld": s.dram_bytes_ld, "dram_bytes_st": s.dram_bytes_st,
            "op_by_op_bytes": self.op_by_op_bytes,
            "traffic_ratio": s.dram_bytes / self.op_by_op_bytes if self.op_by_op_bytes else None,
            "source_bytes": s.bytes_by_kind.get("LD.S", 0),
            "occupancy_seb": d["occupancy_seb"], "occupancy_db": d["occupancy_db"],
            "dram_energy_pj": s.dram_energy_pj, "num_shards": s.num_shards, "num_intervals": s.num_intervals,
            "verify_error": self.verify_error,
        }


def run_experiment(cfg: ExperimentConfig, graph: Graph | None = None, prepared: Prepared | None = None,
                   trace: bool = False) -> ExperimentResult:
    pr = prepared or prepare(cfg, graph)
    rep = validate_plan(pr.graph, pr.plan)
    run = simulate(pr.bundle, pr.plan, pr.graph, pr.features, pr.weights, cfg.sim, trace=trace)
    verify = cfg.verify if cfg.verify is not None else pr.graph.num_edges <= VERIFY_EDGE_LIMIT
    err = None
    if verify:
        ref = execute_dense(pr.ucg, pr.graph, pr.features, pr.weights)
        err = relative_error(run.output, ref)
    return ExperimentResult(cfg, run, err, op_by_op_traffic(pr.ucg, pr.graph), len(rep.violations))
