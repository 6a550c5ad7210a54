from __future__ import annotations

import dataclasses
from dataclasses import dataclass

KiB = 1024
MiB = 1024 * KiB


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Accelerator parameters; defaults describe the reference design."""

    vu_cores: int = 16
    vu_lanes: int = 32
    mu_rows: int = 32
    mu_cols: int = 128
    clock_hz: float = 1e9
    dst_buffer: int = 8 * MiB
    srcedge_buffer: int = 1 * MiB
    weight_buffer: int = 2 * MiB
    graph_buffer: int = 128 * KiB
    dram_bandwidth: float = 256e9  # bytes per second
    dram_latency_cycles: int = 100
    num_sthread: int = 3
    hbm_energy_pj_per_bit: float = 7.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "dram_latency_cycles":
                if v < 0:
                    raise ConfigError("dram_latency_cycles must be >= 0")
            elif not v > 0:
                raise ConfigError(f"{f.name} must be positive, got {v!r}")

    @property
    def bytes_per_cycle(self) -> float:
        return self.dram_bandwidth / self.clock_hz

    @property
    def seb_slot_bytes(self) -> int:
        return self.srcedge_buffer // self.num_sthread

    @property
    def graph_slot_bytes(self) -> int:
        return self.graph_buffer // self.num_sthread

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)
