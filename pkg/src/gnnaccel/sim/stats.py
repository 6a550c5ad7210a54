from __future__ import annotations

import json
from dataclasses import dataclass, field


@dataclass
class Stats:
    total_cycles: int = 0
    vu_busy: int = 0
    mu_busy: int = 0
    dram_busy: int = 0
    dram_bytes_ld: int = 0
    dram_bytes_st: int = 0
    bytes_by_kind: dict[str, int] = field(default_factory=dict)  # LD.S, LD.D, LD.W, GRAPH, ST.D ...
    seb_log: list[tuple[int, int]] = field(default_factory=list)  # (useful bytes, slot bytes) per shard load
    db_log: list[tuple[int, int]] = field(default_factory=list)  # (useful bytes, buffer bytes) per interval
    num_groups: int = 0
    num_intervals: int = 0
    num_shards: int = 0
    instructions: int = 0
    num_sthread: int = 0
    hbm_energy_pj_per_bit: float = 7.0

    @property
    def dram_bytes(self) -> int:
        return self.dram_bytes_ld + self.dram_bytes_st

    @property
    def dram_energy_pj(self) -> float:
        return self.dram_bytes * 8 * self.hbm_energy_pj_per_bit

    def charge(self, kind: str, nbytes: int) -> None:
        if nbytes <= 0:
            return
        self.bytes_by_kind[kind] = self.bytes_by_kind.get(kind, 0) + nbytes
        if kind.startswith("ST"):
            self.dram_bytes_st += nbytes
        else:
            self.dram_bytes_ld += nbytes

    def to_dict(self) -> dict:
        def occ(buf):
            try:
                return occupancy_rate(self, buf)
            except ValueError:
                return None

        return {
            "total_cycles": self.total_cycles,
            "vu_busy": self.vu_busy,
            "mu_busy": self.mu_busy,
            "dram_busy": self.dram_busy,
            "dram_bytes_ld": self.dram_bytes_ld,
            "dram_bytes_st": self.dram_bytes_st,
            "occupancy_seb": occ("seb"),
            "occupancy_db": occ("db"),
            "dram_energy_pj": self.dram_energy_pj,
            "dram_bytes": self.dram_bytes,
            "bytes_by_kind": dict(sorted(self.bytes_by_kind.items())),
            "utilization": overall_utilization(self) if self.total_cycles else None,
            "num_groups": self.num_groups,
            "num_intervals": self.num_intervals,
            "num_shards": self.num_shards,
            "instructions": self.instructions,
            "num_sthread": self.num_sthread,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)


def occupancy_rate(stats: Stats, buffer: str) -> float:
    """Mean fraction of the buffer (slot) holding useful data per write."""
    log = {"seb": stats.seb_log, "db": stats.db_log}[buffer.lower()]
    if not log:
        raise ValueError(f"occupancy of {buffer} is undefined: no writes logged")
    return sum(used / cap for used, cap in log) / len(log)


def overall_utilization(stats: Stats) -> float:
    if stats.total_cycles <= 0:
        raise ValueError("utilization needs total_cycles > 0")
    t = stats.total_cycles
    return (stats.vu_busy / t + stats.mu_busy / t + stats.dram_busy / t) / 3
