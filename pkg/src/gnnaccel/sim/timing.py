"""Closed-form latency models of the functional units and DRAM."""

from __future__ import annotations

from math import ceil

from .config import SimConfig


def vu_cycles(kind: str, count: int, dim: int, cfg: SimConfig) -> int:
    """Vector unit latency.

    ``elw``: ``count * dim`` elements spread over every lane of every core.
    ``gtr``: one core per edge, ``dim`` strip-mined over the lanes.
    """
    if count <= 0 or dim <= 0:
        return 0
    if kind == "elw":
        return ceil(count * dim / (cfg.vu_cores * cfg.vu_lanes))
    if kind == "gtr":
        return ceil(count / cfg.vu_cores) * ceil(dim / cfg.vu_lanes)
    raise ValueError(f"unknown vector op kind {kind!r}")


def mu_cycles(m: int, k: int, n: int, cfg: SimConfig) -> int:
    """Output-stationary systolic array: per output tile, stream K plus fill/drain."""
    if m <= 0 or k <= 0 or n <= 0:
        return 0
    return ceil(m / cfg.mu_rows) * ceil(n / cfg.mu_cols) * (k + cfg.mu_rows + cfg.mu_cols)


def transfer_cycles(nbytes: int, cfg: SimConfig) -> int:
    return ceil(nbytes / cfg.bytes_per_cycle) if nbytes > 0 else 0


def dram_cycles(nbytes: int, cfg: SimConfig) -> int:
    """Unloaded latency of one transfer; 0 bytes is no transaction at all."""
    if nbytes <= 0:
        return 0
    return cfg.dram_latency_cycles + transfer_cycles(nbytes, cfg)


class DramChannel:
    """Single FIFO channel: transfers serialize, the fixed latency overlaps."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.free_at = 0
        self.busy = 0

    def request(self, t: int, nbytes: int) -> tuple[int, int]:
        """Return (service start, completion) of a request issued at ``t``."""
        if nbytes <= 0:
            return t, t
        xfer = transfer_cycles(nbytes, self.cfg)
        start = max(t, self.free_at)
        self.free_at = start + xfer
        self.busy += xfer
        return start, start + self.cfg.dram_latency_cycles + xfer
