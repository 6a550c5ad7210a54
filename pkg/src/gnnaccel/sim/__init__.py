from .config import ConfigError, SimConfig
from .core import Machine, RunResult, SimulationFault, SizingError, interpret, simulate
from .stats import Stats, occupancy_rate, overall_utilization
from .timing import DramChannel, dram_cycles, mu_cycles, transfer_cycles, vu_cycles

__all__ = [
    "ConfigError", "SimConfig", "Machine", "RunResult", "SimulationFault", "SizingError", "interpret",
    "simulate", "Stats", "occupancy_rate", "overall_utilization", "DramChannel", "dram_cycles", "mu_cycles",
    "transfer_cycles", "vu_cycles",
]
