"""GNN accelerator stack: model IR, phase-fusion compiler, graph partitioners and a timing simulator."""

__version__ = "0.1.0"
