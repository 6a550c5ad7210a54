"""Run the sweeps behind the traffic, utilization, latency, occupancy and buffer-size tables.

Writes one CSV per sweep under ``--out`` (default ``results/trends``) and
the per-figure tables of each sweep under ``tables/<sweep>/``.  With the default ak2010 graph the whole script takes a
few minutes on one core; ``--jobs`` spreads sweep points over processes.
"""

import argparse
import sys
from pathlib import Path

from gnnaccel.cli import main as cli

MODELS = "gcn,gat,sage,ggnn"


def run(argv: list[str]) -> None:
    rc = cli(argv)
    if rc != 0:
        sys.exit(rc)


def parse_args() -> argparse.Namespace:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--graph", default="ak2010")
    ap.add_argument("--sparse-graph", default="random:20000:80000:7",
                    help="second graph for the occupancy comparison")
    ap.add_argument("--out", default="results/trends")
    ap.add_argument("--jobs", type=int, default=1)
    return ap.parse_args()


if __name__ == "__main__":
    args = parse_args()
    out = Path(args.out)
    common = ["--jobs", str(args.jobs), "--out", str(out)]
    # sThread sweep for both partitioners: traffic, utilization, latency and occupancy
    run(["sweep", "--graph", args.graph, "--models", MODELS, "--sthreads", "1,2,3,4",
         "--partitioners", "fggp,coarse", "--name", "sthreads", *common])
    run(["sweep", "--graph", args.sparse_graph, "--models", "gcn", "--sthreads", "1,3",
         "--partitioners", "fggp,coarse", "--name", "sparse", *common])
    # destination buffer sizes from 1 MiB to 8 MiB
    run(["sweep", "--graph", args.graph, "--models", MODELS, "--sthreads", "1,3",
         "--db-sizes", ",".join(str(m << 20) for m in (1, 2, 4, 8)), "--name", "dst_buffer", *common])
    for name in ("sthreads", "sparse", "dst_buffer"):
        run(["plotdata", "--input", str(out / f"{name}.csv"), "--out", str(out / "tables" / name)])
