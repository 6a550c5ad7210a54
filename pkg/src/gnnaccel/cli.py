"""Command-line experiment runner.

Subcommands: ``compile``, ``partition``, ``simulate`` (alias ``run``),
``sweep`` and ``plotdata``.  Any long flag can also be given in a config
file passed with ``--config``: one ``key = value`` per line, keys spelled
like the flags with ``_`` or ``-``; ``#`` starts a comment.  Flags given on
the command line win over the file.  The default output directory is taken
from ``$GNNACCEL_OUT`` (falling back to ``./results``).
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .compiler import CompileError, compile_model, sidecar
from .datasets import load_dataset
from .graph import GraphError, validate_plan
from .isa import ResolutionError, disassemble
from .model_ir import UcgError, build_model, canonical_kind, save_ucg
from .partition import CapacityError, redundancy_report, save_plan
from .pipeline import ExperimentConfig, make_plan, run_experiment
from .sim import ConfigError, SimConfig, SimulationFault, SizingError

OUT_ENV = "GNNACCEL_OUT"

# sim flag -> (SimConfig field, type)
SIM_FLAGS = {
    "num_sthread": int, "dst_buffer": int, "srcedge_buffer": int, "weight_buffer": int, "graph_buffer": int,
    "dram_bandwidth": float, "dram_latency_cycles": int, "vu_cores": int, "vu_lanes": int, "mu_rows": int,
    "mu_cols": int, "clock_hz": float, "hbm_energy_pj_per_bit": float,
}

EXPECTED_ERRORS = (CompileError, UcgError, GraphError, CapacityError, ConfigError, SimulationFault, SizingError,
                   ResolutionError, FileNotFoundError, ValueError)


class ReportError(RuntimeError):
    pass


# --- config handling -------------------------------------------------------------------


def read_config_file(path: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _ints(text: str | None) -> list[int] | None:
    return None if text is None else [int(x) for x in str(text).split(",") if x.strip()]


def _strs(text: str | None) -> list[str] | None:
    return None if text is None else [x.strip() for x in str(text).split(",") if x.strip()]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    return str(text).lower() in ("1", "true", "yes", "on")


def _merge(args: argparse.Namespace, parser: argparse.ArgumentParser) -> argparse.Namespace:
    if not getattr(args, "config", None):
        return args
    file_vals = read_config_file(args.config)
    known = {a.dest: a for a in parser._actions}
    for k, v in file_vals.items():
        if k not in known:
            raise ValueError(f"unknown config key {k!r}")
        if getattr(args, k, None) is None:
            act = known[k]
            if act.const is not None and act.nargs == 0:  # store_true / store_false style flags
                v = _bool(v)
            elif act.type is not None:
                v = act.type(v)
            setattr(args, k, v)
    return args


def _sim_config(args) -> SimConfig:
    kw = {k: getattr(args, k) for k in SIM_FLAGS if getattr(args, k, None) is not None}
    return SimConfig(**kw)


def _experiment(args, **over) -> ExperimentConfig:
    dims = tuple(_ints(args.dims)) if getattr(args, "dims", None) else None
    kw = dict(graph=args.graph or "ak2010", model=args.model or "gcn", layers=args.layers or 2,
              dim=args.dim or 128, dims=dims, interval_size=args.interval_size,
              partitioner=args.partitioner or "fggp", seed=args.seed if args.seed is not None else 0,
              verify=args.verify, symmetrize=bool(args.symmetrize), sim=_sim_config(args))
    kw.update(over)
    return ExperimentConfig(**kw)


def _out_dir(args) -> Path:
    d = Path(args.out or os.environ.get(OUT_ENV, "results"))
    d.mkdir(parents=True, exist_ok=True)
    return d


# --- csv helpers -------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([_fmt(r[k]) for k in rows[0]])
    return buf.getvalue()


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


# --- subcommands -------------------------------------------------------------------------


def cmd_compile(args) -> int:
    cfg = _experiment(args)
    u = build_model(cfg.model, len(cfg.layer_dims) - 1, cfg.layer_dims)
    b = compile_model(u, merge=not args.no_merge)
    text = disassemble(b)
    if args.output:
        Path(args.output).write_text(text)
        Path(args.output).with_suffix(".sidecar.json").write_text(json.dumps(sidecar(b).to_dict(), indent=2) + "\n")
    else:
        sys.stdout.write(text)
    if args.emit_ucg:
        Path(args.emit_ucg).write_text(save_ucg(u))
    return 0


def cmd_partition(args) -> int:
    cfg = _experiment(args)
    g = _load_graph(cfg)
    u = build_model(cfg.model, len(cfg.layer_dims) - 1, cfg.layer_dims)
    b = compile_model(u)
    plan = make_plan(g, b, cfg.sim, cfg.partitioner, cfg.interval_size)
    rep = validate_plan(g, plan)
    red = redundancy_report(plan)
    if args.output:
        Path(args.output).write_text(save_plan(plan))
    print(f"{plan.origin}: {len(plan.intervals)} intervals, {plan.num_shards} shards, dims={plan.dims}, "
          f"source loads={red.total_source_loads}, useless sources={red.useless_source_count}, "
          f"violations={len(rep.violations)}")
    for v in rep.violations[:10]:
        print(f"  violation: {v}")
    return 0 if rep.ok else 1


def _load_graph(cfg: ExperimentConfig):
    return load_dataset(cfg.graph, symmetrize=cfg.symmetrize)


def cmd_simulate(args) -> int:
    cfg = _experiment(args)
    out = _out_dir(args)
    g = _load_graph(cfg)
    res = run_experiment(cfg, graph=g, trace=bool(args.trace))
    base = res if cfg.sim.num_sthread == 1 else run_experiment(
        cfg.replace(num_sthread=1, verify=False), graph=g)
    coarse = res if cfg.partitioner == "coarse" else run_experiment(
        cfg.replace(partitioner="coarse", verify=False), graph=g)
    tag = f"{canonical_kind(cfg.model)}-{Path(cfg.graph).stem}-{cfg.config_hash()}"
    row = res.row()
    payload = {"config": cfg.to_dict(), "config_hash": cfg.config_hash(), "stats": res.stats.to_dict(),
               "verify_error": res.verify_error, "op_by_op_bytes": res.op_by_op_bytes}
    (out / f"{tag}.stats.json").write_text(json.dumps(payload, indent=2) + "\n")
    (out / f"{tag}.csv").write_text(rows_to_csv([row]))
    if args.trace and res.run.trace_csv is not None:
        (out / f"{tag}.trace.csv").write_text(res.run.trace_csv)
    s = res.stats
    lines = [
        f"model {row['model']} on {cfg.graph}: {s.total_cycles} cycles, {s.dram_bytes} DRAM bytes",
        f"speedup vs 1 sThread: {base.stats.total_cycles / s.total_cycles:.3f}x",
        f"traffic vs op-by-op: {row['traffic_ratio']:.4f} of {res.op_by_op_bytes} bytes",
        f"SEB occupancy: {row['occupancy_seb']:.4f} (coarse plan: {coarse.row()['occupancy_seb']:.4f})",
        f"utilization: {row['utilization']:.4f}",
        f"DRAM energy: {s.dram_energy_pj:.6g} pJ",
    ]
    if res.verify_error is not None:
        ok = res.verify_error <= 1e-4
        lines.append(f"verify vs dense oracle: rel err {res.verify_error:.3e} ({'pass' if ok else 'FAIL'})")
    summary = "\n".join(lines) + "\n"
    (out / f"{tag}.summary.txt").write_text(summary)
    sys.stdout.write(summary)
    if res.verify_error is not None and res.verify_error > 1e-4:
        return 2
    return 0


def _sweep_point(cfg: ExperimentConfig) -> dict:
    res = run_experiment(cfg)
    return res.row()


def sweep_configs(base: ExperimentConfig, models, sthreads, partitioners, seb_sizes, db_sizes) -> list[ExperimentConfig]:
    out = []
    for m, part, seb, db, nt in itertools.product(models, partitioners, seb_sizes, db_sizes, sthreads):
        over = {"model": m, "partitioner": part, "num_sthread": nt}
        if seb is not None:
            over["srcedge_buffer"] = seb
        if db is not None:
            over["dst_buffer"] = db
        out.append(base.replace(**over))
    return out


def cmd_sweep(args) -> int:
    base = _experiment(args)
    models = _strs(args.models) or [base.model]
    sthreads = _ints(args.sthreads) or [1, 2, 3, 4]
    parts = _strs(args.partitioners) or [base.partitioner]
    sebs = _ints(args.seb_sizes) or [None]
    dbs = _ints(args.db_sizes) or [None]
    cfgs = sweep_configs(base, models, sthreads, parts, sebs, dbs)
    jobs = args.jobs or 1
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_sweep_point, cfgs))
    else:
        g = _load_graph(base)
        rows = [run_experiment(c, graph=g).row() for c in cfgs]
    out = _out_dir(args)
    name = args.name or "sweep"
    (out / f"{name}.csv").write_text(rows_to_csv(rows))
    print(f"wrote {len(rows)} rows to {out / (name + '.csv')}")
    return 0


def _num(r: dict, k: str) -> float:
    return float(r[k])


def plot_tables(rows: list[dict]) -> dict[str, list[dict]]:
    """Figure-ready tables normalized the way each figure is."""
    tables: dict[str, list[dict]] = {}
    key = lambda r: (r["graph"], r["model"], r["partitioner"], r["srcedge_buffer"], r["dst_buffer"])  # noqa: E731
    by: dict[tuple, list[dict]] = {}
    for r in rows:
        by.setdefault(key(r), []).append(r)

    lat, util = [], []
    for k, rs in by.items():
        base = [r for r in rs if int(r["num_sthread"]) == 1]
        if not base:
            raise ReportError(f"no 1-sThread baseline row for {k}")
        b = base[0]
        for r in sorted(rs, key=lambda r: int(r["num_sthread"])):
            lat.append({"graph": r["graph"], "model": r["model"], "partitioner": r["partitioner"],
                        "num_sthread": int(r["num_sthread"]), "latency": int(r["latency"]),
                        "latency_norm": _num(r, "latency") / _num(b, "latency")})
            util.append({"graph": r["graph"], "model": r["model"], "partitioner": r["partitioner"],
                         "num_sthread": int(r["num_sthread"]), "utilization": _num(r, "utilization"),
                         "utilization_norm": _num(r, "utilization") / _num(b, "utilization")})
    tables["fig9_latency"] = lat
    tables["fig8_utilization"] = util

    pick = lambda rs: sorted(rs, key=lambda r: (abs(int(r["num_sthread"]) - 3), int(r["num_sthread"])))[0]  # noqa: E731
    traffic = []
    for k, rs in by.items():
        if k[2] != "fggp":
            continue
        r = pick(rs)
        traffic.append({"graph": r["graph"], "model": r["model"], "num_sthread": int(r["num_sthread"]),
                        "plof_bytes": int(r["dram_bytes"]), "op_by_op_bytes": int(r["op_by_op_bytes"]),
                        "traffic_ratio": _num(r, "dram_bytes") / _num(r, "op_by_op_bytes")})
    tables["fig7_traffic"] = traffic

    occ = []
    pairs: dict[tuple, dict[str, dict]] = {}
    for k, rs in by.items():
        r = pick(rs)
        pairs.setdefault((k[0], k[1], k[3], k[4]), {})[k[2]] = r
    for k, series in pairs.items():
        if "coarse" not in series:
            continue
        c = _num(series["coarse"], "occupancy_seb")
        for part in sorted(series):
            occ.append({"graph": k[0], "model": k[1], "series": part,
                        "occupancy_seb": _num(series[part], "occupancy_seb"),
                        "ratio_to_coarse": _num(series[part], "occupancy_seb") / c if c else None})
    tables["fig10_occupancy"] = occ

    reuse = []
    dbkey: dict[tuple, list[dict]] = {}
    for r in rows:
        if r["partitioner"] == "fggp":
            dbkey.setdefault((r["graph"], r["model"], r["num_sthread"], r["srcedge_buffer"]), []).append(r)
    for k, rs in dbkey.items():
        sizes = sorted({int(r["dst_buffer"]) for r in rs})
        if len(sizes) < 2:
            continue
        rs = sorted(rs, key=lambda r: int(r["dst_buffer"]))
        b = rs[0]
        for r in rs:
            reuse.append({"graph": k[0], "model": k[1], "num_sthread": int(k[2]), "dst_buffer": int(r["dst_buffer"]),
                          "dram_bytes_norm": _num(r, "dram_bytes") / _num(b, "dram_bytes"),
                          "speedup": _num(b, "latency") / _num(r, "latency")})
    tables["fig11_buffer"] = reuse
    return tables


def cmd_plotdata(args) -> int:
    src = Path(args.input)
    files = sorted(src.glob("*.csv")) if src.is_dir() else [src]
    rows = [r for f in files if not f.name.startswith("fig") for r in read_csv(f) if "config_hash" in r]
    if not rows:
        raise ReportError(f"no sweep rows found in {src}")
    out = _out_dir(args)
    for name, table in plot_tables(rows).items():
        (out / f"{name}.csv").write_text(rows_to_csv(table))
        print(f"{name}: {len(table)} rows")
    return 0


# --- parser ----------------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file mirroring the long flags")
    p.add_argument("--graph", help="toy6 | ak2010 | random:<n>:<m>[:seed] | chain:<n> | path")
    p.add_argument("--model", help="gcn | gat | sage | ggnn")
    p.add_argument("--layers", type=int)
    p.add_argument("--dim", type=int, help="per-layer embedding width (default 128)")
    p.add_argument("--dims", help="comma-separated layer widths, overrides --layers/--dim")
    p.add_argument("--interval-size", dest="interval_size", type=int)
    p.add_argument("--partitioner", help="fggp | coarse")
    p.add_argument("--seed", type=int)
    p.add_argument("--symmetrize", action="store_true", default=None)
    p.add_argument("--verify", dest="verify", action="store_true", default=None)
    p.add_argument("--no-verify", dest="verify", action="store_false")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./results)")
    for k, typ in SIM_FLAGS.items():
        p.add_argument("--" + k.replace("_", "-"), dest=k, type=typ)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gnnaccel", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="emit ISA assembly for a model")
    _common(p)
    p.add_argument("-o", "--output")
    p.add_argument("--no-merge", action="store_true", default=None)
    p.add_argument("--emit-ucg", dest="emit_ucg")
    p.set_defaults(fn=cmd_compile)

    p = sub.add_parser("partition", help="partition a graph and report shard statistics")
    _common(p)
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_partition)

    for name in ("simulate", "run"):
        p = sub.add_parser(name, help="simulate one configuration and write reports")
        _common(p)
        p.add_argument("--trace", action="store_true", default=None)
        p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("sweep", help="run a grid of configurations into one CSV")
    _common(p)
    p.add_argument("--models")
    p.add_argument("--sthreads")
    p.add_argument("--partitioners")
    p.add_argument("--seb-sizes", dest="seb_sizes")
    p.add_argument("--db-sizes", dest="db_sizes")
    p.add_argument("--jobs", type=int)
    p.add_argument("--name")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("plotdata", help="turn sweep CSVs into per-figure tables")
    p.add_argument("--config")
    p.add_argument("--input", required=True, help="sweep CSV or directory of them")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_plotdata)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    sub = ap._subparsers._group_actions[0].choices[args.command]
    try:
        args = _merge(args, sub)
        return args.fn(args)
    except (*EXPECTED_ERRORS, ReportError) as exc:
        print(f"gnnaccel {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
