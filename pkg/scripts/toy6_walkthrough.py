"""Print the toy6 shards produced by both partitioners and the compiled GCN program."""

from gnnaccel.compiler import compile_model
from gnnaccel.datasets import toy6
from gnnaccel.isa import disassemble
from gnnaccel.model_ir import build_model
from gnnaccel.partition import SizingBudget, partition_coarse, partition_fggp, redundancy_report


def show(title, plan):
    rep = redundancy_report(plan)
    print(f"{title}: {len(plan.intervals)} intervals, {plan.num_shards} shards, "
          f"useless sources {rep.useless_source_count}")
    for iv, shards in zip(plan.intervals, plan.shards):
        for j, sh in enumerate(shards):
            print(f"  interval [{iv.dst_begin},{iv.dst_end}) shard {j}: sources {list(sh.sources)} "
                  f"edges {sh.resolved_edges()}")
    print(f"  loads per source: {rep.loads_per_source}")


if __name__ == "__main__":
    g = toy6()
    b = SizingBudget(1 << 20, 3, 128, 1)
    for size in (3, 6):
        show(f"fine-grained, interval size {size}", partition_fggp(g, size, b))
    show("coarse, window 3", partition_coarse(g, b, shard_height=3))
    print()
    print(disassemble(compile_model(build_model("gcn", 1, [8, 8]))))
