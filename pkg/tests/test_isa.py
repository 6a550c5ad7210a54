import pytest
from hypothesis import given
from hypothesis import strategies as st

from gnnaccel.compiler import compile_model
from gnnaccel.graph import Shard, VertexInterval
from gnnaccel.isa import (AssemblyError, Group, GroupLayout, InputDecl, Instruction, Operand, ProgramBundle,
                          ResolutionError, Symbol, assemble, check_operands, disassemble, parse_instruction,
                          resolve, validate_bundle)
from gnnaccel.model_ir import build_model
from gnnaccel.pipeline import make_plan
from gnnaccel.sim import SimConfig

HEAD = ".version 1\n.sym D0 128\n.sym E0 128\n.sym S0 128\n.sym W0 128x64\n.input x feature 128\n.output out 128\n"


def test_parse_gather():
    i = parse_instruction("GTHR.SUM.F D0[V,128] <- E0[E,128]")
    assert i.op == "GTHR.SUM.F"
    assert i.dst == Operand("D0", ("V", 128))
    assert i.srcs == (Operand("E0", ("E", 128)),)
    assert i.dst.type == "D" and i.dst.ordinal == 0


def test_parse_memory_and_immediates():
    ld = parse_instruction("LD.S S0[S,128] <- @x")
    assert ld.mem == "x" and ld.is_memory and ld.srcs == ()
    st_ = parse_instruction("ST.D @out <- D0[V,128]")
    assert st_.dst is None and st_.mem == "out"
    fill = parse_instruction("FILL D0[V,128] <- #-3.4028234663852886e+38")
    assert fill.imm == (-3.4028234663852886e+38,)
    gemm = parse_instruction("GEMM D0[V,64] <- D1[V,128], W0[128,64]")
    assert gemm.srcs[1].dims == (128, 64)


def test_parse_errors():
    with pytest.raises(AssemblyError, match="opname"):
        parse_instruction("FROB D0[V,1] <- D1[V,1]")
    with pytest.raises(AssemblyError):
        parse_instruction("RELU D0[V,1]")
    with pytest.raises(AssemblyError, match="operand"):
        parse_instruction("RELU D0(V,1) <- D1[V,1]")
    with pytest.raises(AssemblyError):
        parse_instruction("ST.D D0[V,1] <- D1[V,1]")


def test_macro_misuse_rejected():
    with pytest.raises(AssemblyError, match="macro misuse"):
        assemble(HEAD + ".group 0\n.gather\nGTHR.SUM.F D0[S,128] <- E0[E,128]\n")
    with pytest.raises(AssemblyError, match="undeclared"):
        assemble(HEAD + ".group 0\n.apply\nRELU D7[V,128] <- D0[V,128]\n")
    with pytest.raises(AssemblyError, match="dim"):
        assemble(HEAD + ".group 0\n.apply\nRELU D0[V,64] <- D0[V,128]\n")
    with pytest.raises(AssemblyError, match="version"):
        assemble(".group 0\n")


def test_phase_validity_is_checked():
    b = assemble(HEAD + ".group 0\n.apply\nRELU D0[V,128] <- D0[V,128]\nEXP S0[S,128] <- S0[S,128]\n")
    rep = validate_bundle(b)
    assert any("shard data" in v for v in rep)
    assert any("never stored" in v for v in rep)
    b = assemble(HEAD + ".group 0\n.scatter\nADD S0[S,128] <- S0[S,128], D0[V,128]\n")
    assert any("mixes" in v for v in validate_bundle(b))


def test_scatter_split():
    g = Group(scatter=(parse_instruction("FILL D0[V,1] <- #0.0"), parse_instruction("LD.S S0[S,1] <- @x")))
    assert [i.op for i in g.scatter_local] == ["FILL"]
    assert [i.op for i in g.scatter_stream] == ["LD.S"]


# --- round trip ------------------------------------------------------------------

ELW1 = ("RELU", "EXP", "SIGM", "TANH")
ELW2 = ("ADD", "SUB", "MUL", "DIV")


@st.composite
def bundles(draw):
    dims = {f"{t}{k}": draw(st.integers(1, 256)) for t in "DSE" for k in range(draw(st.integers(1, 3)))}
    syms = [Symbol(n, d) for n, d in dims.items()]
    syms.append(Symbol("W0", draw(st.integers(1, 64)), draw(st.integers(1, 64))))
    row = {"D": "V", "S": "S", "E": "E"}

    def opnd(name):
        return Operand(name, (row[name[0]], dims[name]))

    names = sorted(dims)
    groups = []
    for _ in range(draw(st.integers(1, 3))):
        phase = {ph: [] for ph in ("scatter", "gather", "apply")}
        for _ in range(draw(st.integers(0, 8))):
            ph = draw(st.sampled_from(list(phase)))
            kind = draw(st.sampled_from(["elw1", "elw2", "fill", "load", "store", "lrelu"]))
            d = draw(st.sampled_from(names))
            if kind == "elw1":
                i = Instruction(draw(st.sampled_from(ELW1)), opnd(d), (opnd(draw(st.sampled_from(names))),))
            elif kind == "elw2":
                i = Instruction(draw(st.sampled_from(ELW2)), opnd(d),
                                (opnd(d), opnd(draw(st.sampled_from(names)))))
            elif kind == "lrelu":
                i = Instruction("LRELU", opnd(d), (opnd(d),), (draw(st.floats(-10, 10, allow_nan=False)),))
            elif kind == "fill":
                i = Instruction("FILL", opnd(d), imm=(draw(st.floats(allow_nan=False, allow_infinity=False)),))
            elif kind == "load":
                i = Instruction({"D": "LD.D", "S": "LD.S", "E": "LD.E"}[d[0]], opnd(d), mem="t1")
            else:
                dd = next((n for n in names if n[0] == "D"))
                i = Instruction("ST.D", None, (opnd(dd),), mem="t2")
            phase[ph].append(i)
        groups.append(Group(**{k: tuple(v) for k, v in phase.items()}))
    w = syms[-1]
    init = (Instruction("LD.W", Operand("W0", (w.rows, w.dim)), mem="l0.W"),)
    return ProgramBundle(tuple(groups), tuple(syms), init, (InputDecl("x", "feature", 4),), "t2", 4)


@given(bundles())
def test_assembly_round_trip(b):
    assert check_operands(b).ok
    text = disassemble(b)
    back = assemble(text)
    assert back == b
    assert disassemble(back) == text


# --- resolution ------------------------------------------------------------------


def _layout(num_d=1, num_s=1, num_e=1, seb=1 << 30, slot=0):
    return GroupLayout(tuple((f"D{k}", 128) for k in range(num_d)), tuple((f"S{k}", 128) for k in range(num_s)),
                       tuple((f"E{k}", 128) for k in range(num_e)), (("W0", 128 * 64),), 1024,
                       (8 << 20) // 4, seb // 4, (2 << 20) // 4, slot)


def _shard(num_src, num_edge):
    return Shard(0, tuple(range(num_src)), tuple([0] * num_edge), tuple([0] * num_edge))


def test_resolve_row_macros():
    iv = VertexInterval(0, 0, 1024)
    lay = _layout()
    r = resolve(parse_instruction("GTHR.SUM.F D0[V,128] <- E0[E,128]"), iv, _shard(10, 3000), lay)
    assert (r.dst.rows, r.dst.dim) == (1024, 128)
    assert (r.srcs[0].rows, r.srcs[0].dim) == (3000, 128)
    assert r.dst.buffer == "DB" and r.srcs[0].buffer == "SEB"
    assert r.srcs[0].offset == 10 * 128  # edge rows follow the shard's source rows
    assert r.dst.extent == 1024 * 128 * 4


def test_resolve_empty_shard_is_noop():
    r = resolve(parse_instruction("SCTR.F E0[E,128] <- S0[S,128]"), VertexInterval(0, 0, 8), _shard(0, 0), _layout())
    assert r.is_noop and r.srcs[0].extent == 0


def test_resolve_slot_offsets():
    lay = _layout(seb=4 * 1000, slot=2)  # 1000-element slots
    off = lay.offsets(1, 1)
    assert off["S0"] == ("SEB", 2000)
    assert off["E0"] == ("SEB", 2000 + 128)


def test_resolve_overflow():
    lay = _layout(seb=4 * 1000)
    with pytest.raises(ResolutionError, match="slot holds"):
        resolve(parse_instruction("SCTR.F E0[E,128] <- S0[S,128]"), VertexInterval(0, 0, 8), _shard(4, 8), lay)
    with pytest.raises(ResolutionError, match="width"):
        resolve(parse_instruction("RELU D0[V,128] <- D0[V,128]"), VertexInterval(0, 0, 2048), None, _layout())


@pytest.mark.parametrize("kind", ["gcn", "gat"])
def test_partitioner_shards_always_resolve(ak2010, kind):
    cfg = SimConfig()
    b = compile_model(build_model(kind, 2, [128, 128, 128]))
    p = make_plan(ak2010, b, cfg)
    width = max(iv.width for iv in p.intervals)
    for k in range(len(b.groups)):
        lay = GroupLayout.for_group(b, k, width, cfg.dst_buffer, cfg.srcedge_buffer, cfg.weight_buffer, 3)
        for sh in p.all_shards():
            lay.offsets(sh.num_src, sh.num_edge)
