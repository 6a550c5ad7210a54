"""Instruction set, textual assembly and runtime operand resolution.

Assembly layout::

    .version 1
    .sym D0 128            # D/S/E symbols: per-row element count
    .sym W0 128x64         # W symbols: full shape
    .input x feature 128
    .output t17
    .init
    LD.W W0[128,64] <- @l0.W
    .group 0
    .scatter
    LD.S S0[S,128] <- @x
    .gather
    SCTR.F E0[E,128] <- S0[S,128]
    GTHR.SUM.F D0[V,128] <- E0[E,128]
    .apply
    ST.D @t17 <- D0[V,128]

Row macros are decoded per interval/shard: ``V`` is the interval width,
``S`` the shard's source count, ``E`` its edge count.  ``V`` may only
index D symbols, ``S`` only S symbols and ``E`` only E symbols.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass
from typing import Iterable, TextIO

from .graph import Shard, ValidationReport, VertexInterval

ISA_VERSION = 1
ELEM_BYTES = 4

ELW_OPCODES = ("ADD", "SUB", "MUL", "DIV", "EXP", "RELU", "LRELU", "SIGM", "TANH", "FILL", "CONCAT")
GTR_OPCODES = ("GTHR.SUM.F", "GTHR.MAX.F", "SCTR.F", "SCTR.B")
MEM_OPCODES = ("LD.D", "LD.S", "LD.E", "LD.W", "ST.D")
COMPUTE_OPCODES = ELW_OPCODES + ("GEMM",) + GTR_OPCODES
OPCODES = COMPUTE_OPCODES + MEM_OPCODES
GATHER_OPCODES = ("GTHR.SUM.F", "GTHR.MAX.F")

SYMBOL_TYPES = ("D", "S", "E", "W")
ROW_MACRO = {"D": "V", "S": "S", "E": "E"}
PHASES = ("scatter", "gather", "apply")
LOAD_TYPE = {"LD.D": "D", "LD.S": "S", "LD.E": "E", "LD.W": "W"}


class AssemblyError(ValueError):
    pass


class ResolutionError(ValueError):
    pass


@dataclass(frozen=True)
class Operand:
    sym: str  # e.g. "D3"
    dims: tuple  # (row macro or int, int)

    @property
    def type(self) -> str:
        return self.sym[0]

    @property
    def ordinal(self) -> int:
        return int(self.sym[1:])

    def text(self) -> str:
        return f"{self.sym}[{','.join(str(d) for d in self.dims)}]"


@dataclass(frozen=True)
class Instruction:
    op: str
    dst: Operand | None = None
    srcs: tuple[Operand, ...] = ()
    imm: tuple[float, ...] = ()
    mem: str | None = None  # DRAM tensor name for loads/stores

    @property
    def is_memory(self) -> bool:
        return self.op in MEM_OPCODES

    @property
    def operands(self) -> tuple[Operand, ...]:
        return ((self.dst,) if self.dst is not None else ()) + self.srcs

    def symbols(self) -> tuple[str, ...]:
        return tuple(o.sym for o in self.operands)

    def touches(self, sym_type: str) -> bool:
        return any(o.type == sym_type for o in self.operands)

    def text(self) -> str:
        if self.op == "ST.D":
            return f"ST.D @{self.mem} <- {self.srcs[0].text()}"
        if self.op in LOAD_TYPE:
            return f"{self.op} {self.dst.text()} <- @{self.mem}"
        rhs = [s.text() for s in self.srcs] + [f"#{v!r}" for v in self.imm]
        return f"{self.op} {self.dst.text()} <- {', '.join(rhs)}"


@dataclass(frozen=True)
class Symbol:
    name: str
    dim: int
    rows: int | None = None  # W symbols only

    @property
    def type(self) -> str:
        return self.name[0]

    def text(self) -> str:
        return f"{self.rows}x{self.dim}" if self.type == "W" else str(self.dim)


@dataclass(frozen=True)
class Group:
    scatter: tuple[Instruction, ...] = ()
    gather: tuple[Instruction, ...] = ()
    apply: tuple[Instruction, ...] = ()

    def phase(self, name: str) -> tuple[Instruction, ...]:
        return getattr(self, name)

    def instructions(self) -> Iterable[Instruction]:
        return (*self.scatter, *self.gather, *self.apply)

    @property
    def scatter_local(self) -> tuple[Instruction, ...]:
        """ScatterPhase part run once per interval on destination data."""
        return tuple(i for i in self.scatter if not i.touches("S"))

    @property
    def scatter_stream(self) -> tuple[Instruction, ...]:
        """ScatterPhase part streamed over each shard's source rows."""
        return tuple(i for i in self.scatter if i.touches("S"))


@dataclass(frozen=True)
class InputDecl:
    name: str
    role: str
    dim: int


@dataclass(frozen=True)
class ProgramBundle:
    groups: tuple[Group, ...]
    symbols: tuple[Symbol, ...]
    init: tuple[Instruction, ...] = ()
    inputs: tuple[InputDecl, ...] = ()
    output: str = ""
    output_dim: int = 0

    def symbol_table(self) -> dict[str, Symbol]:
        return {s.name: s for s in self.symbols}

    def instructions(self) -> Iterable[Instruction]:
        yield from self.init
        for g in self.groups:
            yield from g.instructions()

    def count(self, op: str) -> int:
        return sum(1 for i in self.instructions() if i.op == op)


# --- assembly ---------------------------------------------------------------------


def disassemble(b: ProgramBundle) -> str:
    out = [f".version {ISA_VERSION}"]
    out += [f".sym {s.name} {s.text()}" for s in b.symbols]
    out += [f".input {d.name} {d.role} {d.dim}" for d in b.inputs]
    out.append(f".output {b.output} {b.output_dim}")
    out.append(".init")
    out += [i.text() for i in b.init]
    for k, g in enumerate(b.groups):
        out.append(f".group {k}")
        for ph in PHASES:
            out.append(f".{ph}")
            out += [i.text() for i in g.phase(ph)]
    return "\n".join(out) + "\n"


_OPERAND = re.compile(r"^([DSEW]\d+)\[([^\]]*)\]$")


def _parse_dim(tok: str):
    tok = tok.strip()
    return int(tok) if tok.lstrip("-").isdigit() else tok


def _parse_operand(tok: str, lineno: int) -> Operand:
    m = _OPERAND.match(tok.strip())
    if not m:
        raise AssemblyError(f"line {lineno}: bad operand {tok.strip()!r}")
    return Operand(m.group(1), tuple(_parse_dim(d) for d in m.group(2).split(",")))


def parse_instruction(line: str, lineno: int = 0) -> Instruction:
    if "<-" not in line:
        raise AssemblyError(f"line {lineno}: expected '<-' in {line!r}")
    lhs, rhs = (s.strip() for s in line.split("<-", 1))
    parts = lhs.split(None, 1)
    op = parts[0]
    if op not in OPCODES:
        raise AssemblyError(f"line {lineno}: unknown opname {op!r}")
    if len(parts) != 2:
        raise AssemblyError(f"line {lineno}: missing destination")
    target = parts[1].strip()
    if op == "ST.D":
        if not target.startswith("@"):
            raise AssemblyError(f"line {lineno}: ST.D needs an @tensor destination")
        return Instruction(op, None, (_parse_operand(rhs, lineno),), mem=target[1:])
    dst = _parse_operand(target, lineno)
    if op in LOAD_TYPE:
        if not rhs.startswith("@"):
            raise AssemblyError(f"line {lineno}: {op} needs an @tensor source")
        return Instruction(op, dst, mem=rhs[1:])
    srcs, imm = [], []
    for tok in (t.strip() for t in re.split(r",(?![^\[]*\])", rhs)):
        if tok.startswith("#"):
            try:
                imm.append(float(tok[1:]))
            except ValueError:
                raise AssemblyError(f"line {lineno}: bad immediate {tok!r}") from None
        elif tok:
            srcs.append(_parse_operand(tok, lineno))
    return Instruction(op, dst, tuple(srcs), tuple(imm))


def assemble(text: TextIO | str) -> ProgramBundle:
    if not isinstance(text, str):
        text = text.read()
    symbols: list[Symbol] = []
    inputs: list[InputDecl] = []
    init: list[Instruction] = []
    groups: list[dict[str, list[Instruction]]] = []
    output, output_dim = "", 0
    section: list[Instruction] | None = None
    version_seen = False
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.split("#", 1)[0] if raw.lstrip().startswith("#") else raw
        line = line.strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == ".version":
            if len(tok) != 2 or tok[1] != str(ISA_VERSION):
                raise AssemblyError(f"line {lineno}: unsupported version {' '.join(tok[1:])!r}")
            version_seen = True
        elif tok[0] == ".sym":
            name, shape = tok[1], tok[2]
            if name[0] not in SYMBOL_TYPES or not name[1:].isdigit():
                raise AssemblyError(f"line {lineno}: bad symbol name {name!r}")
            if name[0] == "W":
                r, c = shape.split("x")
                symbols.append(Symbol(name, int(c), int(r)))
            else:
                symbols.append(Symbol(name, int(shape)))
        elif tok[0] == ".input":
            inputs.append(InputDecl(tok[1], tok[2], int(tok[3])))
        elif tok[0] == ".output":
            output, output_dim = tok[1], int(tok[2])
        elif tok[0] == ".init":
            section = init
        elif tok[0] == ".group":
            if int(tok[1]) != len(groups):
                raise AssemblyError(f"line {lineno}: groups must be numbered in order")
            groups.append({ph: [] for ph in PHASES})
            section = None
        elif tok[0][1:] in PHASES:
            if not groups:
                raise AssemblyError(f"line {lineno}: phase outside a group")
            section = groups[-1][tok[0][1:]]
        elif tok[0].startswith("."):
            raise AssemblyError(f"line {lineno}: unknown directive {tok[0]!r}")
        else:
            if section is None:
                raise AssemblyError(f"line {lineno}: instruction outside a section")
            section.append(parse_instruction(line, lineno))
    if not version_seen:
        raise AssemblyError("missing .version line")
    b = ProgramBundle(tuple(Group(**{ph: tuple(g[ph]) for ph in PHASES}) for g in groups),
                      tuple(symbols), tuple(init), tuple(inputs), output, output_dim)
    errors = check_operands(b)
    if errors:
        raise AssemblyError("; ".join(errors.violations[:5]))
    return b


# --- validation -------------------------------------------------------------------


def _operand_errors(i: Instruction, table: dict[str, Symbol]) -> Iterable[str]:
    if i.op not in OPCODES:
        yield f"unknown opname {i.op!r}"
        return
    for o in i.operands:
        s = table.get(o.sym)
        if s is None:
            yield f"{i.op}: undeclared symbol {o.sym}"
            continue
        if len(o.dims) != 2:
            yield f"{i.op}: {o.sym} needs two dims"
            continue
        rows, cols = o.dims
        if o.type == "W":
            if (rows, cols) != (s.rows, s.dim):
                yield f"{i.op}: {o.sym} shape {o.dims} disagrees with declaration"
        else:
            if rows != ROW_MACRO[o.type]:
                yield f"{i.op}: macro misuse, {o.sym} indexed by {rows!r} (expects {ROW_MACRO[o.type]})"
            if cols != s.dim:
                yield f"{i.op}: {o.sym} dim {cols} disagrees with declaration {s.dim}"
    if i.is_memory:
        if len(i.operands) != 1 or not i.mem:
            yield f"{i.op}: memory instructions take exactly one symbol and one tensor"
        elif i.op in LOAD_TYPE and i.dst.type != LOAD_TYPE[i.op]:
            yield f"{i.op}: destination must be a {LOAD_TYPE[i.op]} symbol"
        elif i.op == "ST.D" and i.srcs[0].type != "D":
            yield "ST.D: source must be a D symbol"
        return
    if i.dst is None:
        yield f"{i.op}: missing destination"
    if i.op != "FILL" and not i.srcs:
        yield f"{i.op}: compute instructions need at least one source"
    if i.op == "FILL" and len(i.imm) != 1:
        yield "FILL: needs one immediate"
    if i.op in GATHER_OPCODES and (i.dst.type != "D" or [s.type for s in i.srcs] != ["E"]):
        yield f"{i.op}: expects D <- E"
    if i.op == "SCTR.F" and (i.dst.type != "E" or [s.type for s in i.srcs] != ["S"]):
        yield "SCTR.F: expects E <- S"
    if i.op == "SCTR.B" and (i.dst.type != "E" or [s.type for s in i.srcs] != ["D"]):
        yield "SCTR.B: expects E <- D"


def check_operands(b: ProgramBundle) -> ValidationReport:
    rep = ValidationReport()
    table = b.symbol_table()
    for i in b.instructions():
        for msg in _operand_errors(i, table):
            rep.add(msg)
    return rep


def validate_bundle(b: ProgramBundle) -> ValidationReport:
    """Operand checks plus phase validity.

    ApplyPhase may reference only D and W symbols.  ScatterPhase may not
    reference E symbols, and any ScatterPhase instruction touching an S
    symbol must touch only S and W (it is streamed over shard data).
    """
    rep = check_operands(b)
    for i in b.init:
        if i.op != "LD.W":
            rep.add(f"init: only LD.W allowed, got {i.op}")
    for k, g in enumerate(b.groups):
        for i in g.apply:
            if i.touches("S") or i.touches("E"):
                rep.add(f"group {k} apply: {i.text()} references shard data")
        for i in g.scatter:
            if i.touches("E"):
                rep.add(f"group {k} scatter: {i.text()} references edge data")
            if i.touches("S") and (i.touches("D") or i.mem and i.op != "LD.S"):
                rep.add(f"group {k} scatter: {i.text()} mixes shard and interval data")
        for i in g.gather:
            if i.is_memory:
                rep.add(f"group {k} gather: memory instruction {i.op} not allowed")
            if i.op == "LD.W":
                rep.add(f"group {k}: LD.W outside init")
        if any(i.op in GTR_OPCODES for i in g.instructions()) and not any(
                i.op in GATHER_OPCODES for i in g.gather):
            rep.add(f"group {k}: GTR instructions without a gather")
    out_stores = [i for i in b.groups[-1].apply if i.op == "ST.D" and i.mem == b.output] if b.groups else []
    if b.groups and not out_stores:
        rep.add(f"output {b.output} is never stored")
    return rep


# --- runtime resolution -----------------------------------------------------------


@dataclass(frozen=True)
class ResolvedOperand:
    sym: str
    buffer: str  # DB, SEB, WB
    offset: int  # elements from the buffer base
    rows: int
    dim: int

    @property
    def elements(self) -> int:
        return self.rows * self.dim

    @property
    def extent(self) -> int:
        return self.elements * ELEM_BYTES


@dataclass(frozen=True)
class ResolvedInstruction:
    op: str
    dst: ResolvedOperand | None
    srcs: tuple[ResolvedOperand, ...]
    imm: tuple[float, ...]
    mem: str | None

    @property
    def is_noop(self) -> bool:
        return all(o.elements == 0 for o in ((self.dst,) if self.dst else ()) + self.srcs)


@dataclass(frozen=True)
class GroupLayout:
    """Buffer placement of one group's symbols.

    D symbols are laid out back to back in the destination buffer, each
    ``max_width`` rows tall.  Each sThread owns a slot of the source/edge
    buffer holding the shard's S symbols followed by its E symbols; their
    offsets depend on the shard and are computed in :func:`resolve`.
    """

    d_syms: tuple[tuple[str, int], ...]  # (name, dim) in placement order
    s_syms: tuple[tuple[str, int], ...]
    e_syms: tuple[tuple[str, int], ...]
    w_syms: tuple[tuple[str, int], ...]  # (name, element count)
    max_width: int
    db_elements: int
    slot_elements: int
    wb_elements: int
    slot: int = 0

    @classmethod
    def for_group(cls, b: ProgramBundle, k: int, max_width: int, db_bytes: int, seb_bytes: int,
                  wb_bytes: int, num_sthread: int, slot: int = 0) -> "GroupLayout":
        table = b.symbol_table()
        used: dict[str, None] = {}
        for i in b.groups[k].instructions():
            for s in i.symbols():
                used.setdefault(s)
        by = lambda t: tuple((s, table[s].dim) for s in used if s[0] == t)  # noqa: E731
        ws = tuple((s.name, s.dim * s.rows) for s in b.symbols if s.type == "W")
        return cls(by("D"), by("S"), by("E"), ws, max_width, db_bytes // ELEM_BYTES,
                   (seb_bytes // ELEM_BYTES) // num_sthread, wb_bytes // ELEM_BYTES, slot)

    @property
    def dim_src(self) -> int:
        return sum(d for _, d in self.s_syms)

    @property
    def dim_edge(self) -> int:
        return sum(d for _, d in self.e_syms)

    @property
    def dim_dst(self) -> int:
        return sum(d for _, d in self.d_syms)

    def offsets(self, num_src: int, num_edge: int) -> dict[str, tuple[str, int]]:
        off: dict[str, tuple[str, int]] = {}
        pos = 0
        for name, dim in self.d_syms:
            off[name] = ("DB", pos)
            pos += dim * self.max_width
        if pos > self.db_elements:
            raise ResolutionError(f"D symbols need {pos} elements, destination buffer holds {self.db_elements}")
        base = self.slot * self.slot_elements
        pos = 0
        for name, dim in self.s_syms:
            off[name] = ("SEB", base + pos)
            pos += dim * num_src
        for name, dim in self.e_syms:
            off[name] = ("SEB", base + pos)
            pos += dim * num_edge
        if pos > self.slot_elements:
            raise ResolutionError(
                f"shard needs {pos} elements of source/edge buffer, slot holds {self.slot_elements}")
        pos = 0
        for name, n in self.w_syms:
            off[name] = ("WB", pos)
            pos += n
        if pos > self.wb_elements:
            raise ResolutionError(f"weights need {pos} elements, weight buffer holds {self.wb_elements}")
        return off


def resolve(i: Instruction, interval: VertexInterval, shard: Shard | None,
            layout: GroupLayout) -> ResolvedInstruction:
    ns = shard.num_src if shard is not None else 0
    ne = shard.num_edge if shard is not None else 0
    if interval.width > layout.max_width:
        raise ResolutionError(f"interval width {interval.width} exceeds layout width {layout.max_width}")
    macro = {"V": interval.width, "S": ns, "E": ne}
    off = layout.offsets(ns, ne)

    def res(o: Operand) -> ResolvedOperand:
        if o.sym not in off:
            raise ResolutionError(f"symbol {o.sym} has no placement in this group")
        buf, base = off[o.sym]
        rows = macro.get(o.dims[0], o.dims[0])
        return ResolvedOperand(o.sym, buf, base, int(rows), int(o.dims[1]))

    return ResolvedInstruction(i.op, res(i.dst) if i.dst else None, tuple(res(s) for s in i.srcs), i.imm, i.mem)
