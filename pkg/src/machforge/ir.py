"""Basic-block IR.

Programs compile to a graph of blocks, each a statement list plus exactly
one terminator.  Variable access goes through access expressions whose
indirection depth is fixed by the variable's reference mode:

            0v      1v      0m      1m      2m
  ref       &x      x       -       &x      x
  val_l     x       *x      -       x       *x
  val_r     x       *x      &x      x       *x
  mutval                    x       *x      **x

The same IR drives the in-process evaluator and the C emitter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .diagnostics import InternalError

# ---------------------------------------------------------------------------
# Expressions


@dataclass(frozen=True)
class ELit:
    value: int


@dataclass(frozen=True)
class EAccess:
    """Variable access mediated by refmode (see table above).

    kind: 'ref' | 'val_r' | 'mutval_r'
    """

    var: str
    refmode: str
    kind: str


@dataclass(frozen=True)
class EOperand:
    """Value of the k-th operand word of the current instruction
    (word offset from the opcode)."""

    offset: int


@dataclass(frozen=True)
class EPrim:
    """Runtime primitive yielding a value (pure or effect-free here)."""

    name: str
    args: tuple = ()


@dataclass(frozen=True)
class EBin:
    op: str                     # '==' '!=' '+' '-' '<'
    a: "Expr"
    b: "Expr"


@dataclass(frozen=True)
class EMem:
    """mem[addr]"""

    addr: "Expr"


Expr = Union[ELit, EAccess, EOperand, EPrim, EBin, EMem]


# ---------------------------------------------------------------------------
# Places (assignment targets)


@dataclass(frozen=True)
class PAccess:
    """kind: 'val_l' | 'mutval_l'"""

    var: str
    refmode: str
    kind: str


@dataclass(frozen=True)
class PMem:
    addr: Expr


Place = Union[PAccess, PMem]


# ---------------------------------------------------------------------------
# Access-rule table (refmode -> kind -> valid)

ACCESS_TABLE = {
    "0v": {"ref", "val_l", "val_r"},
    "1v": {"ref", "val_l", "val_r"},
    "0m": {"val_r", "mutval_l", "mutval_r"},
    "1m": {"ref", "val_l", "val_r", "mutval_l", "mutval_r"},
    "2m": {"ref", "val_l", "val_r", "mutval_l", "mutval_r"},
}


def check_access(refmode: str, kind: str, var: str) -> None:
    if kind not in ACCESS_TABLE.get(refmode, ()):
        raise InternalError(
            f"undefined access {kind} for refmode {refmode} (variable {var})")


def access_depth(refmode: str, kind: str) -> int:
    """Indirection depth of the C lowering (for conformance checks)."""
    shapes = {
        ("0v", "ref"): 0, ("0v", "val_l"): 0, ("0v", "val_r"): 0,
        ("1v", "ref"): 0, ("1v", "val_l"): 1, ("1v", "val_r"): 1,
        ("0m", "val_r"): 0, ("0m", "mutval_l"): 0, ("0m", "mutval_r"): 0,
        ("1m", "ref"): 0, ("1m", "val_l"): 0, ("1m", "val_r"): 0,
        ("1m", "mutval_l"): 1, ("1m", "mutval_r"): 1,
        ("2m", "ref"): 0, ("2m", "val_l"): 1, ("2m", "val_r"): 1,
        ("2m", "mutval_l"): 2, ("2m", "mutval_r"): 2,
    }
    return shapes[(refmode, kind)]


# ---------------------------------------------------------------------------
# Statements


@dataclass
class SAssign:
    place: Place
    expr: Expr


@dataclass
class SCall:
    """Call a compiled predicate.

    ``ok`` names a boolean local receiving the result for semidet callees.
    ``outs`` are the places receiving the callee's out-arguments.
    """

    name: str
    ins: list
    outs: list
    ok: Optional[str] = None


@dataclass
class SPrim:
    """Runtime primitive as a statement; outs receive result values."""

    name: str
    args: list = field(default_factory=list)
    outs: list = field(default_factory=list)


Stmt = Union[SAssign, SCall, SPrim]


# ---------------------------------------------------------------------------
# Terminators


@dataclass
class TJump:
    dst: int


@dataclass
class TBranch:
    cond: Expr
    t: int
    f: int


@dataclass
class TSwitch:
    expr: Expr
    cases: list                  # [(int value, block id)]
    default: Optional[int] = None


@dataclass
class TRetVoid:
    pass


@dataclass
class TRetBool:
    value: bool


@dataclass
class TStop:
    """Terminate an emulator run ('halt', 'fail', 'illegal')."""

    status: str


Term = Union[TJump, TBranch, TSwitch, TRetVoid, TRetBool, TStop]


# ---------------------------------------------------------------------------
# Blocks / functions


@dataclass
class Block:
    stmts: list = field(default_factory=list)
    term: Optional[Term] = None


class BlockGraph:
    """Mutable block store; ids are dense ints in allocation order."""

    def __init__(self):
        self.blocks: list[Block] = []

    def new(self) -> int:
        self.blocks.append(Block())
        return len(self.blocks) - 1

    def newn(self, n: int) -> list[int]:
        return [self.new() for _ in range(n)]

    def emit(self, stmt: Stmt, delta: int) -> None:
        b = self.blocks[delta]
        if b.term is not None:
            raise InternalError("statement after terminator")
        b.stmts.append(stmt)

    def seal(self, delta: int, term: Term) -> None:
        b = self.blocks[delta]
        if b.term is not None:
            raise InternalError(f"block {delta} already sealed")
        b.term = term

    def sealed(self, delta: int) -> bool:
        return self.blocks[delta].term is not None

    def __getitem__(self, i: int) -> Block:
        return self.blocks[i]

    def __len__(self):
        return len(self.blocks)

    def successors(self, i: int):
        t = self.blocks[i].term
        if isinstance(t, TJump):
            return [t.dst]
        if isinstance(t, TBranch):
            return [t.t, t.f]
        if isinstance(t, TSwitch):
            out = [d for _, d in t.cases]
            if t.default is not None:
                out.append(t.default)
            return out
        return []

    def check(self) -> None:
        """Every block has exactly one terminator; all targets exist."""
        for i, b in enumerate(self.blocks):
            if b.term is None:
                raise InternalError(f"block {i} lacks a terminator")
            for s in self.successors(i):
                if not (0 <= s < len(self.blocks)):
                    raise InternalError(f"block {i} jumps to missing block {s}")


@dataclass
class IRFunc:
    """A compiled predicate (or the emulator loop).

    params: [(name, refmode, typename)];  out-params carry mode 'out'.
    """

    name: str
    params: list
    outs: list                   # names of out-params, in order
    detclass: str                # 'det' | 'semidet' | 'emu'
    graph: BlockGraph
    entry: int
    locals: dict = field(default_factory=dict)   # name -> (refmode, typename)


@dataclass
class CompilationUnit:
    funcs: dict = field(default_factory=dict)    # name -> IRFunc
    order: list = field(default_factory=list)

    def add(self, fn: IRFunc):
        if fn.name in self.funcs:
            raise InternalError(f"duplicate function {fn.name}")
        self.funcs[fn.name] = fn
        self.order.append(fn.name)
