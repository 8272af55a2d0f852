"""Dialect source representation: declarations, raw clauses, and the
normalized single-clause form consumed by analysis and code generation.

Normalized bodies are conjunctions of annotated goals and if-then-elses;
goal arguments are variables only, and unifications are restricted to
variable-variable and variable-constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from ..diagnostics import NOPOS, Pos
from ..terms import Term, Var

# ---------------------------------------------------------------------------
# Declarations


@dataclass
class RegType:
    """An enumerated value type with a declared low-level encoding.

    Cases are encoded as 0..n-1 in declaration order; e.g. for
    ``flag := off | on`` the atom ``off`` is 0 and ``on`` is 1.
    """

    name: str
    encoding: str
    cases: list[str] = field(default_factory=list)
    pos: Pos = NOPOS


@dataclass
class PredAssertion:
    """Modes/types/flags for a predicate.

    ``argmodes[i]`` is '+' (ground at call) or '-' (fresh at call, ground
    at success).  ``argtypes[i]`` is a type name or ``("mut", name)``.
    Flags: det, semidet, unfold, mutually_exclusive.
    """

    name: str
    arity: int
    argmodes: Optional[list[str]] = None
    argtypes: Optional[list] = None
    flags: set = field(default_factory=set)
    pos: Pos = NOPOS


@dataclass
class InsAlias:
    """Bind an instruction name to a base predicate with operand kinds."""

    name: str
    base: str
    argkinds: list[str] = field(default_factory=list)
    pos: Pos = NOPOS


@dataclass
class InsEntry:
    """Declare an emulator entry for an instruction or a merge sequence.

    ``unfold`` is None (plain entry), 'all', or a 1-based component index
    selecting which component gets inlined when unfolding rules are honored.
    """

    seq: list[str] = field(default_factory=list)
    unfold: Union[int, str, None] = None
    pos: Pos = NOPOS


@dataclass
class InsOpcode:
    """Optional pre-assignment of an opcode number to an entry."""

    name: str
    opcode: int
    pos: Pos = NOPOS


Decl = Union[RegType, PredAssertion, InsAlias, InsEntry, InsOpcode]


# ---------------------------------------------------------------------------
# Raw clauses (parser output, before normalization)


@dataclass
class Clause:
    head: Term                 # Atom or Struct
    body: Optional[Term]       # operator tree over ','/2, ';'/2, '->'/2, ... or None for facts
    pos: Pos = NOPOS

    @property
    def name(self) -> str:
        return self.head.name

    @property
    def arity(self) -> int:
        return self.head.arity if hasattr(self.head, "arity") else 0


# ---------------------------------------------------------------------------
# Normalized goals.  Every goal carries an annotation slot (the abstract
# substitution holding *before* the goal); empty until analysis runs.


@dataclass
class VarFact:
    """Facts about one variable at one program point."""

    fresh: bool = False
    ground: bool = False
    type: object = None        # type name, ("mut", t), or None
    const: object = None       # known constant Term, or None
    mut: object = None         # ("new", k) | ("any", t) | None

    def copy(self) -> "VarFact":
        return VarFact(self.fresh, self.ground, self.type, self.const, self.mut)


class AbsSubst(dict):
    """Per-variable facts at a program point (maps var name -> VarFact).

    ``mutvals`` carries value facts for abstractly-identified mutables
    created locally (key: creation index, value: known constant or None).
    """

    def __init__(self, *args, mutvals=None, **kw):
        super().__init__(*args, **kw)
        self.mutvals: dict = dict(mutvals) if mutvals else {}

    def fact(self, name: str) -> VarFact:
        if name not in self:
            # a variable first seen mid-body is a fresh local
            self[name] = VarFact(fresh=True)
        return self[name]

    def copy(self) -> "AbsSubst":
        out = AbsSubst({k: v.copy() for k, v in self.items()})
        out.mutvals = dict(self.mutvals)
        return out

    def is_fresh(self, name: str) -> bool:
        return self[name].fresh if name in self else True

    def is_ground(self, name: str) -> bool:
        return name in self and self[name].ground

    def type_of(self, name: str):
        return self[name].type if name in self else None


@dataclass
class Unify:
    a: Var
    b: Term                    # Var, Atom or Int
    ann: Optional[AbsSubst] = None
    pos: Pos = NOPOS


@dataclass
class ReadMut:
    x: Var                     # x = m@
    m: Var
    ann: Optional[AbsSubst] = None
    pos: Pos = NOPOS


@dataclass
class AssignMut:
    m: Var                     # m <= v
    v: Term                    # Var, Atom or Int
    ann: Optional[AbsSubst] = None
    pos: Pos = NOPOS


@dataclass
class InitMut:
    m: Var                     # m = initmut(type, v)
    type: str
    v: Term
    ann: Optional[AbsSubst] = None
    pos: Pos = NOPOS


@dataclass
class Call:
    name: str
    args: list                 # variables only after normalization
    ann: Optional[AbsSubst] = None
    pos: Pos = NOPOS

    @property
    def arity(self) -> int:
        return len(self.args)

    @property
    def key(self):
        return (self.name, len(self.args))


@dataclass
class True_:
    ann: Optional[AbsSubst] = None
    pos: Pos = NOPOS


@dataclass
class Fail:
    ann: Optional[AbsSubst] = None
    pos: Pos = NOPOS


@dataclass
class Cut:
    """Transient: only appears between parsing and normalization."""

    ann: Optional[AbsSubst] = None
    pos: Pos = NOPOS


@dataclass
class Conj:
    goals: list
    ann: Optional[AbsSubst] = None
    pos: Pos = NOPOS


@dataclass
class IfThenElse:
    cond: object
    then: object
    els: object
    ann: Optional[AbsSubst] = None
    pos: Pos = NOPOS
    # True when the else arm's guard was dropped because the tested guards
    # exhaust the scrutinee's type cases.
    exhaustive: bool = False


@dataclass
class Disj:
    """A disjunction not (yet) proved convertible to if-then-else."""

    branches: list
    ann: Optional[AbsSubst] = None
    pos: Pos = NOPOS


Goal = Union[Unify, ReadMut, AssignMut, InitMut, Call, True_, Fail, Cut,
             Conj, IfThenElse, Disj]


@dataclass
class NormPred:
    """A normalized predicate: one clause, head arguments are variables."""

    name: str
    arity: int
    headvars: list[str]
    body: Goal
    pos: Pos = NOPOS
    assertion: Optional[PredAssertion] = None
    # filled by analysis:
    detclass: Optional[str] = None          # "det" | "semidet"
    entry_ann: Optional[AbsSubst] = None
    exit_ann: Optional[AbsSubst] = None

    @property
    def key(self):
        return (self.name, self.arity)


@dataclass
class NormProgram:
    predicates: dict            # (name, arity) -> NormPred
    regtypes: dict              # name -> RegType
    assertions: dict            # (name, arity) -> PredAssertion
    aliases: list = field(default_factory=list)    # [InsAlias]
    entries: list = field(default_factory=list)    # [InsEntry]
    opcodes: dict = field(default_factory=dict)    # name -> int

    def pred(self, name: str, arity: int) -> NormPred:
        return self.predicates[(name, arity)]


# ---------------------------------------------------------------------------
# Traversal helpers


def goal_vars(g: Goal, acc: list | None = None) -> list:
    """Variable names occurring in a goal, first-occurrence order."""
    if acc is None:
        acc = []

    def add(t):
        if isinstance(t, Var) and t.name not in acc:
            acc.append(t.name)

    if isinstance(g, Unify):
        add(g.a), add(g.b)
    elif isinstance(g, ReadMut):
        add(g.x), add(g.m)
    elif isinstance(g, AssignMut):
        add(g.m), add(g.v)
    elif isinstance(g, InitMut):
        add(g.m), add(g.v)
    elif isinstance(g, Call):
        for a in g.args:
            add(a)
    elif isinstance(g, Conj):
        for x in g.goals:
            goal_vars(x, acc)
    elif isinstance(g, IfThenElse):
        goal_vars(g.cond, acc), goal_vars(g.then, acc), goal_vars(g.els, acc)
    elif isinstance(g, Disj):
        for x in g.branches:
            goal_vars(x, acc)
    return acc


def map_goals(g: Goal, fn):
    """Rebuild a goal tree, applying ``fn`` to every leaf goal."""
    if isinstance(g, Conj):
        return Conj([map_goals(x, fn) for x in g.goals], g.ann, g.pos)
    if isinstance(g, IfThenElse):
        return IfThenElse(map_goals(g.cond, fn), map_goals(g.then, fn),
                          map_goals(g.els, fn), g.ann, g.pos, g.exhaustive)
    if isinstance(g, Disj):
        return Disj([map_goals(x, fn) for x in g.branches], g.ann, g.pos)
    return fn(g)


def leaf_goals(g: Goal):
    """Iterate leaf goals (no control structure) in source order."""
    if isinstance(g, Conj):
        for x in g.goals:
            yield from leaf_goals(x)
    elif isinstance(g, IfThenElse):
        yield from leaf_goals(g.cond)
        yield from leaf_goals(g.then)
        yield from leaf_goals(g.els)
    elif isinstance(g, Disj):
        for x in g.branches:
            yield from leaf_goals(x)
    else:
        yield g


def rename_goal(g: Goal, sub: dict):
    """Rename variables in a goal tree (sub maps name -> name)."""

    def rv(t):
        if isinstance(t, Var):
            return Var(sub.get(t.name, t.name))
        return t

    def leaf(x):
        if isinstance(x, Unify):
            return Unify(rv(x.a), rv(x.b), x.ann, x.pos)
        if isinstance(x, ReadMut):
            return ReadMut(rv(x.x), rv(x.m), x.ann, x.pos)
        if isinstance(x, AssignMut):
            return AssignMut(rv(x.m), rv(x.v), x.ann, x.pos)
        if isinstance(x, InitMut):
            return InitMut(rv(x.m), x.type, rv(x.v), x.ann, x.pos)
        if isinstance(x, Call):
            return Call(x.name, [rv(a) for a in x.args], x.ann, x.pos)
        return x

    return map_goals(g, leaf)
