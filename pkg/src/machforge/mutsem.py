"""Reference interpreter for the dialect with a typed mutable store.

This is the semantic oracle for the rest of the pipeline.  The store is
persistent (copy-on-write), so each disjunct of a disjunction is judged
from the same input store and branch isolation holds by construction;
conjunctions thread the store left to right.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Optional

from .diagnostics import InternalError
from .dialect.syntax import (
    AssignMut,
    Call,
    Conj,
    Cut,
    Disj,
    Fail,
    IfThenElse,
    InitMut,
    NormProgram,
    ReadMut,
    True_,
    Unify,
)
from .terms import Atom, Int, Struct, Var


@dataclass(frozen=True)
class MutId:
    """A mutable identifier: unique, equal only to itself."""

    index: int
    type: str

    def __repr__(self):
        return f"<mut:{self.type}:{self.index}>"


class TypeError_(Exception):
    """A value does not satisfy a slot's declared type."""


class MutStore:
    """Persistent map id -> (type, value)."""

    __slots__ = ("slots",)

    def __init__(self, slots: Optional[dict] = None):
        self.slots = slots or {}

    def __contains__(self, mid):
        return mid in self.slots

    def __len__(self):
        return len(self.slots)

    def items(self):
        return self.slots.items()


_id_counter = itertools.count(1)


def check_type(regtypes: dict, tau: str, value) -> bool:
    """Does ``value`` satisfy the regtype ``tau``?"""
    if isinstance(tau, tuple) and tau[0] == "mut":
        return isinstance(value, MutId) and value.type == tau[1]
    if tau == "int":
        return isinstance(value, Int)
    if tau == "tagged":
        return isinstance(value, Int)
    rt = regtypes.get(tau)
    if rt is None:
        return False
    if not rt.cases:
        return isinstance(value, Int)
    return isinstance(value, Atom) and value.name in rt.cases


def store_new(store: MutStore, tau: str, value, regtypes: dict):
    """Create a fresh mutable bound to (tau, value); the id is not in the store."""
    if not check_type(regtypes, tau, value):
        raise TypeError_(f"value {value!r} is not of type {tau}")
    mid = MutId(next(_id_counter), tau)
    assert mid not in store
    slots = dict(store.slots)
    slots[mid] = (tau, value)
    return MutStore(slots), mid


def store_read(store: MutStore, mid: MutId):
    if mid not in store:
        raise InternalError(f"unknown mutable {mid!r}")
    return store.slots[mid][1]


def store_assign(store: MutStore, mid: MutId, value, regtypes: dict) -> MutStore:
    if mid not in store:
        raise InternalError(f"unknown mutable {mid!r}")
    tau = store.slots[mid][0]
    if not check_type(regtypes, tau, value):
        raise TypeError_(f"value {value!r} is not of type {tau}")
    slots = dict(store.slots)
    slots[mid] = (tau, value)
    return MutStore(slots)


# ---------------------------------------------------------------------------
# Resolution


def walk(t, bindings: dict):
    while isinstance(t, Var) and t.name in bindings:
        t = bindings[t.name]
    return t


def unify(a, b, bindings: dict):
    """Unify two values; returns new bindings or None.  Mutable ids unify
    only with themselves or with variables."""
    a = walk(a, bindings)
    b = walk(b, bindings)
    if isinstance(a, Var):
        if isinstance(b, Var) and a.name == b.name:
            return bindings
        out = dict(bindings)
        out[a.name] = b
        return out
    if isinstance(b, Var):
        out = dict(bindings)
        out[b.name] = a
        return out
    if isinstance(a, MutId) or isinstance(b, MutId):
        return bindings if a == b else None
    if isinstance(a, (Atom, Int)) and isinstance(b, (Atom, Int)):
        return bindings if a == b else None
    if isinstance(a, Struct) and isinstance(b, Struct):
        if a.name != b.name or a.arity != b.arity:
            return None
        for x, y in zip(a.args, b.args):
            bindings = unify(x, y, bindings)
            if bindings is None:
                return None
        return bindings
    return None


class Interp:
    """Solver for normalized goals over a program.

    ``debug`` re-checks the store typing invariant after every step.
    ``point_hook(goal, bindings, store)`` is called before each annotated
    goal; the analysis soundness tests use it.
    """

    def __init__(self, program: Optional[NormProgram] = None, debug: bool = False,
                 point_hook=None, max_depth: int = 100000):
        self.program = program
        self.regtypes = dict(program.regtypes) if program else {}
        self.debug = debug
        self.point_hook = point_hook
        self.max_depth = max_depth
        self.rename_counter = itertools.count(1)
        self.builtins = {
            ("iadd", 3): lambda a, b: Int(a.value + b.value),
            ("isub", 3): lambda a, b: Int(a.value - b.value),
            ("imul", 3): lambda a, b: Int(a.value * b.value),
        }

    def solve(self, goal, bindings: Optional[dict] = None,
              store: Optional[MutStore] = None, depth: int = 0) -> Iterator:
        """Lazy sequence of (bindings, store) solutions for ``goal``."""
        if bindings is None:
            bindings = {}
        if store is None:
            store = MutStore()
        if depth > self.max_depth:
            raise InternalError("depth limit exceeded in reference interpreter")
        if self.point_hook is not None and getattr(goal, "ann", None) is not None:
            self.point_hook(goal, bindings, store)

        if isinstance(goal, True_):
            yield bindings, store
        elif isinstance(goal, Fail):
            return
        elif isinstance(goal, Conj):
            yield from self._conj(goal.goals, bindings, store, depth)
        elif isinstance(goal, Disj):
            for br in goal.branches:
                yield from self.solve(br, bindings, store, depth)
        elif isinstance(goal, IfThenElse):
            taken = False
            for b1, s1 in self.solve(goal.cond, bindings, store, depth + 1):
                taken = True
                yield from self.solve(goal.then, b1, s1, depth)
                break  # commit to the first solution of the condition
            if not taken:
                yield from self.solve(goal.els, bindings, store, depth)
        elif isinstance(goal, Unify):
            b2 = unify(goal.a, goal.b, bindings)
            if b2 is not None:
                yield b2, store
        elif isinstance(goal, InitMut):
            v = walk(goal.v, bindings)
            store2, mid = store_new(store, goal.type, v, self.regtypes)
            b2 = unify(goal.m, mid, bindings)
            if b2 is not None:
                self._check_store(store2)
                yield b2, store2
        elif isinstance(goal, ReadMut):
            m = walk(goal.m, bindings)
            if not isinstance(m, MutId):
                raise InternalError(f"read through non-mutable {m!r}")
            b2 = unify(goal.x, store_read(store, m), bindings)
            if b2 is not None:
                yield b2, store
        elif isinstance(goal, AssignMut):
            m = walk(goal.m, bindings)
            if not isinstance(m, MutId):
                raise InternalError(f"assignment through non-mutable {m!r}")
            v = walk(goal.v, bindings)
            store2 = store_assign(store, m, v, self.regtypes)
            self._check_store(store2)
            yield bindings, store2
        elif isinstance(goal, Call):
            yield from self._call(goal, bindings, store, depth)
        elif isinstance(goal, Cut):
            raise InternalError("cut reached the reference interpreter")
        else:
            raise InternalError(f"cannot solve {goal!r}")

    def _conj(self, goals, bindings, store, depth):
        if not goals:
            yield bindings, store
            return
        for b1, s1 in self.solve(goals[0], bindings, store, depth + 1):
            yield from self._conj(goals[1:], b1, s1, depth)

    def _call(self, goal: Call, bindings, store, depth):
        key = (goal.name, len(goal.args))
        if key in self.builtins:
            fn = self.builtins[key]
            ins = [walk(a, bindings) for a in goal.args[:-1]]
            if any(isinstance(v, Var) for v in ins):
                raise InternalError(f"builtin {goal.name} called with unbound input")
            b2 = unify(goal.args[-1], fn(*ins), bindings)
            if b2 is not None:
                yield b2, store
            return
        if self.program is None or key not in self.program.predicates:
            raise InternalError(f"call to undefined predicate {key[0]}/{key[1]}")
        pred = self.program.predicates[key]
        n = next(self.rename_counter)
        sub = {}
        from .dialect.syntax import goal_vars, rename_goal
        for v in set(pred.headvars) | set(goal_vars(pred.body)):
            sub[v] = f"{v}@{n}"
        body = rename_goal(pred.body, sub)
        b = bindings
        for formal, actual in zip(pred.headvars, goal.args):
            b = unify(Var(sub[formal]), actual, b)
            if b is None:
                return
        yield from self.solve(body, b, store, depth + 1)

    def _check_store(self, store: MutStore):
        if not self.debug:
            return
        for mid, (tau, val) in store.items():
            if not check_type(self.regtypes, tau, val):
                raise InternalError(
                    f"store typing invariant broken: {mid!r} holds {val!r}")
