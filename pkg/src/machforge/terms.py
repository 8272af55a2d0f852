"""First-order terms shared by the dialect front end, the mini-Prolog
front end, and the reference interpreters.

Lists use the conventional ``'.'/2`` functor with ``[]`` as nil.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Union


@dataclass(frozen=True)
class Var:
    name: str

    def __repr__(self):
        return self.name


@dataclass(frozen=True)
class Atom:
    name: str

    def __repr__(self):
        return self.name


@dataclass(frozen=True)
class Int:
    value: int

    def __repr__(self):
        return str(self.value)


@dataclass(frozen=True)
class Struct:
    name: str
    args: tuple

    def __repr__(self):
        return render(self)

    @property
    def arity(self) -> int:
        return len(self.args)


Term = Union[Var, Atom, Int, Struct]

NIL = Atom("[]")
CONS = "."


def mklist(items: Iterable[Term], tail: Term = NIL) -> Term:
    out = tail
    for x in reversed(list(items)):
        out = Struct(CONS, (x, out))
    return out


def is_const(t: Term) -> bool:
    return isinstance(t, (Atom, Int))


def term_vars(t: Term, acc: list | None = None) -> list:
    """Variables of ``t`` in first-occurrence order."""
    if acc is None:
        acc = []
    if isinstance(t, Var):
        if t not in acc:
            acc.append(t)
    elif isinstance(t, Struct):
        for a in t.args:
            term_vars(a, acc)
    return acc


def render(t: Term) -> str:
    """Canonical textual form; the emulator runtimes print the same bytes."""
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Atom):
        return t.name
    if isinstance(t, Int):
        return str(t.value)
    if isinstance(t, Struct):
        if t.name == CONS and t.arity == 2:
            parts = []
            cur: Term = t
            while isinstance(cur, Struct) and cur.name == CONS and cur.arity == 2:
                parts.append(render(cur.args[0]))
                cur = cur.args[1]
            if cur == NIL:
                return "[" + ",".join(parts) + "]"
            return "[" + ",".join(parts) + "|" + render(cur) + "]"
        return t.name + "(" + ",".join(render(a) for a in t.args) + ")"
    raise TypeError(f"not a term: {t!r}")
