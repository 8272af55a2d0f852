"""Normalization of raw clauses into single-clause predicates.

Each predicate becomes one clause whose head arguments are distinct
variables; explicit unifications are introduced for constants and
repeated variables, clause-local variables are renamed apart, and
multi-clause predicates are turned into if-then-else chains when a
mutually exclusive prefix is syntactically provable (pairwise-distinct
first-argument constants, an explicit cut, or a ``mutually_exclusive``
assertion).  Everything else is kept as a raw disjunction and rejected
later by ``check_admissible``.
"""

from __future__ import annotations

from ..diagnostics import Diagnostic, error
from ..terms import Atom, Int, Struct, Term, Var, is_const
from .syntax import (
    AssignMut,
    Call,
    Clause,
    Conj,
    Cut,
    Disj,
    Fail,
    IfThenElse,
    InitMut,
    InsAlias,
    InsEntry,
    InsOpcode,
    NormPred,
    NormProgram,
    PredAssertion,
    ReadMut,
    RegType,
    True_,
    Unify,
    leaf_goals,
    rename_goal,
)

# Types available without declaration; empty case list means "not enumerable".
NATIVE_REGTYPES = {
    "int": RegType("int", "int64", []),
    "tagged": RegType("tagged", "uint64", []),
}

# Builtins whose constant arguments are symbolic names, kept literal.
SYMBOLIC_CONST_CALLS = {"tagof"}


class _Names:
    """Fresh-variable supply that avoids clashes with existing names."""

    def __init__(self, used):
        self.used = set(used)
        self.n = 0

    def fresh(self, base: str = "T") -> str:
        while True:
            self.n += 1
            cand = f"{base}{self.n}"
            if cand not in self.used:
                self.used.add(cand)
                return cand


def _clause_vars(t, acc):
    if isinstance(t, Var):
        acc.add(t.name)
    elif isinstance(t, Struct):
        for a in t.args:
            _clause_vars(a, acc)


# ---------------------------------------------------------------------------
# Body conversion: operator term tree -> goal tree


class _BodyBuilder:
    def __init__(self, names: _Names, pos):
        self.names = names
        self.pos = pos

    def convert(self, t: Term):
        """Convert a body term to a goal."""
        if t is None:
            return True_(pos=self.pos)
        if isinstance(t, Struct) and t.name == "," and t.arity == 2:
            return _conj([self.convert(t.args[0]), self.convert(t.args[1])])
        if isinstance(t, Struct) and t.name == ";" and t.arity == 2:
            return self.convert_disj(t)
        if isinstance(t, Struct) and t.name == "->" and t.arity == 2:
            # a -> b with no else: fail when the condition fails
            return IfThenElse(self.convert(t.args[0]), self.convert(t.args[1]),
                              Fail(pos=self.pos), pos=self.pos)
        return self.convert_simple(t)

    def convert_disj(self, t: Struct):
        branches = []
        cur: Term = t
        while isinstance(cur, Struct) and cur.name == ";" and cur.arity == 2:
            branches.append(cur.args[0])
            cur = cur.args[1]
        branches.append(cur)
        if any(isinstance(b, Struct) and b.name == "->" for b in branches[:-1]):
            # (c1 -> t1 ; c2 -> t2 ; e)
            out = self.convert(branches[-1])
            if isinstance(branches[-1], Struct) and branches[-1].name == "->":
                b = branches[-1]
                out = IfThenElse(self.convert(b.args[0]), self.convert(b.args[1]),
                                 Fail(pos=self.pos), pos=self.pos)
            for b in reversed(branches[:-1]):
                if not (isinstance(b, Struct) and b.name == "->"):
                    raise error(self.pos, "ite-shape",
                                "mixing plain disjuncts with if-then-else arms")
                out = IfThenElse(self.convert(b.args[0]), self.convert(b.args[1]),
                                 out, pos=self.pos)
            return out
        # red cuts inside a disjunction: (g1, !, g2 ; rest) == (g1 -> g2 ; rest)
        converted = [self.convert(b) for b in branches]
        if any(_contains_cut(c) for c in converted):
            out = None
            for c in reversed(converted):
                guard, rest = _split_at_cut(c)
                if guard is None:
                    if out is None:
                        out = c
                    else:
                        raise error(self.pos, "red-cut",
                                    "cut missing in a non-final disjunct")
                else:
                    nxt = out if out is not None else Fail(pos=self.pos)
                    out = IfThenElse(guard, rest, nxt, pos=self.pos)
            return out
        return Disj(converted, pos=self.pos)

    def convert_simple(self, t: Term):
        pre: list = []
        if isinstance(t, Atom):
            if t.name == "true":
                return True_(pos=self.pos)
            if t.name == "fail":
                return Fail(pos=self.pos)
            if t.name == "!":
                return Cut(pos=self.pos)
            return Call(t.name, [], pos=self.pos)
        if not isinstance(t, Struct):
            raise error(self.pos, "syntax", f"not a goal: {t!r}")
        if t.name == "=" and t.arity == 2:
            return self.convert_unify(t.args[0], t.args[1])
        if t.name == "<=" and t.arity == 2:
            m = self.reduce_to_var(t.args[0], pre)
            v = self.reduce_arg(t.args[1], pre)
            return _conj(pre + [AssignMut(m, v, pos=self.pos)])
        # plain call: arguments must reduce to variables or constants;
        # constants become explicit unifications with fresh temporaries,
        # except for builtins taking a symbolic constant (tag names)
        args = []
        for a in t.args:
            v = self.reduce_arg(a, pre)
            if is_const(v) and t.name not in SYMBOLIC_CONST_CALLS:
                tmp = Var(self.names.fresh())
                pre.append(Unify(tmp, v, pos=self.pos))
                v = tmp
            args.append(v)
        return _conj(pre + [Call(t.name, args, pos=self.pos)])

    def convert_unify(self, lhs: Term, rhs: Term):
        pre: list = []
        # X = initmut(type, V)
        if isinstance(rhs, Struct) and rhs.name == "initmut" and rhs.arity == 2:
            m = self.reduce_to_var(lhs, pre)
            tname = rhs.args[0]
            if not isinstance(tname, Atom):
                raise error(self.pos, "syntax", "initmut type must be an atom")
            v = self.reduce_arg(rhs.args[1], pre)
            return _conj(pre + [InitMut(m, tname.name, v, pos=self.pos)])
        if isinstance(lhs, Struct) and lhs.name == "initmut" and lhs.arity == 2:
            return self.convert_unify(rhs, lhs)
        # X = M@ with a variable on one side is a single read goal
        for x, r in ((lhs, rhs), (rhs, lhs)):
            if (isinstance(x, Var) and isinstance(r, Struct)
                    and r.name == "@" and r.arity == 1):
                m = self.reduce_to_var(r.args[0], pre)
                return _conj(pre + [ReadMut(x, m, pos=self.pos)])
        a = self.reduce_arg(lhs, pre)
        b = self.reduce_arg(rhs, pre)
        if isinstance(a, Var):
            return _conj(pre + [Unify(a, b, pos=self.pos)])
        if isinstance(b, Var):
            return _conj(pre + [Unify(b, a, pos=self.pos)])
        # constant = constant folds statically
        tail = True_(pos=self.pos) if a == b else Fail(pos=self.pos)
        return _conj(pre + [tail])

    def reduce_arg(self, t: Term, pre: list) -> Term:
        """Reduce a term to a variable or constant, emitting helper goals."""
        if isinstance(t, (Var, Atom, Int)):
            return t
        if isinstance(t, Struct) and t.name == "@" and t.arity == 1:
            m = self.reduce_to_var(t.args[0], pre)
            x = Var(self.names.fresh())
            pre.append(ReadMut(x, m, pos=self.pos))
            return x
        if isinstance(t, Struct) and t.name == "~" and t.arity == 1:
            call = t.args[0]
            args = []
            for a in call.args:
                v = self.reduce_arg(a, pre)
                if is_const(v):
                    tmp = Var(self.names.fresh())
                    pre.append(Unify(tmp, v, pos=self.pos))
                    v = tmp
                args.append(v)
            out = Var(self.names.fresh())
            pre.append(Call(call.name, args + [out], pos=self.pos))
            return out
        raise error(self.pos, "struct-arg",
                    "structure arguments are builtin-only; "
                    f"cannot pass {t!r} directly")

    def reduce_to_var(self, t: Term, pre: list) -> Var:
        v = self.reduce_arg(t, pre)
        if not isinstance(v, Var):
            raise error(self.pos, "syntax", f"expected a variable, found {v!r}")
        return v


def _conj(goals: list):
    flat = []
    for g in goals:
        if isinstance(g, Conj):
            flat.extend(g.goals)
        elif isinstance(g, True_) and len(goals) > 1:
            continue
        else:
            flat.append(g)
    if not flat:
        return True_()
    if len(flat) == 1:
        return flat[0]
    return Conj(flat)


def _contains_cut(g) -> bool:
    return any(isinstance(x, Cut) for x in leaf_goals(g))


def _split_at_cut(g):
    """Split a conjunction at its first cut -> (guard, rest) or (None, g)."""
    goals = g.goals if isinstance(g, Conj) else [g]
    for i, x in enumerate(goals):
        if isinstance(x, Cut):
            return _conj(goals[:i]), _conj(goals[i + 1:])
    return None, g


# ---------------------------------------------------------------------------
# normalize / denormalize


def normalize(decls: list, clauses: list) -> NormProgram:
    """Build a NormProgram from parsed declarations and clauses."""
    regtypes = dict(NATIVE_REGTYPES)
    assertions: dict = {}
    aliases, entries, opcodes = [], [], {}
    for d in decls:
        if isinstance(d, RegType):
            regtypes[d.name] = d
        elif isinstance(d, PredAssertion):
            assertions[(d.name, d.arity)] = d
        elif isinstance(d, InsAlias):
            aliases.append(d)
        elif isinstance(d, InsEntry):
            entries.append(d)
        elif isinstance(d, InsOpcode):
            opcodes[d.name] = d.opcode

    groups: dict = {}
    for c in clauses:
        groups.setdefault((c.name, c.arity), []).append(c)

    preds = {}
    for key, group in groups.items():
        preds[key] = _normalize_group(key, group, assertions.get(key))
    return NormProgram(preds, regtypes, assertions, aliases, entries, opcodes)


def _normalize_group(key, group: list, assertion) -> NormPred:
    name, arity = key
    pos = group[0].pos

    if len(group) == 1:
        clause = group[0]
        used: set = set()
        _clause_vars(clause.head, used)
        if clause.body is not None:
            _clause_vars(clause.body, used)
        names = _Names(used)
        headvars, pre = _flatten_head(clause.head, names, pos)
        bb = _BodyBuilder(names, clause.pos)
        body = _conj(pre + [bb.convert(clause.body)])
        body = _strip_cuts_single(body)
        return NormPred(name, arity, headvars, body, pos, assertion)

    # multi-clause: rename apart, then build a guarded if-then-else chain
    used: set = set()
    renamed = []
    for i, c in enumerate(group, 1):
        cvars: set = set()
        _clause_vars(c.head, cvars)
        if c.body is not None:
            _clause_vars(c.body, cvars)
        sub = {v: f"{v}_c{i}" for v in cvars}
        renamed.append((c, sub))
        used.update(sub.values())
    names = _Names(used)
    headvars = [names.fresh("A") for _ in range(arity)]

    entries = []  # (guard_goal_or_None, rest_goal, guard_const_for_elision)
    firstargs = [c.head.args[0] if arity > 0 else None for c in group]
    by_first_const = (arity > 0
                      and all(is_const(a) for a in firstargs)
                      and len(set(firstargs)) == len(firstargs))
    exclusive_marked = assertion is not None and "mutually_exclusive" in assertion.flags

    for (c, sub) in renamed:
        bb = _BodyBuilder(names, c.pos)
        pre: list = []
        seen: dict = {}
        guard = None
        guard_const = None
        for i, a in enumerate(c.head.args if arity else []):
            hv = Var(headvars[i])
            if isinstance(a, Var):
                an = sub[a.name]
                if an in seen:
                    pre.append(Unify(hv, Var(an), pos=c.pos))
                else:
                    seen[an] = True
                    pre.append(Unify(Var(an), hv, pos=c.pos))
            elif is_const(a):
                u = Unify(hv, a, pos=c.pos)
                if i == 0 and by_first_const:
                    guard = u
                    guard_const = a
                else:
                    pre.append(u)
            else:
                raise error(c.pos, "struct-arg",
                            "structure arguments in heads are builtin-only")
        body = rename_goal(bb.convert(c.body), sub)
        if guard is None and _contains_cut(body):
            guard, body = _split_at_cut(_as_conj(body))
        elif guard is None and exclusive_marked:
            gs = body.goals if isinstance(body, Conj) else [body]
            guard, body = gs[0], _conj(gs[1:])
        else:
            body = _strip_cuts_single(body)
        entries.append((guard, _conj(pre + [body]), guard_const))

    # Build the guarded chain back to front.  The final alternative keeps
    # its guard (exhaustiveness elision happens during analysis once types
    # are known); a guard may only be missing on the last alternative.
    chain = None
    convertible = True
    for idx in range(len(entries) - 1, -1, -1):
        guard, rest, _gc = entries[idx]
        if guard is None:
            if idx == len(entries) - 1:
                chain = rest
            else:
                convertible = False
                break
        else:
            nxt = chain if chain is not None else Fail(pos=pos)
            chain = IfThenElse(guard, rest, nxt, pos=pos)
    if not convertible:
        chain = Disj([_conj([g, r]) if g is not None else r
                      for (g, r, _gc) in entries], pos=pos)
    return NormPred(name, arity, headvars, chain, pos, assertion)


def _as_conj(g):
    return g if isinstance(g, Conj) else Conj([g])


def _strip_cuts_single(g):
    """Cuts in a single-clause body are no-ops after normalization."""
    from .syntax import map_goals

    def leaf(x):
        return True_(pos=x.pos) if isinstance(x, Cut) else x

    return map_goals(g, leaf)


def _flatten_head(head: Term, names: _Names, pos):
    headvars, pre, seen = [], [], set()
    args = head.args if isinstance(head, Struct) else ()
    for a in args:
        if isinstance(a, Var) and a.name not in seen:
            seen.add(a.name)
            headvars.append(a.name)
        elif isinstance(a, Var):
            hv = names.fresh("A")
            headvars.append(hv)
            pre.append(Unify(Var(hv), a, pos=pos))
        elif is_const(a):
            hv = names.fresh("A")
            headvars.append(hv)
            pre.append(Unify(Var(hv), a, pos=pos))
        else:
            raise error(pos, "struct-arg",
                        "structure arguments in heads are builtin-only")
    return headvars, pre


# ---------------------------------------------------------------------------
# denormalize (for the idempotence property)


def denormalize(prog: NormProgram):
    """Render a NormProgram back to declarations and raw clauses."""
    decls = [rt for n, rt in prog.regtypes.items() if n not in NATIVE_REGTYPES]
    decls += list(prog.assertions.values())
    decls += prog.aliases + prog.entries
    decls += [InsOpcode(n, o) for n, o in prog.opcodes.items()]
    clauses = []
    for pred in prog.predicates.values():
        head = (Struct(pred.name, tuple(Var(v) for v in pred.headvars))
                if pred.arity else Atom(pred.name))
        clauses.append(Clause(head, _goal_to_term(pred.body), pred.pos))
    return decls, clauses


def _goal_to_term(g) -> Term:
    if isinstance(g, Conj):
        parts = [_goal_to_term(x) for x in g.goals]
        out = parts[-1]
        for p in reversed(parts[:-1]):
            out = Struct(",", (p, out))
        return out
    if isinstance(g, IfThenElse):
        ite = Struct("->", (_goal_to_term(g.cond), _goal_to_term(g.then)))
        return Struct(";", (ite, _goal_to_term(g.els)))
    if isinstance(g, Disj):
        parts = [_goal_to_term(x) for x in g.branches]
        out = parts[-1]
        for p in reversed(parts[:-1]):
            out = Struct(";", (p, out))
        return out
    if isinstance(g, Unify):
        return Struct("=", (g.a, g.b))
    if isinstance(g, ReadMut):
        return Struct("=", (g.x, Struct("@", (g.m,))))
    if isinstance(g, AssignMut):
        return Struct("<=", (g.m, g.v))
    if isinstance(g, InitMut):
        return Struct("=", (g.m, Struct("initmut", (Atom(g.type), g.v))))
    if isinstance(g, Call):
        return Struct(g.name, tuple(g.args)) if g.args else Atom(g.name)
    if isinstance(g, True_):
        return Atom("true")
    if isinstance(g, Fail):
        return Atom("fail")
    raise TypeError(f"cannot denormalize {g!r}")


# ---------------------------------------------------------------------------
# Admissibility


def check_admissible(prog: NormProgram, facts=None) -> list[Diagnostic]:
    """Check the normalized (and ideally annotated) program.

    Returns one diagnostic per violation: unconverted disjunctions,
    stray cuts, and uncovered reference-mode cases when analysis facts
    are available.
    """
    diags: list[Diagnostic] = []
    for pred in prog.predicates.values():
        for g in leaf_goals(pred.body):
            if isinstance(g, Cut):
                diags.append(Diagnostic(g.pos, "red-cut",
                                        f"cut outside an exclusive prefix in "
                                        f"{pred.name}/{pred.arity}"))
        diags.extend(_scan_disj(pred, pred.body))
    if facts is not None:
        diags.extend(getattr(facts, "refmode_errors", []))
        diags.extend(getattr(facts, "diagnostics", []))
    return diags


def _scan_disj(pred, g):
    out = []
    if isinstance(g, Conj):
        for x in g.goals:
            out += _scan_disj(pred, x)
    elif isinstance(g, IfThenElse):
        out += _scan_disj(pred, g.cond)
        out += _scan_disj(pred, g.then)
        out += _scan_disj(pred, g.els)
    elif isinstance(g, Disj):
        out.append(Diagnostic(g.pos, "disj-not-convertible",
                              f"disjunction in {pred.name}/{pred.arity} is not "
                              "convertible to if-then-else"))
        for x in g.branches:
            out += _scan_disj(pred, x)
    return out
