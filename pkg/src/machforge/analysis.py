"""Program analysis over normalized programs.

Forward abstract execution computes per-point facts (fresh / ground /
type / known constant / mutable identity), declaration-driven unfolding
substitutes marked predicates, determinism classes are derived, and
reference modes (0v/1v/0m/1m/2m) are inferred for every variable.

The abstract domain is deliberately small: freshness and groundness
flags, regtype membership, known constant values, and a two-level
abstraction of mutable identifiers (a known newly-created mutable, or
any mutable of a given type).  Assignment through an unknown mutable
invalidates value facts only for mutables of the same type.
"""

from __future__ import annotations

import copy
import itertools
from dataclasses import dataclass, field

from .diagnostics import Diagnostic, NOPOS, error
from .terms import Atom, Int, Var, is_const
from .dialect.syntax import (
    AbsSubst,
    AssignMut,
    Call,
    Conj,
    Disj,
    Fail,
    IfThenElse,
    InitMut,
    NormPred,
    NormProgram,
    ReadMut,
    True_,
    Unify,
    VarFact,
    goal_vars,
    leaf_goals,
    rename_goal,
)

# Goals that transfer control out of an instruction body; they neither
# bind anything nor fail.
CONTROL_GOALS = {("next_ins", 0), ("fail_ins", 0), ("halt_ins", 0)}


@dataclass
class BuiltinSig:
    """Mode/type/determinism contract of a builtin predicate."""

    name: str
    modes: list[str]            # '+' / '-'
    types: list                 # type name or ("mut", t) per argument
    det: str = "det"            # "det" | "semidet"

    @property
    def key(self):
        return (self.name, len(self.modes))


BASE_BUILTINS = [
    BuiltinSig("iadd", ["+", "+", "-"], ["int", "int", "int"]),
    BuiltinSig("isub", ["+", "+", "-"], ["int", "int", "int"]),
    BuiltinSig("imul", ["+", "+", "-"], ["int", "int", "int"]),
]


@dataclass
class Facts:
    """Analysis results consumed by admissibility checks and codegen."""

    detclass: dict = field(default_factory=dict)     # predkey -> det|semidet
    refmodes: dict = field(default_factory=dict)     # (predkey, var) -> mode
    locals_: dict = field(default_factory=dict)      # predkey -> set of local mutables
    diagnostics: list = field(default_factory=list)
    refmode_errors: list = field(default_factory=list)

    def refmode(self, predkey, var: str) -> str:
        return self.refmodes[(predkey, var)]


class Analyzer:
    def __init__(self, prog: NormProgram, builtins=None, lenient: bool = False):
        self.prog = prog
        self.regtypes = prog.regtypes
        self.builtins = {b.key: b for b in BASE_BUILTINS}
        for b in builtins or []:
            self.builtins[b.key] = b
        self.lenient = lenient
        self.diags: list[Diagnostic] = []
        self.mut_counter = itertools.count(1)
        self.mut_types: dict = {}

    # -- entry states ------------------------------------------------

    def entry_state(self, pred: NormPred) -> AbsSubst:
        beta = AbsSubst()
        asrt = pred.assertion
        for i, hv in enumerate(pred.headvars):
            f = beta.fact(hv)
            mode = asrt.argmodes[i] if asrt and asrt.argmodes else None
            ty = asrt.argtypes[i] if asrt and asrt.argtypes else None
            if mode == "+":
                f.fresh = False
                f.ground = True
                f.type = ty
                if isinstance(ty, tuple) and ty[0] == "mut":
                    f.mut = ("any", ty[1])
            elif mode == "-":
                f.fresh = True
                f.type = None
            else:
                # no information: neither fresh nor ground
                f.fresh = False
                f.type = ty
        return beta

    # -- abstract transfer -------------------------------------------

    def const_type(self, c):
        if isinstance(c, Int):
            return "int"
        owners = [n for n, rt in self.regtypes.items()
                  if rt.cases and c.name in rt.cases]
        return owners[0] if len(owners) == 1 else None

    def transfer(self, goal, beta: AbsSubst, predkey) -> AbsSubst:
        """Annotate ``goal`` with the state before it; return the state after.

        Rewrites convertible disjunctions and exhaustive guard chains in
        place (goal trees are already private copies here).
        """
        goal.ann = beta
        if isinstance(goal, True_):
            return beta
        if isinstance(goal, Fail):
            out = beta.copy()
            out.unreachable = True
            return out
        if isinstance(goal, Conj):
            cur = beta
            for g in goal.goals:
                cur = self.transfer(g, cur, predkey)
            return cur
        if isinstance(goal, Disj):
            conv = self._convert_disj(goal, beta)
            if conv is not None:
                goal.__class__ = IfThenElse
                goal.__dict__.clear()
                goal.__dict__.update(conv.__dict__)
                return self.transfer(goal, beta, predkey)
            outs = [self.transfer(b, beta.copy(), predkey) for b in goal.branches]
            return _join_all(outs, beta)
        if isinstance(goal, IfThenElse):
            self._elide_exhaustive(goal, beta)
            cpost = self.transfer(goal.cond, beta.copy(), predkey)
            tpost = self.transfer(goal.then, cpost, predkey)
            epost = self.transfer(goal.els, beta.copy(), predkey)
            return _join_all([tpost, epost], beta)
        if isinstance(goal, Unify):
            return self._t_unify(goal, beta)
        if isinstance(goal, ReadMut):
            return self._t_read(goal, beta)
        if isinstance(goal, AssignMut):
            return self._t_assign(goal, beta)
        if isinstance(goal, InitMut):
            return self._t_init(goal, beta)
        if isinstance(goal, Call):
            return self._t_call(goal, beta, predkey)
        raise error(getattr(goal, "pos", NOPOS), "analysis", f"cannot analyze {goal!r}")

    def _t_unify(self, g: Unify, beta: AbsSubst) -> AbsSubst:
        out = beta.copy()
        fa = out.fact(g.a.name)
        if is_const(g.b):
            if fa.fresh:
                fa.fresh = False
                fa.ground = True
                fa.const = g.b
                fa.type = fa.type or self.const_type(g.b)
            else:
                # comparison; on success the constant is known
                fa.const = g.b
                fa.type = fa.type or self.const_type(g.b)
                fa.ground = True
            return out
        fb = out.fact(g.b.name)
        if fa.fresh and not fb.fresh:
            out[g.a.name] = fb.copy()
        elif fb.fresh and not fa.fresh:
            out[g.b.name] = fa.copy()
        elif not fa.fresh and not fb.fresh:
            pass  # comparison
        else:
            self.diags.append(Diagnostic(g.pos, "unify-fresh-fresh",
                                         f"cannot alias two fresh variables "
                                         f"{g.a.name} and {g.b.name}"))
        return out

    def _t_read(self, g: ReadMut, beta: AbsSubst) -> AbsSubst:
        out = beta.copy()
        fm = out.fact(g.m.name)
        tau = fm.type[1] if isinstance(fm.type, tuple) and fm.type[0] == "mut" else None
        if not fm.ground and not self.lenient:
            self.diags.append(Diagnostic(g.pos, "read-unbound-mutable",
                                         f"read through possibly-unbound {g.m.name}"))
        fx = out.fact(g.x.name)
        known = None
        if fm.mut and fm.mut[0] == "new":
            known = out.mutvals.get(fm.mut[1])
        if fx.fresh:
            fx.fresh = False
            fx.ground = True
            fx.type = tau
            fx.const = known
        return out

    def _t_assign(self, g: AssignMut, beta: AbsSubst) -> AbsSubst:
        out = beta.copy()
        fm = out.fact(g.m.name)
        tau = fm.type[1] if isinstance(fm.type, tuple) and fm.type[0] == "mut" else None
        val = g.v if is_const(g.v) else out.fact(g.v.name).const
        if fm.mut and fm.mut[0] == "new":
            out.mutvals[fm.mut[1]] = val
        else:
            # unknown target: invalidate value facts of same-type mutables only
            for k in list(out.mutvals):
                if self.mut_types.get(k) == tau:
                    out.mutvals[k] = None
        return out

    def _t_init(self, g: InitMut, beta: AbsSubst) -> AbsSubst:
        out = beta.copy()
        fm = out.fact(g.m.name)
        if not fm.fresh and not self.lenient:
            self.diags.append(Diagnostic(g.pos, "initmut-nonfresh",
                                         f"initmut target {g.m.name} is not fresh"))
        k = next(self.mut_counter)
        self.mut_types[k] = g.type
        fm.fresh = False
        fm.ground = True
        fm.type = ("mut", g.type)
        fm.mut = ("new", k)
        out.mutvals[k] = g.v if is_const(g.v) else out.fact(g.v.name).const
        return out

    def _t_call(self, g: Call, beta: AbsSubst, predkey) -> AbsSubst:
        if (g.name, len(g.args)) in CONTROL_GOALS:
            return beta
        out = beta.copy()
        sig = self._callee_sig(g)
        if sig is None:
            if not self.lenient:
                self.diags.append(Diagnostic(
                    g.pos, "missing-assertion",
                    f"call to {g.name}/{len(g.args)} without modes"))
            for a in g.args:
                f = out.fact(a.name)
                f.fresh = False
            return out
        modes, types = sig
        for a, mode, ty in zip(g.args, modes, types):
            if not isinstance(a, Var):
                continue  # symbolic constant argument (e.g. a tag name)
            f = out.fact(a.name)
            if mode == "+":
                if f.fresh and not self.lenient:
                    self.diags.append(Diagnostic(
                        g.pos, "arg-not-ground",
                        f"input argument {a.name} of {g.name} may be unbound"))
                f.fresh = False
                f.ground = True
                f.type = f.type or ty
            else:
                f.fresh = False
                f.ground = True
                f.type = ty
                f.const = None
                if isinstance(ty, tuple) and ty[0] == "mut":
                    f.mut = ("any", ty[1])
        return out

    def _callee_sig(self, g: Call):
        key = (g.name, len(g.args))
        if key in self.builtins:
            b = self.builtins[key]
            return b.modes, b.types
        asrt = self.prog.assertions.get(key)
        if asrt is not None and asrt.argmodes:
            types = asrt.argtypes or [None] * asrt.arity
            return asrt.argmodes, types
        return None

    # -- disjunction conversion and guard elision ----------------------

    def _convert_disj(self, d: Disj, beta: AbsSubst):
        """(v=c1, b1 ; v=c2, b2 ; ...) with v ground -> if-then-else chain."""
        guards, rests = [], []
        scrut = None
        for br in d.branches:
            goals = br.goals if isinstance(br, Conj) else [br]
            first = goals[0]
            if not (isinstance(first, Unify) and is_const(first.b)):
                return None
            if scrut is None:
                scrut = first.a.name
            if first.a.name != scrut:
                return None
            guards.append(first)
            rest = goals[1:]
            rests.append(Conj(rest) if len(rest) > 1 else (rest[0] if rest else True_()))
        if scrut is None or not beta.is_ground(scrut):
            return None
        consts = [g.b for g in guards]
        if len(set(consts)) != len(consts):
            return None
        chain = IfThenElse(guards[-1], rests[-1], Fail(pos=d.pos), pos=d.pos)
        for gd, rs in zip(reversed(guards[:-1]), reversed(rests[:-1])):
            chain = IfThenElse(gd, rs, chain, pos=d.pos)
        return chain

    def _elide_exhaustive(self, ite: IfThenElse, beta: AbsSubst):
        """Drop the final guard of a constant-guard chain that covers all
        cases of the scrutinee's enumerated type."""
        cond = ite.cond
        if not (isinstance(cond, Unify) and is_const(cond.b)):
            return
        v = cond.a.name
        ty = beta.type_of(v)
        rt = self.regtypes.get(ty) if isinstance(ty, str) else None
        if rt is None or not rt.cases:
            return
        consts, nodes = [], []
        node = ite
        while (isinstance(node, IfThenElse) and isinstance(node.cond, Unify)
               and is_const(node.cond.b) and node.cond.a.name == v):
            consts.append(node.cond.b)
            nodes.append(node)
            node = node.els
        if not isinstance(node, Fail):
            return
        names = {c.name for c in consts if isinstance(c, Atom)}
        if names != set(rt.cases) or len(consts) != len(set(consts)):
            return
        last = nodes[-1]
        if len(nodes) == 1:
            return  # a single exhaustive guard would make the test vacuous
        parent = nodes[-2]
        parent.els = last.then
        parent.exhaustive = True


# ---------------------------------------------------------------------------
# joins


def _join_all(states: list[AbsSubst], fallback: AbsSubst) -> AbsSubst:
    live = [s for s in states if not getattr(s, "unreachable", False)]
    if not live:
        out = fallback.copy()
        out.unreachable = True
        return out
    out = live[0]
    for s in live[1:]:
        out = _join(out, s)
    return out


def _join(a: AbsSubst, b: AbsSubst) -> AbsSubst:
    out = AbsSubst()
    for name in set(a) | set(b):
        fa = a.get(name, VarFact(fresh=True))
        fb = b.get(name, VarFact(fresh=True))
        f = VarFact()
        f.fresh = fa.fresh and fb.fresh
        f.ground = fa.ground and fb.ground
        f.type = fa.type if fa.type == fb.type else None
        f.const = fa.const if fa.const == fb.const else None
        if fa.mut == fb.mut:
            f.mut = fa.mut
        elif fa.mut and fb.mut and isinstance(fa.type, tuple) and fa.type == fb.type:
            f.mut = ("any", fa.type[1])
        out[name] = f
    for k in set(a.mutvals) | set(b.mutvals):
        va, vb = a.mutvals.get(k), b.mutvals.get(k)
        out.mutvals[k] = va if va == vb else None
    return out


# ---------------------------------------------------------------------------
# public operations


def annotate(prog: NormProgram, builtins=None, lenient: bool = False):
    """Forward abstract execution; returns (annotated copy, Facts).

    Each goal's ``ann`` is the abstract substitution holding before it;
    predicates carry entry/exit states and an inferred determinism class.
    """
    ann = copy.deepcopy(prog)
    an = Analyzer(ann, builtins, lenient=lenient)
    for pred in ann.predicates.values():
        if pred.assertion and "unfold" in pred.assertion.flags:
            continue  # templates are analyzed at their expansion sites
        beta = an.entry_state(pred)
        pred.entry_ann = beta
        # bodies are acyclic; a bounded re-run stabilizes joins
        exit_beta = None
        for _ in range(3):
            exit_beta = an.transfer(pred.body, beta.copy(), pred.key)
        pred.exit_ann = exit_beta
    _infer_detclasses(ann, an)
    facts = Facts(diagnostics=an.diags)
    for pred in ann.predicates.values():
        facts.detclass[pred.key] = pred.detclass
    return ann, facts


def _infer_detclasses(prog: NormProgram, an: Analyzer):
    """det/semidet per predicate: a declared class wins; otherwise a
    conservative can-fail scan of the normalized body."""
    memo: dict = {}

    def declared(pred):
        if pred.assertion:
            if "det" in pred.assertion.flags:
                return "det"
            if "semidet" in pred.assertion.flags:
                return "semidet"
        return None

    def can_fail(g, pred) -> bool:
        if isinstance(g, (True_, AssignMut, InitMut)):
            return False
        if isinstance(g, Fail):
            return True
        if isinstance(g, Conj):
            return any(can_fail(x, pred) for x in g.goals)
        if isinstance(g, IfThenElse):
            return can_fail(g.then, pred) or can_fail(g.els, pred)
        if isinstance(g, Disj):
            return True
        if isinstance(g, Unify):
            beta = g.ann
            if beta is not None and beta.is_fresh(g.a.name):
                return False
            if (beta is not None and isinstance(g.b, Var)
                    and beta.is_fresh(g.b.name)):
                return False
            return True
        if isinstance(g, ReadMut):
            beta = g.ann
            return not (beta is not None and beta.is_fresh(g.x.name))
        if isinstance(g, Call):
            key = (g.name, len(g.args))
            if key in CONTROL_GOALS:
                return False
            if key in an.builtins:
                return an.builtins[key].det == "semidet"
            return pred_class(key) == "semidet"
        return True

    def pred_class(key) -> str:
        if key in memo:
            return memo[key]
        p = prog.predicates.get(key)
        if p is None:
            return "semidet"
        d = declared(p)
        if d:
            memo[key] = d
            return d
        memo[key] = "semidet"  # provisional for recursion
        memo[key] = "det" if not can_fail(p.body, p) else "semidet"
        return memo[key]

    for pred in prog.predicates.values():
        pred.detclass = pred_class(pred.key)


def unfold_marked(prog: NormProgram):
    """Substitute bodies of ``+ unfold`` predicates at their call sites.

    Marked predicates must be non-recursive (as a group); they are
    processed in topological order and removed from the program.
    """
    marked = {k for k, a in prog.assertions.items() if "unfold" in a.flags}
    marked &= set(prog.predicates)
    if not marked:
        return copy.deepcopy(prog)

    def marked_callees(key):
        out = set()
        for g in leaf_goals(prog.predicates[key].body):
            if isinstance(g, Call) and g.key in marked and g.key != key:
                out.add(g.key)
            elif isinstance(g, Call) and g.key == key:
                raise error(prog.predicates[key].pos, "unfold-recursive",
                            f"unfold-marked predicate {key[0]}/{key[1]} is recursive")
        return out

    order, seen, stack = [], set(), set()

    def visit(k):
        if k in seen:
            return
        if k in stack:
            raise error(prog.predicates[k].pos, "unfold-recursive",
                        f"cycle through unfold-marked {k[0]}/{k[1]}")
        stack.add(k)
        for c in marked_callees(k):
            visit(c)
        stack.discard(k)
        seen.add(k)
        order.append(k)

    for k in sorted(marked):
        visit(k)

    out = copy.deepcopy(prog)
    counter = itertools.count(1)

    def expand_into(body, templates):
        def leaf(g):
            if isinstance(g, Call) and g.key in templates:
                tmpl = templates[g.key]
                n = next(counter)
                # rename the template apart, then map formals onto actuals
                sub = {}
                for v in set(tmpl.headvars) | set(goal_vars(tmpl.body)):
                    sub[v] = f"{v}_u{n}"
                inlined = rename_goal(copy.deepcopy(tmpl.body), sub)
                amap = {sub[f]: a.name for f, a in zip(tmpl.headvars, g.args)}
                return rename_goal(inlined, amap)
            return g
        from .dialect.syntax import map_goals
        return map_goals(body, leaf)

    templates: dict = {}
    for key in order:
        pred = out.predicates[key]
        pred.body = expand_into(pred.body, templates)
        templates[key] = pred

    for pred in out.predicates.values():
        if pred.key not in marked:
            pred.body = expand_into(pred.body, templates)
    for key in marked:
        del out.predicates[key]
        out.assertions.pop(key, None)
    return out


def infer_refmodes(prog: NormProgram, facts: Facts, builtins=None) -> Facts:
    """Assign a reference mode to every variable of every predicate.

    Implements the argument-mode table plus the per-goal rules; any
    uncovered case is a compile-time error collected in
    ``facts.refmode_errors``.
    """
    an = Analyzer(prog, builtins)
    for pred in prog.predicates.values():
        _refmodes_pred(pred, prog, facts, an)
    return facts


def _set_mode(facts: Facts, predkey, var, mode, pos):
    cur = facts.refmodes.get((predkey, var))
    if cur is not None and cur != mode:
        facts.refmode_errors.append(Diagnostic(
            pos, "refmode-conflict",
            f"{var} needs both {cur} and {mode}"))
        return
    facts.refmodes[(predkey, var)] = mode


def _refmodes_pred(pred: NormPred, prog: NormProgram, facts: Facts, an: Analyzer):
    key = pred.key
    asrt = pred.assertion
    # step 1-2: argument modes
    for i, hv in enumerate(pred.headvars):
        mode = asrt.argmodes[i] if asrt and asrt.argmodes else "+"
        ty = (asrt.argtypes[i] if asrt and asrt.argtypes and i < len(asrt.argtypes)
              else None)
        is_mut = isinstance(ty, tuple) and ty[0] == "mut"
        if mode == "+":
            _set_mode(facts, key, hv, "1m" if is_mut else "0v", pred.pos)
        else:
            _set_mode(facts, key, hv, "2m" if is_mut else "1v", pred.pos)

    local_muts = facts.locals_.get(key, set())
    headset = set(pred.headvars)

    for g in leaf_goals(pred.body):
        beta = g.ann if g.ann is not None else AbsSubst()
        if isinstance(g, Unify) and isinstance(g.b, Var):
            for x, other in ((g.a, g.b), (g.b, g.a)):
                if x.name in headset:
                    continue  # argument modes (steps 1-2) take precedence
                if beta.is_fresh(x.name):
                    fo = beta.get(other.name, VarFact())
                    if (beta.is_ground(other.name) and isinstance(fo.type, tuple)
                            and fo.type[0] == "mut"):
                        _set_mode(facts, key, x.name, "1m", g.pos)  # step 3a
                    else:
                        _set_mode(facts, key, x.name, "0v", g.pos)  # step 3b
        elif isinstance(g, Unify):
            if beta.is_fresh(g.a.name) and g.a.name not in headset:
                _set_mode(facts, key, g.a.name, "0v", g.pos)
        elif isinstance(g, InitMut):
            if g.m.name in headset:
                pass
            elif beta.is_fresh(g.m.name):
                locs = facts.locals_.get(key)
                if locs is None or g.m.name in locs:
                    _set_mode(facts, key, g.m.name, "0m", g.pos)     # step 4
                else:
                    facts.refmode_errors.append(Diagnostic(
                        g.pos, "initmut-escapes",
                        f"mutable {g.m.name} escapes its predicate"))
        elif isinstance(g, ReadMut):
            if beta.is_fresh(g.x.name) and g.x.name not in headset:
                _set_mode(facts, key, g.x.name, "0v", g.pos)
        elif isinstance(g, Call):
            sig = an._callee_sig(g)
            if sig is None:
                continue
            modes, types = sig
            for a, m, ty in zip(g.args, modes, types):
                if not isinstance(a, Var) or a.name in headset:
                    continue
                if m == "-" and beta.is_fresh(a.name):
                    is_mut = isinstance(ty, tuple) and ty[0] == "mut"
                    _set_mode(facts, key, a.name, "1m" if is_mut else "0v", g.pos)

    # step 5: every variable must be covered
    for v in set(goal_vars(pred.body)) | set(pred.headvars):
        if (key, v) not in facts.refmodes:
            facts.refmode_errors.append(Diagnostic(
                pred.pos, "refmode-uncovered",
                f"no reference mode for {v} in {key[0]}/{key[1]}"))
    return facts


def escape_mutables(prog: NormProgram, facts: Facts | None = None) -> dict:
    """Per predicate, the set of initmut variables that stay local.

    A mutable is local iff its alias group is never returned through a
    head out-argument and its identifier is never stored into another
    mutable.  Reads, assignments, and passing as a call argument keep it
    local.
    """
    out: dict = {}
    for pred in prog.predicates.values():
        created: set = set()
        alias: dict = {}

        def find(x):
            while alias.get(x, x) != x:
                x = alias[x]
            return x

        def union(a, b):
            ra, rb = find(a), find(b)
            if ra != rb:
                alias[ra] = rb

        for g in leaf_goals(pred.body):
            if isinstance(g, InitMut):
                created.add(g.m.name)
            elif isinstance(g, Unify) and isinstance(g.b, Var):
                union(g.a.name, g.b.name)

        escaped: set = set()
        outargs = set()
        asrt = pred.assertion
        if asrt and asrt.argmodes:
            outargs = {hv for hv, m in zip(pred.headvars, asrt.argmodes) if m == "-"}
        for g in leaf_goals(pred.body):
            if isinstance(g, AssignMut) and isinstance(g.v, Var):
                escaped.add(find(g.v.name))
            elif isinstance(g, InitMut) and isinstance(g.v, Var):
                escaped.add(find(g.v.name))
        for hv in outargs:
            escaped.add(find(hv))

        locals_ = {m for m in created
                   if find(m) not in escaped}
        out[pred.key] = locals_
        if facts is not None:
            facts.locals_[pred.key] = locals_
    return out


def analyze(prog: NormProgram, builtins=None):
    """Full pipeline: unfolding, annotate, escape analysis, refmodes.

    Returns (annotated program, Facts)."""
    unfolded = unfold_marked(prog)
    ann, facts = annotate(unfolded, builtins)
    escape_mutables(ann, facts)
    infer_refmodes(ann, facts, builtins)
    return ann, facts
