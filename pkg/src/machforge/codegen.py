"""Compilation of annotated predicates to the basic-block IR.

Control structures, calls, unifications, and mutable operations each
lower through a small set of rules; variable access is mediated by the
reference-mode table in ``ir``.  The emulator generator reuses this
compiler with hooks for instruction operands and the special control
goals (next/fail instruction, dispatch re-entry).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .diagnostics import InternalError, NOPOS, error
from .ir import (
    BlockGraph,
    CompilationUnit,
    EAccess,
    EBin,
    ELit,
    EMem,
    EOperand,
    EPrim,
    IRFunc,
    PAccess,
    PMem,
    SAssign,
    SCall,
    TBranch,
    TJump,
    TRetBool,
    TRetVoid,
    TStop,
    TSwitch,
    check_access,
)
from .terms import Atom, Int, Var, is_const
from .dialect.syntax import (
    AssignMut,
    Call,
    Conj,
    Disj,
    Fail,
    IfThenElse,
    InitMut,
    NormPred,
    ReadMut,
    True_,
    Unify,
    goal_vars,
)

CONTROL_GOALS = {"next_ins", "fail_ins", "halt_ins"}


# ---------------------------------------------------------------------------
# Variable access


class LocalAccess:
    """Default access recipe: a function-local variable."""

    def __init__(self, var: str, refmode: str):
        self.var = var
        self.refmode = refmode

    def expr(self, kind: str):
        check_access(self.refmode, kind, self.var)
        return EAccess(self.var, self.refmode, kind)

    def place(self, kind: str):
        check_access(self.refmode, kind, self.var)
        return PAccess(self.var, self.refmode, kind)


class OperandAccess:
    """Access recipe for an instruction operand.

    The operand's value is decoded from the bytecode stream; mutable
    operand kinds (X/Y registers) behave like 1m variables whose address
    expression is derived from the operand word.
    """

    def __init__(self, var: str, kind: str, offset: int):
        self.var = var
        self.kind = kind
        self.offset = offset
        self.refmode = "1m" if kind.endswith("_mutable") else "0v"

    def _addr(self):
        reg = "xreg_addr" if self.kind.startswith("xreg") else "yreg_addr"
        return EPrim(reg, (EOperand(self.offset),))

    def _value(self):
        if self.kind in ("constagged", "functor"):
            return EPrim("pool", (EOperand(self.offset),))
        if self.kind in ("label", "uint", "bltnum"):
            return EOperand(self.offset)
        if self.kind == "opn_array":
            return EPrim("opn_base", (ELit(self.offset),))
        raise InternalError(f"operand kind {self.kind} has no value recipe")

    def expr(self, kind: str):
        check_access(self.refmode, kind, self.var)
        if self.refmode == "1m":
            if kind == "val_r":
                return self._addr()
            if kind == "mutval_r":
                return EMem(self._addr())
            raise InternalError(f"operand {self.var}: unsupported access {kind}")
        if kind == "val_r":
            return self._value()
        raise InternalError(f"operand {self.var}: unsupported access {kind}")

    def place(self, kind: str):
        check_access(self.refmode, kind, self.var)
        if self.refmode == "1m" and kind == "mutval_l":
            return PMem(self._addr())
        raise InternalError(f"operand {self.var}: unsupported store {kind}")


# ---------------------------------------------------------------------------
# Callee contracts


@dataclass
class CalleeInfo:
    name: str
    modes: list
    types: list
    detclass: str


BASE_VALUE_PRIMS = {"iadd": "+", "isub": "-", "imul": "*"}


class MachineHooks:
    """Extension point used by the emulator compiler.

    Provides operand access recipes, machine primitive signatures, the
    special control goals, and the tag numbering for switch lowering.
    The default hooks only know the integer arithmetic builtins.
    """

    tag_numbers: dict = {}

    def access_for(self, var: str):
        return None

    def callee_info(self, name: str, arity: int):
        return None

    def control_goal(self, gc: "GoalCompiler", goal: Call, eta, delta, mode):
        if goal.name in BASE_VALUE_PRIMS and len(goal.args) == 3:
            op = BASE_VALUE_PRIMS[goal.name]
            a = gc.map_var(goal.args[0].name, "val_r")
            b = gc.map_var(goal.args[1].name, "val_r")
            gc.graph.emit(SAssign(gc.map_var(goal.args[2].name, "val_l"),
                                  EBin(op, a, b)), delta)
            gc.graph.seal(delta, TJump(eta["s"]))
            return mode
        raise error(goal.pos, "no-rule",
                    f"{goal.name} is only meaningful inside instruction bodies")

    def prim_stmt(self, name, arity):
        return name in BASE_VALUE_PRIMS


# ---------------------------------------------------------------------------
# Goal compilation


@dataclass
class DerefLoop:
    """Internal goal: inlined dereference loop with specialized exits.

    Produced by the connected-continuations rewrite; ``x`` is dereferenced
    into ``td``; control continues at the then/else goal depending on the
    final tag test, without re-testing on statically-known exits.
    """

    x: Var
    td: Var
    then: object
    els: object
    ann: object = None
    pos: object = NOPOS


class GoalCompiler:
    def __init__(self, program, facts, pred: NormPred, graph: BlockGraph,
                 hooks: MachineHooks | None = None, opts=None, unit=None,
                 prefix: str = ""):
        self.program = program
        self.facts = facts
        self.pred = pred
        self.graph = graph
        self.hooks = hooks or MachineHooks()
        self.opts = opts
        self.unit = unit
        self.prefix = prefix        # namespaces locals of inlined bodies
        self.temps = itertools.count(1)
        self.extra_locals: dict = {}
        self.entry_block: int | None = None   # for tail-call loops
        self.special_access: dict = {}

    # -- accesses ------------------------------------------------------

    def access(self, var: str):
        sp = self.special_access.get(var)
        if sp is not None:
            return sp
        hook = self.hooks.access_for(var)
        if hook is not None:
            return hook
        rm = self.facts.refmodes.get((self.pred.key, var))
        if rm is None:
            raise InternalError(f"no refmode for {var} in {self.pred.key}")
        return LocalAccess(self.prefix + var, rm)

    def map_var(self, var: str, kind: str):
        """Access expression or place for (variable, access kind)."""
        acc = self.access(var)
        if kind in ("val_l", "mutval_l"):
            return acc.place(kind)
        return acc.expr(kind)

    def new_temp(self, kind="tmp", refmode="0v"):
        name = f"{self.prefix}{kind}_{next(self.temps)}"
        self.extra_locals[name] = (refmode, "tagged")
        self.special_access[name] = LocalAccess(name, refmode)
        return name

    # -- constants -----------------------------------------------------

    def encodecons(self, c, var: str, ann) -> ELit:
        """Encode a constant per the variable's encoding type: regtype
        cases number 0..n-1 in declaration order; integers encode as
        themselves."""
        if isinstance(c, Int):
            return ELit(c.value)
        ty = None
        if ann is not None:
            f = ann.get(var)
            if f is not None:
                ty = f.type
                if isinstance(ty, tuple) and ty[0] == "mut":
                    ty = ty[1]
        if ty is None:
            owners = [n for n, rt in self.program.regtypes.items()
                      if rt.cases and c.name in rt.cases]
            if len(owners) != 1:
                raise error(NOPOS, "encode",
                            f"cannot determine encoding type of constant {c!r}")
            ty = owners[0]
        rt = self.program.regtypes.get(ty)
        if rt is None or not rt.cases or c.name not in rt.cases:
            raise error(NOPOS, "encode", f"constant {c!r} not a case of {ty}")
        return ELit(rt.cases.index(c.name))

    # -- callee lookup ---------------------------------------------------

    def callee(self, goal: Call) -> CalleeInfo:
        info = self.hooks.callee_info(goal.name, len(goal.args))
        if info is not None:
            return info
        key = (goal.name, len(goal.args))
        asrt = self.program.assertions.get(key)
        pred = self.program.predicates.get(key)
        if asrt is None or asrt.argmodes is None:
            raise error(goal.pos, "no-rule",
                        f"call to {goal.name}/{len(goal.args)} without modes")
        det = self.facts.detclass.get(key)
        if det is None and pred is not None:
            det = pred.detclass
        return CalleeInfo(goal.name, asrt.argmodes,
                          asrt.argtypes or [None] * asrt.arity, det or "semidet")

    # -- gcomp -----------------------------------------------------------

    def gcomp(self, goal, eta: dict, delta: int, mode=None):
        """Compile ``goal`` into block ``delta``; continuations in ``eta``.

        Returns the abstract read/write mode at the goal's success exit
        ('read' | 'write' | None when unknown)."""
        g = self.graph
        if isinstance(goal, True_):
            g.seal(delta, TJump(eta["s"]))
            return mode
        if isinstance(goal, Fail):
            g.seal(delta, TJump(eta["f"]))
            return mode
        if isinstance(goal, Conj):
            cur, m = delta, mode
            for sub in goal.goals[:-1]:
                nxt = g.new()
                m = self.gcomp(sub, {**eta, "s": nxt}, cur, m)
                cur = nxt
            return self.gcomp(goal.goals[-1], eta, cur, m)
        if isinstance(goal, IfThenElse):
            return self._g_ite(goal, eta, delta, mode)
        if isinstance(goal, DerefLoop):
            return self._g_derefloop(goal, eta, delta, mode)
        if isinstance(goal, Unify):
            return self._g_unify(goal, eta, delta, mode)
        if isinstance(goal, ReadMut):
            return self._g_read(goal, eta, delta, mode)
        if isinstance(goal, AssignMut):
            place = self.map_var(goal.m.name, "mutval_l")
            if is_const(goal.v):
                val = self.encodecons(goal.v, goal.m.name, goal.ann)
            else:
                val = self.map_var(goal.v.name, "val_r")
            g.emit(SAssign(place, val), delta)
            g.seal(delta, TJump(eta["s"]))
            return mode
        if isinstance(goal, InitMut):
            rm = self.facts.refmodes.get((self.pred.key, goal.m.name))
            if rm != "0m" and self.hooks.access_for(goal.m.name) is None:
                raise error(goal.pos, "no-rule",
                            f"initmut target {goal.m.name} must be a local "
                            f"mutable (refmode 0m), got {rm}")
            return self.gcomp(AssignMut(goal.m, goal.v, goal.ann, goal.pos),
                              eta, delta, mode)
        if isinstance(goal, Call):
            return self._g_call(goal, eta, delta, mode)
        if isinstance(goal, Disj):
            raise error(goal.pos, "no-rule",
                        "disjunction not convertible to if-then-else")
        raise error(getattr(goal, "pos", NOPOS), "no-rule",
                    f"no compilation rule for {goal!r}")

    # -- control ---------------------------------------------------------

    def _g_ite(self, goal: IfThenElse, eta, delta, mode):
        g = self.graph
        # tag-switch lowering: a chain of tagof tests over one variable
        chain = self._tag_chain(goal)
        if chain is not None and self.opts is not None and self.opts.ts:
            return self._g_tagswitch(chain, eta, delta, mode)
        dt, de = g.newn(2)
        mc = self.gcomp(goal.cond, {**eta, "s": dt, "f": de}, delta, mode)
        emode = mode if mc == mode else None
        mt = self.gcomp(goal.then, eta, dt, mc)
        me = self.gcomp(goal.els, eta, de, emode)
        return mt if mt == me else None

    def _tag_chain(self, goal):
        """Collect (var, [(tagname, then)], else) from a tagof if-then-else
        chain; None when the shape does not match."""
        var = None
        arms = []
        node = goal
        while isinstance(node, IfThenElse):
            c = node.cond
            if not (isinstance(c, Call) and c.name == "tagof" and len(c.args) == 2
                    and isinstance(c.args[1], Atom)):
                break
            v = c.args[0].name
            if var is None:
                var = v
            if v != var:
                break
            arms.append((c.args[1].name, node.then))
            node = node.els
        if var is None or len(arms) < 2:
            return None
        return var, arms, node

    def _g_tagswitch(self, chain, eta, delta, mode):
        var, arms, els = chain
        g = self.graph
        blocks = g.newn(len(arms))
        dd = g.new()
        cases = []
        for (tagname, _), b in zip(arms, blocks):
            cases.append((self.hooks.tag_numbers[tagname], b))
        g.seal(delta, TSwitch(EPrim("tag", (self.map_var(var, "val_r"),)),
                              cases, dd))
        modes = []
        for (_, then), b in zip(arms, blocks):
            modes.append(self.gcomp(then, eta, b, mode))
        modes.append(self.gcomp(els, eta, dd, mode))
        first = modes[0]
        return first if all(m == first for m in modes) else None

    def _g_derefloop(self, goal: DerefLoop, eta, delta, mode):
        """Inlined dereference with specialized exits: the self-reference
        exit is known to be a ref; the non-ref exit skips the tag test."""
        g = self.graph
        cur = self.new_temp("dref")
        td = goal.td.name
        dloop, dchk, dself, dadv, dnon, dthen, dels = g.newn(7)
        g.emit(SAssign(self.map_var(cur, "val_l"),
                       self.map_var(goal.x.name, "val_r")), delta)
        g.seal(delta, TJump(dloop))
        ref = self.hooks.tag_numbers["ref"]
        g.seal(dloop, TBranch(
            EBin("==", EPrim("tag", (self.map_var(cur, "val_r"),)), ELit(ref)),
            dchk, dnon))
        t1 = self.new_temp("dref")
        g.emit(SAssign(self.map_var(t1, "val_l"),
                       EMem(EPrim("tagval", (self.map_var(cur, "val_r"),)))), dchk)
        g.seal(dchk, TBranch(
            EBin("==", self.map_var(cur, "val_r"), self.map_var(t1, "val_r")),
            dself, dadv))
        g.emit(SAssign(self.map_var(td, "val_l"), self.map_var(cur, "val_r")), dself)
        g.seal(dself, TJump(dthen))
        g.emit(SAssign(self.map_var(cur, "val_l"), self.map_var(t1, "val_r")), dadv)
        g.seal(dadv, TJump(dloop))
        g.emit(SAssign(self.map_var(td, "val_l"), self.map_var(cur, "val_r")), dnon)
        g.seal(dnon, TJump(dels))
        mt = self.gcomp(goal.then, eta, dthen, mode)
        me = self.gcomp(goal.els, eta, dels, mode)
        return mt if mt == me else None

    # -- unification and mutable ops --------------------------------------

    def _g_unify(self, goal: Unify, eta, delta, mode):
        g = self.graph
        ann = goal.ann
        a = goal.a.name
        afresh = ann.is_fresh(a) if ann is not None else False
        if is_const(goal.b):
            if afresh:
                g.emit(SAssign(self.map_var(a, "val_l"),
                               self.encodecons(goal.b, a, ann)), delta)
                g.seal(delta, TJump(eta["s"]))
                return mode
            g.seal(delta, TBranch(
                EBin("==", self.map_var(a, "val_r"),
                     self.encodecons(goal.b, a, ann)),
                eta["s"], eta["f"]))
            return mode
        b = goal.b.name
        bfresh = ann.is_fresh(b) if ann is not None else False
        if afresh and not bfresh:
            g.emit(SAssign(self.map_var(a, "val_l"), self.map_var(b, "val_r")),
                   delta)
            g.seal(delta, TJump(eta["s"]))
            return mode
        if bfresh and not afresh:
            g.emit(SAssign(self.map_var(b, "val_l"), self.map_var(a, "val_r")),
                   delta)
            g.seal(delta, TJump(eta["s"]))
            return mode
        if not afresh and not bfresh:
            g.seal(delta, TBranch(
                EBin("==", self.map_var(a, "val_r"), self.map_var(b, "val_r")),
                eta["s"], eta["f"]))
            return mode
        raise error(goal.pos, "no-rule",
                    f"cannot unify two fresh variables {a} and {b}")

    def _g_read(self, goal: ReadMut, eta, delta, mode):
        g = self.graph
        ann = goal.ann
        if ann is None or ann.is_fresh(goal.x.name):
            g.emit(SAssign(self.map_var(goal.x.name, "val_l"),
                           self.map_var(goal.m.name, "mutval_r")), delta)
            g.seal(delta, TJump(eta["s"]))
            return mode
        # x already bound: read into a temp, then compare
        t = self.new_temp()
        g.emit(SAssign(self.map_var(t, "val_l"),
                       self.map_var(goal.m.name, "mutval_r")), delta)
        g.seal(delta, TBranch(
            EBin("==", self.map_var(goal.x.name, "val_r"),
                 self.map_var(t, "val_r")),
            eta["s"], eta["f"]))
        return mode

    # -- calls -------------------------------------------------------------

    def _g_call(self, goal: Call, eta, delta, mode):
        g = self.graph
        name = goal.name
        if name == "tagof" and len(goal.args) == 2 and isinstance(goal.args[1], Atom):
            tnum = self.hooks.tag_numbers.get(goal.args[1].name)
            if tnum is None:
                raise error(goal.pos, "no-rule",
                            f"unknown tag {goal.args[1].name}")
            g.seal(delta, TBranch(
                EBin("==", EPrim("tag", (self.map_var(goal.args[0].name, "val_r"),)),
                     ELit(tnum)),
                eta["s"], eta["f"]))
            return mode
        if name in CONTROL_GOALS or self.hooks.prim_stmt(name, len(goal.args)):
            return self.hooks.control_goal(self, goal, eta, delta, mode)
        info = self.callee(goal)
        ins, outs = [], []
        for arg, m in zip(goal.args, info.modes):
            if m == "+":
                ins.append(self.map_var(arg.name, "val_r"))
            else:
                acc = self.access(arg.name)
                if not isinstance(acc, LocalAccess):
                    raise error(goal.pos, "no-rule",
                                "out-arguments must be local variables")
                outs.append((acc.var, acc.refmode))
        # direct tail self-call compiles to a parameter shuffle plus a jump
        if (name == self.pred.name and len(goal.args) == self.pred.arity
                and self.entry_block is not None and self._is_tail(eta)):
            self._tail_shuffle(goal, info, delta)
            g.seal(delta, TJump(self.entry_block))
            return mode
        if info.detclass == "det":
            g.emit(SCall(name, ins, outs), delta)
            g.seal(delta, TJump(eta["s"]))
            return mode
        ok = self.new_temp("ok")
        g.emit(SCall(name, ins, outs, ok=ok), delta)
        g.seal(delta, TBranch(self.map_var(ok, "val_r"), eta["s"], eta["f"]))
        return mode

    def _is_tail(self, eta) -> bool:
        return eta.get("s") == eta.get("ret_s") and (
            self.pred.detclass == "det" or eta.get("f") == eta.get("ret_f"))

    def _tail_shuffle(self, goal: Call, info: CalleeInfo, delta):
        g = self.graph
        # evaluate arguments into temps first (parallel assignment);
        # each temp carries the formal's reference mode so pointer-shaped
        # values keep their type in the emitted code
        tmps = []
        for arg, m, formal in zip(goal.args, info.modes, self.pred.headvars):
            if m == "+":
                frm = self.facts.refmodes[(self.pred.key, formal)]
                t = self.new_temp("arg", "1m" if frm == "1m" else "0v")
                g.emit(SAssign(self.map_var(t, "val_l"),
                               self.map_var(arg.name, "val_r")), delta)
                tmps.append((t, m, arg))
            else:
                tmps.append((None, m, arg))
        for (t, m, arg), formal in zip(tmps, self.pred.headvars):
            facc = self.access(formal)
            if m == "+":
                g.emit(SAssign(facc.place("val_l"), self.map_var(t, "val_r")),
                       delta)
            else:
                if arg.name != formal:
                    raise error(goal.pos, "no-rule",
                                "tail call must pass its own out-argument through")


# ---------------------------------------------------------------------------
# Predicate compilation


def pcomp(program, facts, pred: NormPred, unit: CompilationUnit,
          hooks: MachineHooks | None = None, opts=None) -> IRFunc:
    """Compile one predicate to an IR function and add it to the unit.

    Deterministic predicates become procedures whose success continuation
    returns; semideterministic ones become boolean functions with a
    return-true and a return-false block."""
    if pred.detclass not in ("det", "semidet"):
        raise error(pred.pos, "no-rule",
                    f"{pred.name}/{pred.arity} is not det or semidet")
    g = BlockGraph()
    gc = GoalCompiler(program, facts, pred, g, hooks, opts, unit)

    asrt = pred.assertion
    modes = asrt.argmodes if asrt and asrt.argmodes else ["+"] * pred.arity
    types = (asrt.argtypes if asrt and asrt.argtypes
             else [None] * pred.arity)
    params, outs = [], []
    for hv, m, ty in zip(pred.headvars, modes, types):
        rm = facts.refmodes[(pred.key, hv)]
        params.append((hv, rm, _type_name(ty)))
        if m == "-":
            outs.append(hv)

    if pred.detclass == "det":
        delta, ds, dtrap = g.newn(3)
        # a det body reaching its failure continuation is an assertion bug
        eta = {"s": ds, "f": dtrap, "ret_s": ds, "ret_f": None}
        gc.entry_block = delta
        gc.gcomp(pred.body, eta, delta)
        g.seal(ds, TRetVoid())
        g.seal(dtrap, TStop("unreachable"))
    else:
        delta, ds, df = g.newn(3)
        eta = {"s": ds, "f": df, "ret_s": ds, "ret_f": df}
        gc.entry_block = delta
        gc.gcomp(pred.body, eta, delta)
        g.seal(ds, TRetBool(True))
        g.seal(df, TRetBool(False))
    g.check()

    localmap = _collect_locals(pred, facts, gc)
    fn = IRFunc(pred.name, params, outs, pred.detclass, g, delta, localmap)
    unit.add(fn)
    return fn


def _type_name(ty):
    if isinstance(ty, tuple):
        return f"mut({ty[1]})"
    return ty or "tagged"


def _collect_locals(pred, facts, gc: GoalCompiler) -> dict:
    out = dict(gc.extra_locals)
    headset = set(pred.headvars)
    types = _var_types(pred)
    for v in goal_vars(pred.body):
        if v in headset:
            continue
        rm = facts.refmodes.get((pred.key, v))
        if rm is not None:
            out[v] = (rm, _type_name(types.get(v)))
    return out


def _var_types(pred) -> dict:
    from .dialect.syntax import leaf_goals
    types: dict = {}
    for g in leaf_goals(pred.body):
        ann = getattr(g, "ann", None)
        if not ann:
            continue
        for name, f in ann.items():
            if f.type is not None:
                types[name] = f.type
    exit_ann = pred.exit_ann
    if exit_ann:
        for name, f in exit_ann.items():
            if f.type is not None:
                types[name] = f.type
    return types


# ---------------------------------------------------------------------------
# Block-graph cleanup and flattening


def merge_straightline(g: BlockGraph, protected=()) -> None:
    """Fold a block into its sole predecessor when connected by a plain
    jump; keeps entry and protected blocks."""
    while True:
        preds: dict = {}
        for i in range(len(g)):
            for s in g.successors(i):
                preds.setdefault(s, []).append(i)
        changed = False
        for i in range(len(g)):
            t = g[i].term
            if not isinstance(t, TJump):
                continue
            j = t.dst
            if j in protected or j == i:
                continue
            if len(preds.get(j, [])) != 1:
                continue
            g[i].stmts.extend(g[j].stmts)
            g[i].term = g[j].term
            g[j].stmts = []
            g[j].term = TStop("unreachable")
            changed = True
            break
        if not changed:
            return


@dataclass
class FlatFunc:
    """Layout order plus label requirements for one function."""

    func: IRFunc
    order: list                  # block ids, entry first
    labels: set                  # block ids needing a label
    dropped: int = 0             # unreachable blocks removed


def flatten(fn: IRFunc, extra_roots=()) -> FlatFunc:
    """Deterministic source-order layout; a jump to the next block in
    layout order becomes fallthrough; unreachable blocks are dropped."""
    g = fn.graph
    reach: set = set()
    stack = [fn.entry] + list(extra_roots)
    while stack:
        b = stack.pop()
        if b in reach:
            continue
        reach.add(b)
        stack.extend(g.successors(b))
    order = [i for i in range(len(g)) if i in reach]
    # entry first
    order.remove(fn.entry)
    order = [fn.entry] + order
    labels: set = set()
    pos = {b: k for k, b in enumerate(order)}
    for b in order:
        t = g[b].term
        for s in g.successors(b):
            if isinstance(t, TJump) and pos.get(s) == pos[b] + 1:
                continue  # fallthrough
            labels.add(s)
    dropped = len(g) - len(order)
    return FlatFunc(fn, order, labels, dropped)
