"""Emulator compiler: builds the fetch/dispatch loop plus per-instruction
code into one block graph, with helper predicates compiled as functions.

The continuation map of the instruction-body compiler carries, besides
success and failure, the next-instruction continuation (advance the
program counter by the instruction's encoded width, then re-enter
dispatch) and the shared fail-instruction block (restore from the newest
choice point or stop).

Read/write-mode specialization (rw) threads an abstract mode through
instruction bodies: with two dispatch switches, mode tests fold away in
the specialized copies and each exit jumps to the switch matching its
statically-known mode.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

from .codegen import (
    CONTROL_GOALS,
    DerefLoop,
    GoalCompiler,
    MachineHooks,
    OperandAccess,
    merge_straightline,
    pcomp,
)
from .diagnostics import InternalError, NOPOS, error
from .dialect.syntax import Call, Conj, IfThenElse, leaf_goals
from .ir import (
    BlockGraph,
    CompilationUnit,
    EBin,
    ELit,
    EOperand,
    EPrim,
    IRFunc,
    SPrim,
    TBranch,
    TJump,
    TStop,
    TSwitch,
)
from .machdef import (
    CONTROL_PRIMS,
    MachineDef,
    PRIM_SIGS,
    PURE_VALUE_PRIMS,
    SEMIDET_PRIMS,
    TAGS,
)
from .transforms import OptionSet, merged_name

PRIMS_BY_NAME = {s.name: s for s in PRIM_SIGS}


@dataclass
class EmulatorIR:
    machine: MachineDef
    opts: OptionSet
    unit: CompilationUnit
    emu: IRFunc
    dispatch_entry: int
    dispatch_switches: list
    fail_block: int
    ins_blocks: dict                        # (name, variant) -> entry block
    ins_block_counts: dict = field(default_factory=dict)

    @property
    def block_count(self) -> int:
        return sum(len(f.graph) for f in self.unit.funcs.values())


class _EmuHooks(MachineHooks):
    def __init__(self, emc: "_EmuCompiler", insname: str, accesses: dict,
                 width, variant):
        self.emc = emc
        self.insname = insname
        self.accesses = accesses
        self.width = width                  # Expr: encoded width in words
        self.variant = variant
        self.tag_numbers = TAGS

    def access_for(self, var):
        return self.accesses.get(var)

    def prim_stmt(self, name, arity):
        return name in PRIMS_BY_NAME

    def control_goal(self, gc: GoalCompiler, goal: Call, eta, delta, mode):
        return self.emc.compile_prim(self, gc, goal, eta, delta, mode)


class _HelperHooks(MachineHooks):
    """Hooks for helper predicates compiled as functions: machine prims
    are available, control transfers are not."""

    def __init__(self, emc):
        self.emc = emc
        self.tag_numbers = TAGS

    def prim_stmt(self, name, arity):
        return name in PRIMS_BY_NAME

    def control_goal(self, gc, goal, eta, delta, mode):
        if goal.name in CONTROL_PRIMS:
            raise error(goal.pos, "no-rule",
                        f"{goal.name} cannot appear in a helper predicate")
        return self.emc.compile_prim(None, gc, goal, eta, delta, mode)


class _EmuCompiler:
    def __init__(self, machine: MachineDef, opts: OptionSet):
        self.machine = machine
        self.opts = opts
        self.unit = CompilationUnit()
        self.g = BlockGraph()
        self.ins_blocks: dict = {}
        self.ins_block_counts: dict = {}
        self.mode_dep: dict = {}
        self.advance_cache: dict = {}
        self.emu_locals: dict = {}
        self.dispatch_entry = None
        self.switch_read = None
        self.switch_write = None

    # -- mode dependence ------------------------------------------------

    def is_mode_dependent(self, ins) -> bool:
        if ins.name in self.mode_dep:
            return self.mode_dep[ins.name]
        pred = self.machine.program.predicates[(ins.base, ins.arity)]
        dep = any(isinstance(x, Call) and x.name == "read_mode"
                  for x in leaf_goals(pred.body))
        self.mode_dep[ins.name] = dep
        return dep

    # -- primitive lowering ----------------------------------------------

    def compile_prim(self, hooks, gc: GoalCompiler, goal: Call, eta, delta,
                     mode):
        g = gc.graph
        name = goal.name
        sig = PRIMS_BY_NAME[name]

        def val(i):
            a = goal.args[i]
            from .terms import Int
            if isinstance(a, Int):
                return ELit(a.value)
            return gc.map_var(a.name, "val_r")

        ins = [val(i) for i, m_ in enumerate(sig.modes) if m_ == "+"]
        outs = [gc.map_var(goal.args[i].name, "val_l")
                for i, m_ in enumerate(sig.modes) if m_ == "-"]

        if name in CONTROL_PRIMS:
            return self._control(hooks, gc, goal, ins, eta, delta, mode)

        if name in SEMIDET_PRIMS:
            if name == "read_mode" and mode is not None:
                # rw specialization folds the test
                g.seal(delta, TJump(eta["s"] if mode == "read" else eta["f"]))
                return mode
            g.seal(delta, TBranch(EPrim(name, tuple(ins)), eta["s"], eta["f"]))
            return mode
        if name in PURE_VALUE_PRIMS:
            from .ir import SAssign
            g.emit(SAssign(outs[0], EPrim(name, tuple(ins))), delta)
            g.seal(delta, TJump(eta["s"]))
            return mode
        # side-effecting statement primitive
        g.emit(SPrim(name, ins, outs), delta)
        g.seal(delta, TJump(eta["s"]))
        if name == "set_write_mode":
            return "write"
        if name in ("set_s_str", "set_s_lst"):
            return "read"
        if name == "fail_restore":
            return "read"
        return mode

    def _control(self, hooks, gc, goal, ins, eta, delta, mode):
        g = gc.graph
        name = goal.name
        if name == "next_ins":
            g.seal(delta, TJump(self.advance_block(hooks, mode)))
            return mode
        if name == "fail_ins":
            g.seal(delta, TJump(eta["fi"]))
            return mode
        if name == "halt_ins":
            g.seal(delta, TStop("halt"))
            return mode
        if name == "goto_ins":
            g.emit(SPrim("set_p", [ins[0]]), delta)
            g.seal(delta, TJump(self.dispatch_for(None)))
            return mode
        if name == "goto_cont":
            g.emit(SPrim("set_p", [EPrim("cpreg")]), delta)
            g.seal(delta, TJump(self.dispatch_for(None)))
            return mode
        if name == "set_cont_next":
            g.emit(SPrim("set_cp", [EBin("+", EPrim("preg"), hooks.width)]),
                   delta)
            g.seal(delta, TJump(eta["s"]))
            return mode
        raise InternalError(f"unhandled control prim {name}")

    # -- continuation plumbing ---------------------------------------------

    def advance_block(self, hooks, mode) -> int:
        """A block advancing P by this instruction's width, then jumping
        to the dispatch matching the exit mode."""
        key = (hooks.insname, hooks.variant, mode)
        b = self.advance_cache.get(key)
        if b is not None:
            return b
        b = self.g.new()
        self.g.emit(SPrim("set_p", [EBin("+", EPrim("preg"), hooks.width)]), b)
        self.g.seal(b, TJump(self.dispatch_for(mode)))
        self.advance_cache[key] = b
        return b

    def dispatch_for(self, mode) -> int:
        if not self.opts.rw:
            return self.dispatch_entry
        if mode == "read":
            return self.switch_read
        if mode == "write":
            return self.switch_write
        return self.dispatch_entry


def _cc_rewrite(goal):
    """Connected continuations: fuse ``deref(X, Td)`` with an immediately
    following tag test on Td into an inlined dereference loop whose exits
    jump straight to the matching branch."""
    def walk(g):
        if isinstance(g, Conj):
            goals = [walk(x) for x in g.goals]
            out = []
            i = 0
            while i < len(goals):
                a = goals[i]
                b = goals[i + 1] if i + 1 < len(goals) else None
                if (isinstance(a, Call) and a.name == "deref"
                        and len(a.args) == 2 and isinstance(b, IfThenElse)
                        and _is_ref_test(b.cond, a.args[1].name)):
                    out.append(DerefLoop(a.args[0], a.args[1],
                                         walk(b.then), walk(b.els),
                                         pos=a.pos))
                    i += 2
                    continue
                out.append(a)
                i += 1
            return Conj(out, g.ann, g.pos) if len(out) > 1 else out[0]
        if isinstance(g, IfThenElse):
            return IfThenElse(walk(g.cond), walk(g.then), walk(g.els),
                              g.ann, g.pos, g.exhaustive)
        return g

    return walk(goal)


def _is_ref_test(cond, var) -> bool:
    from .terms import Atom
    return (isinstance(cond, Call) and cond.name == "tagof"
            and len(cond.args) == 2 and cond.args[0].name == var
            and isinstance(cond.args[1], Atom) and cond.args[1].name == "ref")


def emucomp(machine: MachineDef, opts: OptionSet) -> EmulatorIR:
    """Build the emulator block graph for a machine definition under the
    given code-generation options."""
    if any(i.opcode is None for i in machine.instructions.values()):
        from .assembler import assign_opcodes
        machine = assign_opcodes(machine.clone())

    emc = _EmuCompiler(machine, opts)
    g = emc.g
    emc.advance_cache = {}

    # dispatch scaffolding
    if opts.rw:
        entry = g.new()
        emc.dispatch_entry = entry
        emc.switch_read = g.new()
        emc.switch_write = g.new()
        switches = [emc.switch_read, emc.switch_write]
        g.seal(entry, TBranch(EPrim("read_mode"), emc.switch_read,
                              emc.switch_write))
    else:
        entry = g.new()
        emc.dispatch_entry = entry
        switches = [entry]

    bad = g.new()
    g.seal(bad, TStop("illegal"))
    fail_entry = g.new()
    fail_restore = g.new()
    fail_stop = g.new()
    g.seal(fail_entry, TBranch(EPrim("has_choice"), fail_restore, fail_stop))
    g.emit(SPrim("fail_restore", []), fail_restore)
    g.seal(fail_restore, TJump(emc.dispatch_for("read")))
    g.seal(fail_stop, TStop("fail"))

    # allocate an entry block per instruction (and per mode variant)
    variants: dict = {}
    for name, ins in machine.instructions.items():
        if opts.rw and emc.is_mode_dependent(ins):
            variants[name] = {"read": g.new(), "write": g.new()}
        else:
            variants[name] = {"shared": g.new()}
    emc.ins_blocks = {(n, v): b for n, vs in variants.items()
                      for v, b in vs.items()}

    # dispatch switch cases
    for si, sw in enumerate(switches):
        swmode = None if not opts.rw else ("read" if si == 0 else "write")
        cases = []
        for name, ins in sorted(machine.instructions.items(),
                                key=lambda kv: kv[1].opcode):
            vs = variants[name]
            blk = vs.get("shared")
            if blk is None:
                blk = vs[swmode]
            cases.append((ins.opcode, blk))
        g.emit(SPrim("count_dispatch", []), sw)
        g.seal(sw, TSwitch(EPrim("opcode"), cases, bad))

    # compile instruction bodies
    for name, ins in machine.instructions.items():
        before = len(g)
        for variant, blk in variants[name].items():
            _compile_instruction(emc, ins, variant, blk, fail_entry)
        emc.ins_block_counts[name] = len(g) - before + len(variants[name])

    # helper predicates reachable from the compiled bodies
    helpers = _reachable_helpers(machine)
    facts = machine.facts
    hooks = _HelperHooks(emc)
    for key in helpers:
        pred = machine.program.predicates[key]
        pcomp(machine.program, facts, pred, emc.unit, hooks, opts)

    emu = IRFunc("emu", [], [], "emu", g, entry, dict(emc.emu_locals))
    protected = set(emc.ins_blocks.values()) | set(switches) | {
        entry, fail_entry}
    merge_straightline(g, protected)
    g.check()
    for fn in emc.unit.funcs.values():
        merge_straightline(fn.graph, {fn.entry})
    emc.unit.add(emu)
    return EmulatorIR(machine, opts, emc.unit, emu, entry, switches,
                      fail_entry, emc.ins_blocks, emc.ins_block_counts)


def _operand_offsets(kinds) -> list:
    return list(range(1, 1 + len(kinds)))


def _width_expr(ins):
    w = ins.fixed_width()
    if w is not None:
        return ELit(w)
    return EBin("+", ELit(2), EOperand(1))


def _compile_instruction(emc: _EmuCompiler, ins, variant, blk, fail_entry):
    machine = emc.machine
    opts = emc.opts
    prog = machine.program

    if opts.ur and ins.merged_from and isinstance(ins.unfold, int):
        if _compile_partial_unfold(emc, ins, variant, blk, fail_entry):
            return

    pred = prog.predicates[(ins.base, ins.arity)]
    body = copy.deepcopy(pred.body)
    if opts.cc:
        body = _cc_rewrite(body)

    accesses = {}
    for hv, kind, off in zip(pred.headvars, ins.kinds, _operand_offsets(ins.kinds)):
        accesses[hv] = OperandAccess(hv, kind, off)
    hooks = _EmuHooks(emc, ins.name, accesses, _width_expr(ins), variant)
    prefix = f"i{ins.opcode}{variant[0]}_"
    gc = GoalCompiler(prog, machine.facts, pred, emc.g, hooks, opts, emc.unit,
                      prefix=prefix)
    g = emc.g
    done = g.new()
    entry_mode = variant if variant in ("read", "write") else None
    eta = {"s": done, "f": fail_entry, "fi": fail_entry}
    exit_mode = gc.gcomp(body, eta, blk, entry_mode)
    # implicit next-instruction on fallthrough success
    if not g.sealed(done):
        g.emit(SPrim("set_p", [EBin("+", EPrim("preg"), hooks.width)]), done)
        g.seal(done, TJump(emc.dispatch_for(exit_mode)))
    _register_ins_locals(emc, pred, gc, prefix)


def _register_ins_locals(emc, pred, gc: GoalCompiler, prefix: str) -> None:
    from .dialect.syntax import goal_vars
    emc.emu_locals.update(gc.extra_locals)
    headset = set(pred.headvars)
    for v in goal_vars(pred.body):
        if v in headset:
            continue
        rm = emc.machine.facts.refmodes.get((pred.key, v))
        if rm is not None:
            emc.emu_locals[prefix + v] = (rm, "tagged")


def _compile_partial_unfold(emc, ins, variant, blk, fail_entry) -> bool:
    """Honor an unfold spec k: inline components 1..k, then jump into the
    shared code of the remaining suffix (adjusting P so the suffix reads
    its operands at the right offsets).  Falls back to full unfolding when
    the suffix is not itself an instruction entry."""
    k = ins.unfold
    seq = ins.merged_from
    if not (isinstance(k, int) and 1 <= k < len(seq)):
        return False
    suffix = merged_name(seq[k:])
    if suffix not in emc.machine.instructions:
        return False
    target = (emc.ins_blocks.get((suffix, variant))
              or emc.ins_blocks.get((suffix, "shared")))
    if target is None:
        return False
    machine, prog, g = emc.machine, emc.machine.program, emc.g

    prefix_ops = 0
    cur = blk
    entry_mode = variant if variant in ("read", "write") else None
    mode = entry_mode
    for ci, comp in enumerate(seq[:k]):
        cins = machine.instructions[comp]
        pred = prog.predicates[(cins.base, cins.arity)]
        body = copy.deepcopy(pred.body)
        if emc.opts.cc:
            body = _cc_rewrite(body)
        accesses = {}
        offs = list(range(1 + prefix_ops, 1 + prefix_ops + len(cins.kinds)))
        for hv, kind, off in zip(pred.headvars, cins.kinds, offs):
            accesses[hv] = OperandAccess(hv, kind, off)
        hooks = _EmuHooks(emc, ins.name, accesses, _width_expr(ins), variant)
        prefix = f"i{ins.opcode}{variant[0]}c{ci}_"
        gc = GoalCompiler(prog, machine.facts, pred, g, hooks, emc.opts,
                          emc.unit, prefix=prefix)
        nxt = g.new()
        mode = gc.gcomp(body, {"s": nxt, "f": fail_entry, "fi": fail_entry},
                        cur, mode)
        _register_ins_locals(emc, pred, gc, prefix)
        cur = nxt
        prefix_ops += len(cins.kinds)
    g.emit(SPrim("set_p", [EBin("+", EPrim("preg"), ELit(prefix_ops))]), cur)
    g.seal(cur, TJump(target))
    return True


def _reachable_helpers(machine: MachineDef) -> list:
    prog = machine.program
    roots = set()
    for ins in machine.instructions.values():
        pred = prog.predicates[(ins.base, ins.arity)]
        for gl in leaf_goals(pred.body):
            if isinstance(gl, Call) and gl.name not in PRIMS_BY_NAME \
                    and gl.name not in CONTROL_GOALS:
                roots.add((gl.name, len(gl.args)))
    seen: set = set()
    order: list = []

    def visit(key):
        if key in seen:
            return
        seen.add(key)
        pred = prog.predicates.get(key)
        if pred is None:
            raise error(NOPOS, "emugen", f"missing helper {key[0]}/{key[1]}")
        for gl in leaf_goals(pred.body):
            if isinstance(gl, Call) and gl.name not in PRIMS_BY_NAME \
                    and gl.name not in CONTROL_GOALS:
                visit((gl.name, len(gl.args)))
        order.append(key)

    for r in sorted(roots):
        visit(r)
    return order
