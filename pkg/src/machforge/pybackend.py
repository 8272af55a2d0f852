"""In-process execution backend: transpiles the IR to Python and runs it.

The emulator function becomes a set of per-block closures driven by a
trampoline (each block returns the next block), sharing machine
registers through the enclosing scope; helper predicates become plain
functions with a small structured dispatch loop.  Counters (dispatches,
heap allocations, trail pushes, choice points) are exact and
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .diagnostics import InternalError
from .ir import (
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
    SPrim,
    TBranch,
    TJump,
    TRetBool,
    TRetVoid,
    TStop,
    TSwitch,
)
from .machdef import (
    DEFAULT_LIMITS,
    FRAME_BASE,
    SCRATCH_BASE,
    TAG_ATM,
    TAG_LST,
    TAG_NUM,
    TAG_REF,
    TAG_STR,
    BUILTIN_TABLE,
    Limits,
    functor_parts,
    num_value,
)

REGISTERS = ("P", "CP", "E", "FT", "H", "S", "MODE", "B0",
             "NDISP", "NHEAP", "NTRAIL", "NCP", "NSOL", "STATUS", "SP")

PRIM_WRITES = {
    "set_p": ["P"], "set_cp": ["CP"],
    "count_dispatch": ["NDISP"],
    "heap_alloc_var": ["H", "NHEAP"], "heap_push": ["H", "NHEAP"],
    "heap_push_var": ["H", "NHEAP"], "heap_push_functor": ["H", "NHEAP"],
    "heap_top_lst": [],
    "set_s_str": ["S", "MODE"], "set_s_lst": ["S", "MODE"],
    "set_write_mode": ["MODE"], "s_read": ["S"], "s_skip": ["S"],
    "trail_push": ["NTRAIL"],
    "push_frame": ["E", "FT"], "pop_frame": ["E", "FT", "CP"],
    "push_choice": ["NCP"], "set_choice_alt": [], "pop_choice": [],
    "cut_to_b0": [], "set_b0": ["B0"],
    "record_solution": ["NSOL"],
    "fail_restore": ["P", "CP", "E", "FT", "H", "B0", "MODE"],
    "call_bltin2d": [], "call_bltin3d": [],
}


class StepsExceeded(Exception):
    pass


class AreaOverflow(Exception):
    def __init__(self, area):
        self.area = area
        super().__init__(f"{area} overflow")


class Trap(Exception):
    """A deterministic predicate failed; its assertions were wrong."""


class IllegalOpcode(Exception):
    pass


# ---------------------------------------------------------------------------
# Expressions / places


def _expr(e) -> str:
    if isinstance(e, ELit):
        return str(e.value)
    if isinstance(e, EAccess):
        if e.kind == "val_r":
            return e.var
        if e.kind == "mutval_r":
            return f"mem[{e.var}]"
        raise InternalError(f"access kind {e.kind} not lowerable here")
    if isinstance(e, EOperand):
        return f"code[P + {e.offset}]"
    if isinstance(e, EMem):
        return f"mem[{_expr(e.addr)}]"
    if isinstance(e, EBin):
        return f"({_expr(e.a)} {e.op} {_expr(e.b)})"
    if isinstance(e, EPrim):
        return _prim_expr(e)
    raise InternalError(f"cannot lower expression {e!r}")


def _prim_expr(e: EPrim) -> str:
    a = [_expr(x) for x in e.args]
    n = e.name
    if n == "tag":
        return f"({a[0]} & 7)"
    if n == "tagval":
        return f"({a[0]} >> 3)"
    if n == "pool":
        return f"pool[{a[0]}]"
    if n == "xreg_addr":
        return f"{a[0]}"
    if n == "yreg_addr":
        return f"(E + 2 + {a[0]})"
    if n == "opn_base":
        return f"(P + {a[0]})"
    if n == "preg":
        return "P"
    if n == "cpreg":
        return "CP"
    if n == "opcode":
        return "code[P]"
    if n == "read_mode":
        return "(MODE == 0)"
    if n == "has_choice":
        return "(len(cps) > 0)"
    if n == "functor_is":
        return f"(mem[{a[0]} >> 3] == {a[1]})"
    if n == "functor_arity":
        return f"(({a[0]} >> 3) & 4095)"
    if n == "mut_offset":
        return f"({a[0]} + {a[1]})"
    if n == "older_cell":
        return f"(({a[0]} >> 3) < ({a[1]} >> 3))"
    if n == "trail_cond":
        return f"(bool(cps) and ({a[0]} >> 3) < cps[-1][3])"
    if n == "more_solutions":
        return "(NSOL < MAXSOL)"
    if n == "iadd":
        return f"({a[0]} + {a[1]})"
    if n == "isub":
        return f"({a[0]} - {a[1]})"
    if n == "imul":
        return f"({a[0]} * {a[1]})"
    if n == "opn_array_len":
        return f"code[{a[0]}]"
    if n == "opn_array_xreg":
        return f"code[{a[0]} + 1 + {a[1]}]"
    if n == "call_bltin1s":
        return f"BLT[{a[0]}]({a[1]})"
    if n == "call_bltin2s":
        return f"BLT[{a[0]}]({a[1]}, {a[2]})"
    raise InternalError(f"no expression lowering for primitive {e.name}")


def _place(p) -> str:
    if isinstance(p, PAccess):
        if p.kind == "val_l":
            return p.var
        if p.kind == "mutval_l":
            return f"mem[{p.var}]"
        raise InternalError(f"place kind {p.kind}")
    if isinstance(p, PMem):
        return f"mem[{_expr(p.addr)}]"
    raise InternalError(f"cannot lower place {p!r}")


def _written(p) -> list:
    if isinstance(p, PAccess) and p.kind == "val_l":
        return [p.var]
    return []


# ---------------------------------------------------------------------------
# Statements


def _prim_stmt(s: SPrim, out: list) -> list:
    a = [_expr(x) for x in s.args]
    o = [_place(p) for p in s.outs]
    n = s.name
    w = out.append
    if n == "set_p":
        w(f"P = {a[0]}")
    elif n == "set_cp":
        w(f"CP = {a[0]}")
    elif n == "count_dispatch":
        w("NDISP += 1")
        w("if NDISP > STEP_LIMIT: raise StepsExceeded()")
    elif n == "heap_alloc_var":
        w("if H >= MEM_END: raise AreaOverflow('heap')")
        w("mem[H] = H << 3")
        w(f"{o[0]} = H << 3")
        w("H += 1; NHEAP += 1")
    elif n == "heap_push":
        w("if H >= MEM_END: raise AreaOverflow('heap')")
        w(f"mem[H] = {a[0]}")
        w("H += 1; NHEAP += 1")
    elif n == "heap_push_var":
        w("if H >= MEM_END: raise AreaOverflow('heap')")
        w("mem[H] = H << 3")
        w("H += 1; NHEAP += 1")
    elif n == "heap_push_functor":
        w("if H >= MEM_END: raise AreaOverflow('heap')")
        w(f"mem[H] = {a[0]}")
        w(f"{o[0]} = (H << 3) | 1")
        w("H += 1; NHEAP += 1")
    elif n == "heap_top_lst":
        w(f"{o[0]} = (H << 3) | 2")
    elif n == "set_s_str":
        w(f"S = ({a[0]} >> 3) + 1")
        w("MODE = 0")
    elif n == "set_s_lst":
        w(f"S = {a[0]} >> 3")
        w("MODE = 0")
    elif n == "set_write_mode":
        w("MODE = 1")
    elif n == "s_read":
        w(f"{o[0]} = mem[S]")
        w("S += 1")
    elif n == "s_skip":
        w("S += 1")
    elif n == "trail_push":
        w("if len(trail) >= TRAIL_MAX: raise AreaOverflow('trail')")
        w(f"trail.append({a[0]} >> 3)")
        w("NTRAIL += 1")
    elif n == "push_frame":
        w(f"_n = {a[0]}")
        # frames below the newest choice point's mark are protected;
        # allocate above it so backtracking finds them intact
        w("_base = FT")
        w("if cps and cps[-1][5] > _base: _base = cps[-1][5]")
        w("if _base + 2 + _n > FRAME_END: raise AreaOverflow('frame')")
        w("mem[_base] = E; mem[_base + 1] = CP")
        w("E = _base; FT = _base + 2 + _n")
    elif n == "pop_frame":
        w("_e = E")
        w("FT = _e; CP = mem[_e + 1]; E = mem[_e]")
    elif n == "push_choice":
        w("if len(cps) >= CHOICE_MAX: raise AreaOverflow('choice')")
        w(f"cps.append([mem[0:{a[0]}], E, CP, H, len(trail), FT, {a[1]}, B0])")
        w("NCP += 1")
    elif n == "set_choice_alt":
        w(f"cps[-1][6] = {a[0]}")
    elif n == "pop_choice":
        w("cps.pop()")
    elif n == "cut_to_b0":
        w("del cps[B0:]")
    elif n == "set_b0":
        w("B0 = len(cps)")
    elif n == "record_solution":
        w(f"NSOL += 1")
        w(f"SOLS.append(_render_solution({a[0]}))")
    elif n == "fail_restore":
        w("_c = cps[-1]")
        w("_xs = _c[0]")
        w("mem[0:len(_xs)] = _xs")
        w("E = _c[1]; CP = _c[2]; H = _c[3]")
        w("_tm = _c[4]")
        w("for _a in trail[_tm:]: mem[_a] = _a << 3")
        w("del trail[_tm:]")
        w("FT = _c[5]; P = _c[6]; B0 = _c[7]; MODE = 0")
    elif n == "call_bltin2d":
        w(f"{o[0]} = BLT[{a[0]}]({a[1]})")
    elif n == "call_bltin3d":
        w(f"{o[0]} = BLT[{a[0]}]({a[1]}, {a[2]})")
    else:
        raise InternalError(f"no statement lowering for primitive {n}")
    return out


def _call_stmt(s: SCall, out: list) -> None:
    args = ", ".join(_expr(x) for x in s.ins)
    targets = []
    if s.ok is not None:
        targets.append(s.ok)
    targets += [v for (v, _rm) in s.outs]
    call = f"_f_{s.name}({args})"
    if not targets:
        out.append(call)
    elif len(targets) == 1:
        out.append(f"{targets[0]} = {call}")
    else:
        out.append(f"{', '.join(targets)} = {call}")


def _stmt(s, out: list, written: set) -> None:
    if isinstance(s, SAssign):
        out.append(f"{_place(s.place)} = {_expr(s.expr)}")
        written.update(_written(s.place))
    elif isinstance(s, SPrim):
        _prim_stmt(s, out)
        written.update(PRIM_WRITES.get(s.name, ()))
        for p in s.outs:
            written.update(_written(p))
    elif isinstance(s, SCall):
        _call_stmt(s, out)
        if s.ok:
            written.add(s.ok)
        written.update(v for (v, _rm) in s.outs)
    else:
        raise InternalError(f"cannot lower statement {s!r}")


# ---------------------------------------------------------------------------
# Function emission


def _emit_helper(fn: IRFunc, lines: list, switch_tables: list) -> None:
    """Helper predicate as a structured function with a block loop."""
    params = [p[0] for p in fn.params if p[0] not in fn.outs]
    lines.append(f"    def _f_{fn.name}({', '.join(params)}):")
    localnames = set(fn.locals) | set(fn.outs)
    scratch = [v for v, (rm, _t) in fn.locals.items() if rm == "0m"]
    regs_written = _function_written(fn)
    if scratch:
        regs_written.add("SP")
    if regs_written:
        lines.append(f"        nonlocal {', '.join(sorted(regs_written))}")
    for v in sorted(localnames):
        lines.append(f"        {v} = 0")
    if scratch:
        lines.append("        _sp0 = SP")
        for v in sorted(scratch):
            lines.append(f"        {v} = SP; SP += 1")
    rets = _return_exprs(fn, bool(scratch))
    lines.append("        _b = %d" % fn.entry)
    lines.append("        while True:")
    g = fn.graph
    reach = _reachable(fn)
    first = True
    for b in sorted(reach):
        kw = "if" if first else "elif"
        first = False
        lines.append(f"            {kw} _b == {b}:")
        body: list = []
        written: set = set()
        for s in g[b].stmts:
            _stmt(s, body, written)
        term = g[b].term
        if isinstance(term, TJump):
            body.append(f"_b = {term.dst}; continue")
        elif isinstance(term, TBranch):
            body.append(f"_b = {term.t} if {_expr(term.cond)} else {term.f}")
            body.append("continue")
        elif isinstance(term, TSwitch):
            tbl = _switch_table(term, switch_tables)
            body.append(f"_b = {tbl}[{_expr(term.expr)}]; continue")
        elif isinstance(term, TRetVoid):
            body.extend(rets["void"])
        elif isinstance(term, TRetBool):
            body.extend(rets["true" if term.value else "false"])
        elif isinstance(term, TStop):
            body.append("raise Trap()")
        else:
            raise InternalError(f"bad terminator {term!r}")
        for ln in body:
            lines.append("                " + ln)


def _return_exprs(fn: IRFunc, has_scratch: bool) -> dict:
    outs = list(fn.outs)
    pre = ["SP = _sp0"] if has_scratch else []

    def ret(v):
        return pre + [f"return {v}"]

    if fn.detclass == "det":
        if not outs:
            return {"void": pre + ["return"]}
        if len(outs) == 1:
            return {"void": ret(outs[0])}
        return {"void": ret("(" + ", ".join(outs) + ")")}
    zeros = ", ".join(["0"] * len(outs))
    if not outs:
        return {"true": ret("True"), "false": ret("False")}
    return {"true": ret("(True, " + ", ".join(outs) + ")"),
            "false": ret(f"(False, {zeros})")}


def _function_written(fn: IRFunc) -> set:
    """Enclosing-scope names a helper writes (registers only; its own
    locals and params are function-local)."""
    own = set(fn.locals) | {p[0] for p in fn.params}
    written: set = set()
    for b in range(len(fn.graph)):
        for s in fn.graph[b].stmts:
            tmp: list = []
            ws: set = set()
            try:
                _stmt(s, tmp, ws)
            except InternalError:
                continue
            written |= ws
    return {w for w in written if w in REGISTERS and w not in own}


def _reachable(fn: IRFunc) -> set:
    seen: set = set()
    stack = [fn.entry]
    g = fn.graph
    while stack:
        b = stack.pop()
        if b in seen:
            continue
        seen.add(b)
        stack.extend(g.successors(b))
    return seen


def _switch_size(term: TSwitch) -> int:
    # tag switches cover the whole tag space; dispatch switches the
    # whole (padded) opcode space so stray values hit the default
    hi = max(v for v, _ in term.cases) + 1
    if isinstance(term.expr, EPrim) and term.expr.name == "opcode":
        return max(hi, 512)
    return max(hi, 8)


def _switch_table(term: TSwitch, switch_tables: list) -> str:
    tbl = [term.default] * _switch_size(term)
    for v, d in term.cases:
        tbl[v] = d
    switch_tables.append(tbl)
    return f"_ST{len(switch_tables) - 1}"


def _emit_emu(fn: IRFunc, lines: list, fn_switches: list) -> None:
    """The emulator loop: one closure per block, trampoline-driven."""
    g = fn.graph
    reach = _reachable(fn)
    for b in sorted(reach):
        block = g[b]
        body: list = []
        written: set = set()
        for s in block.stmts:
            _stmt(s, body, written)
        term = block.term
        if isinstance(term, TJump):
            body.append(f"return _b{term.dst}")
        elif isinstance(term, TBranch):
            body.append(f"return _b{term.t} if {_expr(term.cond)} else _b{term.f}")
        elif isinstance(term, TSwitch):
            tbl = [term.default] * _switch_size(term)
            for v, d in term.cases:
                tbl[v] = d
            fn_switches.append((b, tbl))
            body.append(f"return _FSW{len(fn_switches) - 1}[{_expr(term.expr)}]")
        elif isinstance(term, TStop):
            body.append(f"STATUS = '{term.status}'")
            written.add("STATUS")
            body.append("return None")
        else:
            raise InternalError(f"emulator block with terminator {term!r}")
        lines.append(f"    def _b{b}():")
        nl = sorted(written)
        if nl:
            lines.append(f"        nonlocal {', '.join(nl)}")
        for ln in body:
            lines.append("        " + ln)


# ---------------------------------------------------------------------------
# Module assembly


def emit_python(emu_ir) -> str:
    """Render the emulator IR as the source of a ``make_emu(rt)`` module."""
    lines = [
        "def make_emu(rt):",
        "    mem = rt.mem",
        "    code = rt.code",
        "    pool = rt.pool",
        "    trail = rt.trail",
        "    cps = rt.cps",
        "    atoms = rt.atoms",
        "    BLT = rt.blt",
        "    SOLS = rt.solutions",
        "    MEM_END = rt.mem_end",
        "    FRAME_END = rt.frame_end",
        "    TRAIL_MAX = rt.trail_max",
        "    CHOICE_MAX = rt.choice_max",
        "    STEP_LIMIT = rt.step_limit",
        "    MAXSOL = rt.maxsol",
        "    VARNAMES = rt.varnames",
        "    P = 0; CP = 0; E = %d; FT = %d; H = rt.heap_base" % (FRAME_BASE, FRAME_BASE),
        "    S = 0; MODE = 0; B0 = 0; SP = %d" % SCRATCH_BASE,
        "    NDISP = 0; NHEAP = 0; NTRAIL = 0; NCP = 0; NSOL = 0",
        "    STATUS = ''",
        "    _render_solution = rt.make_renderer(lambda: (E, VARNAMES))",
    ]
    emu = emu_ir.unit.funcs["emu"]
    for name, (rm, _ty) in sorted(emu.locals.items()):
        if rm == "0m":
            lines.append(f"    {name} = SP; SP += 1")
        else:
            lines.append(f"    {name} = 0")

    switch_tables: list = []
    for name in emu_ir.unit.order:
        fn = emu_ir.unit.funcs[name]
        if fn.detclass != "emu":
            _emit_helper(fn, lines, switch_tables)
    fn_switches: list = []
    _emit_emu(emu, lines, fn_switches)

    for i, tbl in enumerate(switch_tables):
        lines.append(f"    _ST{i} = {tbl!r}")
    for i, (b, tbl) in enumerate(fn_switches):
        names = ", ".join("_b%d" % d if d is not None else "None" for d in tbl)
        lines.append(f"    _FSW{i} = ({names},)")

    entry = emu.entry
    lines += [
        "    def run(start, maxsol=None):",
        "        nonlocal P, MAXSOL, STATUS, NSOL",
        "        P = start",
        "        if maxsol is not None: MAXSOL = maxsol",
        "        b = _b%d" % entry,
        "        try:",
        "            while b is not None:",
        "                b = b()",
        "        except IndexError:",
        "            raise IllegalOpcode(P)",
        "        rt.counters = {'dispatches': NDISP, 'heap_allocs': NHEAP,",
        "                       'trail_pushes': NTRAIL, 'choice_points': NCP,",
        "                       'solutions': NSOL}",
        "        return STATUS",
        "    return run",
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Runtime


@dataclass
class PyRT:
    """Shared mutable state of one emulator run."""

    code: list
    pool: list
    atoms: list
    limits: Limits = DEFAULT_LIMITS
    maxsol: int = 1
    varnames: list = field(default_factory=list)

    def __post_init__(self):
        self.mem = [0] * self.limits.mem_words
        self.trail: list = []
        self.cps: list = []
        self.solutions: list = []
        self.counters: dict = {}
        self.heap_base = self.limits.heap_base
        self.mem_end = self.limits.mem_words
        self.frame_end = self.limits.heap_base
        self.trail_max = self.limits.trail_words
        self.choice_max = self.limits.choice_slots
        self.step_limit = self.limits.step_budget
        self.blt = make_builtins(self.mem)

    def make_renderer(self, get_env):
        def render_solution(n):
            e, varnames = get_env()
            return render_bindings(self.mem, self.atoms, e, n, varnames)
        return render_solution


def make_builtins(mem):
    """Builtin implementations indexed by id; arguments are tagged words
    (dereferenced here), results are tagged words or booleans."""
    from .machdef import mknum

    def deref(w):
        while w & 7 == TAG_REF:
            nxt = mem[w >> 3]
            if nxt == w:
                return w
            w = nxt
        return w

    def num(w):
        w = deref(w)
        if w & 7 != TAG_NUM:
            raise Trap(f"arithmetic on non-number word {w}")
        return num_value(w)

    def idiv(a, b):
        x, y = num(a), num(b)
        if y == 0:
            raise Trap("division by zero")
        q = abs(x) // abs(y)
        return mknum(-q if (x < 0) != (y < 0) else q)

    def imod(a, b):
        # floored modulus (sign of the divisor)
        x, y = num(a), num(b)
        if y == 0:
            raise Trap("division by zero")
        return mknum(x - y * (x // y))

    tbl = [None] * len(BUILTIN_TABLE)
    tbl[0] = lambda a, b: num(a) < num(b)
    tbl[1] = lambda a, b: num(a) <= num(b)
    tbl[2] = lambda a, b: num(a) > num(b)
    tbl[3] = lambda a, b: num(a) >= num(b)
    tbl[4] = lambda a, b: num(a) == num(b)
    tbl[5] = lambda a, b: num(a) != num(b)
    tbl[6] = lambda a, b: mknum(num(a) + num(b))
    tbl[7] = lambda a, b: mknum(num(a) - num(b))
    tbl[8] = lambda a, b: mknum(num(a) * num(b))
    tbl[9] = idiv
    tbl[10] = imod
    tbl[11] = lambda a: mknum(-num(a))
    tbl[12] = lambda a: (deref(a) & 7) == TAG_NUM
    return tbl


# ---------------------------------------------------------------------------
# Heap-term rendering (must match the C runtime byte for byte)


def render_term(mem, atoms, w, varnames=None) -> str:
    out: list = []
    _render(mem, atoms, w, out, varnames if varnames is not None else {})
    return "".join(out)


def _render(mem, atoms, w, out, varmap, depth=0):
    if depth > 10_000:
        raise Trap("term too deep to print")
    while w & 7 == TAG_REF:
        nxt = mem[w >> 3]
        if nxt == w:
            a = w >> 3
            if a not in varmap:
                varmap[a] = f"_{len(varmap)}"
            out.append(varmap[a])
            return
        w = nxt
    t = w & 7
    if t == TAG_NUM:
        out.append(str(num_value(w)))
    elif t == TAG_ATM:
        ai, ar = functor_parts(w)
        out.append(atoms[ai])
    elif t == TAG_STR:
        f = mem[w >> 3]
        ai, ar = functor_parts(f)
        out.append(atoms[ai])
        out.append("(")
        for i in range(ar):
            if i:
                out.append(",")
            _render(mem, atoms, mem[(w >> 3) + 1 + i], out, varmap, depth + 1)
        out.append(")")
    elif t == TAG_LST:
        out.append("[")
        first = True
        while True:
            base = w >> 3
            if not first:
                out.append(",")
            _render(mem, atoms, mem[base], out, varmap, depth + 1)
            first = False
            tail = mem[base + 1]
            while tail & 7 == TAG_REF:
                nxt = mem[tail >> 3]
                if nxt == tail:
                    break
                tail = nxt
            if tail & 7 == TAG_LST:
                w = tail
                continue
            if tail & 7 == TAG_ATM and atoms[functor_parts(tail)[0]] == "[]" \
                    and functor_parts(tail)[1] == 0:
                break
            out.append("|")
            _render(mem, atoms, tail, out, varmap, depth + 1)
            break
        out.append("]")
    else:
        raise Trap(f"cannot render word {w}")


def render_bindings(mem, atoms, e, n, varnames) -> str:
    if n == 0:
        return "true"
    varmap: dict = {}
    parts = []
    for i in range(n):
        name = varnames[i] if i < len(varnames) else f"Y{i}"
        out: list = []
        _render(mem, atoms, mem[e + 2 + i], out, varmap)
        parts.append(f"{name} = {''.join(out)}")
    return ", ".join(parts)


# ---------------------------------------------------------------------------
# Public entry: evaluate an emulator IR over an image


@dataclass
class Outcome:
    status: str
    solutions: list
    counters: dict
    rt: object = None


def emit_predicates(unit) -> str:
    """Standalone module for a unit of compiled predicates (no machine
    state beyond a scratch area for local mutables)."""
    lines = [
        "def make_module():",
        "    mem = [0] * 65536",
        "    SP = 0",
    ]
    switch_tables: list = []
    for name in unit.order:
        fn = unit.funcs[name]
        _emit_helper(fn, lines, switch_tables)
    for i, tbl in enumerate(switch_tables):
        lines.append(f"    _ST{i} = {tbl!r}")
    pairs = ", ".join(f"'{n}': _f_{n}" for n in unit.order)
    lines.append("    return {%s}" % pairs)
    return "\n".join(lines) + "\n"


def compile_predicates(unit) -> dict:
    """exec the generated predicate module; returns name -> callable."""
    src = emit_predicates(unit)
    ns = {"Trap": Trap}
    exec(compile(src, "<predicates>", "exec"), ns)
    return ns["make_module"]()


_COMPILED_CACHE: dict = {}


def compile_emulator(emu_ir):
    """exec() the generated module once per emulator IR."""
    key = id(emu_ir)
    fn = _COMPILED_CACHE.get(key)
    if fn is None:
        src = emit_python(emu_ir)
        ns = {
            "StepsExceeded": StepsExceeded,
            "AreaOverflow": AreaOverflow,
            "Trap": Trap,
            "IllegalOpcode": IllegalOpcode,
        }
        exec(compile(src, f"<emu-{emu_ir.opts.bits}>", "exec"), ns)
        fn = ns["make_emu"]
        _COMPILED_CACHE[key] = fn
    return fn


def eval_ir(emu_ir, image, max_solutions=1, limits: Limits = DEFAULT_LIMITS) -> Outcome:
    """Execute a bytecode image on the compiled emulator IR."""
    make_emu = compile_emulator(emu_ir)
    query = image.query or {}
    entry = query.get("entry")
    if entry is None:
        raise InternalError("image carries no query entry")
    rt = PyRT(list(image.code), list(image.pool), list(image.atoms),
              limits=limits, maxsol=max_solutions,
              varnames=list(query.get("varnames", [])))
    run = make_emu(rt)
    try:
        status = run(image.entries[entry])
    except StepsExceeded:
        status = "steps"
        rt.counters = {}
    except AreaOverflow as e:
        status = f"overflow:{e.area}"
        rt.counters = {}
    return Outcome(status, rt.solutions, rt.counters, rt)
