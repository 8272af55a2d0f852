"""Low-level source emitter: renders the emulator IR as one C99
translation unit against the runtime shim (machrt.h).

The dispatch loop is a switch over opcodes, instruction code becomes
labels and gotos, helper predicates become static functions whose
argument shapes follow the reference-mode table (values for in
arguments, pointers for out arguments).  Output is deterministic byte
for byte for fixed inputs.
"""

from __future__ import annotations

from .codegen import flatten
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

STOP_CODES = {"halt": "MACH_HALT", "fail": "MACH_FAIL",
              "illegal": "MACH_ILLEGAL", "unreachable": "MACH_TRAP"}


def _ctype(refmode: str) -> str:
    return {"0v": "tagged_t", "0m": "tagged_t", "1v": "tagged_t *",
            "1m": "tagged_t *", "2m": "tagged_t **"}[refmode]


def _access_expr(e: EAccess) -> str:
    v = e.var
    rm, k = e.refmode, e.kind
    table = {
        ("0v", "ref"): f"&{v}", ("0v", "val_r"): v,
        ("1v", "ref"): v, ("1v", "val_r"): f"*{v}",
        ("0m", "val_r"): f"&{v}", ("0m", "mutval_r"): v,
        ("1m", "ref"): f"&{v}", ("1m", "val_r"): v, ("1m", "mutval_r"): f"*{v}",
        ("2m", "ref"): v, ("2m", "val_r"): f"*{v}", ("2m", "mutval_r"): f"**{v}",
    }
    try:
        return f"({table[(rm, k)]})"
    except KeyError:
        raise InternalError(f"no C lowering for access ({rm}, {k})")


def _access_place(p: PAccess) -> str:
    v = p.var
    table = {
        ("0v", "val_l"): v,
        ("1v", "val_l"): f"*{v}",
        ("0m", "mutval_l"): v,
        ("1m", "val_l"): v, ("1m", "mutval_l"): f"*{v}",
        ("2m", "val_l"): f"*{v}", ("2m", "mutval_l"): f"**{v}",
    }
    try:
        return table[(p.refmode, p.kind)]
    except KeyError:
        raise InternalError(f"no C lowering for place ({p.refmode}, {p.kind})")


def _expr(e) -> str:
    if isinstance(e, ELit):
        return f"{e.value}u" if e.value >= 0 else f"({e.value})"
    if isinstance(e, EAccess):
        return _access_expr(e)
    if isinstance(e, EOperand):
        return f"code[g.p + {e.offset}]"
    if isinstance(e, EMem):
        return f"(*({_expr(e.addr)}))"
    if isinstance(e, EBin):
        op = e.op
        return f"({_expr(e.a)} {op} {_expr(e.b)})"
    if isinstance(e, EPrim):
        return _prim_expr(e)
    raise InternalError(f"cannot lower {e!r}")


def _prim_expr(e: EPrim) -> str:
    a = [_expr(x) for x in e.args]
    n = e.name
    if n == "tag":
        return f"({a[0]} & 7u)"
    if n == "tagval":
        return f"(mach_mem + ({a[0]} >> 3))"
    if n == "pool":
        return f"pool[{a[0]}]"
    if n == "xreg_addr":
        return f"(mach_mem + {a[0]})"
    if n == "yreg_addr":
        return f"(mach_mem + g.e + 2 + {a[0]})"
    if n == "opn_base":
        return f"(g.p + {a[0]})"
    if n == "preg":
        return "g.p"
    if n == "cpreg":
        return "g.cp"
    if n == "opcode":
        return "code[g.p]"
    if n == "read_mode":
        return "(g.mode == 0)"
    if n == "has_choice":
        return "(g.ncp > 0)"
    if n == "functor_is":
        return f"(mach_mem[{a[0]} >> 3] == {a[1]})"
    if n == "functor_arity":
        return f"(({a[0]} >> 3) & 4095u)"
    if n == "mut_offset":
        return f"({a[0]} + {a[1]})"
    if n == "older_cell":
        return f"(({a[0]} >> 3) < ({a[1]} >> 3))"
    if n == "trail_cond":
        return f"(g.ncp > 0 && ({a[0]} >> 3) < g.cps[g.ncp - 1].h)"
    if n == "more_solutions":
        return "(g.nsol < g.maxsol)"
    if n == "iadd":
        return f"({a[0]} + {a[1]})"
    if n == "isub":
        return f"({a[0]} - {a[1]})"
    if n == "imul":
        return f"({a[0]} * {a[1]})"
    if n == "opn_array_len":
        return f"code[{a[0]}]"
    if n == "opn_array_xreg":
        return f"(mach_mem + code[{a[0]} + 1 + {a[1]}])"
    if n == "call_bltin1s":
        return f"rt_blt1s({a[0]}, {a[1]})"
    if n == "call_bltin2s":
        return f"rt_blt2s({a[0]}, {a[1]}, {a[2]})"
    raise InternalError(f"no C lowering for primitive {n}")


def _place(p) -> str:
    if isinstance(p, PAccess):
        return _access_place(p)
    if isinstance(p, PMem):
        return f"*({_expr(p.addr)})"
    raise InternalError(f"cannot lower place {p!r}")


def _prim_stmt(s: SPrim, w) -> None:
    a = [_expr(x) for x in s.args]
    o = [_place(p) for p in s.outs]
    n = s.name
    if n == "set_p":
        w(f"g.p = {a[0]};")
    elif n == "set_cp":
        w(f"g.cp = {a[0]};")
    elif n == "count_dispatch":
        w("g.ndisp++;")
        w("if (g.ndisp > g.step_limit) { rt_stop(MACH_STEPS); return; }")
    elif n == "heap_alloc_var":
        w("rt_check_heap();")
        w("mach_mem[g.h] = (tagged_t)g.h << 3;")
        w(f"{o[0]} = (tagged_t)g.h << 3;")
        w("g.h++; g.nheap++;")
    elif n == "heap_push":
        w("rt_check_heap();")
        w(f"mach_mem[g.h] = {a[0]};")
        w("g.h++; g.nheap++;")
    elif n == "heap_push_var":
        w("rt_check_heap();")
        w("mach_mem[g.h] = (tagged_t)g.h << 3;")
        w("g.h++; g.nheap++;")
    elif n == "heap_push_functor":
        w("rt_check_heap();")
        w(f"mach_mem[g.h] = {a[0]};")
        w(f"{o[0]} = ((tagged_t)g.h << 3) | 1u;")
        w("g.h++; g.nheap++;")
    elif n == "heap_top_lst":
        w(f"{o[0]} = ((tagged_t)g.h << 3) | 2u;")
    elif n == "set_s_str":
        w(f"g.s = ({a[0]} >> 3) + 1;")
        w("g.mode = 0;")
    elif n == "set_s_lst":
        w(f"g.s = {a[0]} >> 3;")
        w("g.mode = 0;")
    elif n == "set_write_mode":
        w("g.mode = 1;")
    elif n == "s_read":
        w(f"{o[0]} = mach_mem[g.s];")
        w("g.s++;")
    elif n == "s_skip":
        w("g.s++;")
    elif n == "trail_push":
        w(f"rt_trail_push({a[0]} >> 3);")
    elif n == "push_frame":
        w(f"rt_push_frame({a[0]});")
    elif n == "pop_frame":
        w("rt_pop_frame();")
    elif n == "push_choice":
        w(f"rt_push_choice({a[0]}, {a[1]});")
    elif n == "set_choice_alt":
        w(f"g.cps[g.ncp - 1].alt = {a[0]};")
    elif n == "pop_choice":
        w("rt_pop_choice();")
    elif n == "cut_to_b0":
        w("rt_cut_to_b0();")
    elif n == "set_b0":
        w("g.b0 = g.ncp;")
    elif n == "record_solution":
        w(f"rt_solution({a[0]});")
    elif n == "fail_restore":
        w("rt_fail_restore();")
    elif n == "call_bltin2d":
        w(f"{o[0]} = rt_blt2d({a[0]}, {a[1]});")
    elif n == "call_bltin3d":
        w(f"{o[0]} = rt_blt3d({a[0]}, {a[1]}, {a[2]});")
    else:
        raise InternalError(f"no C lowering for primitive statement {n}")


def _call_stmt(s: SCall, w) -> None:
    args = [_expr(x) for x in s.ins]
    for (v, rm) in s.outs:
        args.append(_access_expr(EAccess(v, rm, "ref")))
    call = f"f_{s.name}({', '.join(args)})"
    if s.ok is not None:
        w(f"{s.ok} = {call};")
    else:
        w(f"{call};")


def _stmts(block, w) -> None:
    for s in block.stmts:
        if isinstance(s, SAssign):
            w(f"{_place(s.place)} = {_expr(s.expr)};")
        elif isinstance(s, SPrim):
            _prim_stmt(s, w)
        elif isinstance(s, SCall):
            _call_stmt(s, w)
        else:
            raise InternalError(f"cannot lower {s!r}")


def _sig(fn: IRFunc) -> str:
    parts = []
    for (name, rm, _ty) in fn.params:
        if name in fn.outs:
            out_t = {"1v": "tagged_t *", "2m": "tagged_t **"}.get(rm)
            if out_t is None:
                raise InternalError(f"out-param {name} with refmode {rm}")
            parts.append(f"{out_t}{name}")
        else:
            parts.append(f"{_ctype(rm)} {name}".replace("* ", "*"))
    ret = "bool" if fn.detclass == "semidet" else "void"
    return f"static {ret} f_{fn.name}({', '.join(parts) if parts else 'void'})"


def _emit_function(fn: IRFunc, out: list) -> None:
    flat = flatten(fn)
    out.append(_sig(fn) + " {")
    for name, (rm, _ty) in sorted(fn.locals.items()):
        out.append(f"    {_ctype(rm)} {name} = 0;".replace("* ", "*"))
    g = fn.graph
    pos = {b: i for i, b in enumerate(flat.order)}

    def w(line):
        out.append("    " + line)

    for i, b in enumerate(flat.order):
        if b in flat.labels:
            out.append(f"b{b}:")
        _stmts(g[b], w)
        t = g[b].term
        if isinstance(t, TJump):
            if pos.get(t.dst) != i + 1:
                w(f"goto b{t.dst};")
        elif isinstance(t, TBranch):
            w(f"if ({_expr(t.cond)}) goto b{t.t}; else goto b{t.f};")
        elif isinstance(t, TSwitch):
            w(f"switch ({_expr(t.expr)}) {{")
            for v, d in t.cases:
                w(f"case {v}: goto b{d};")
            if t.default is not None:
                w(f"default: goto b{t.default};")
            w("}")
        elif isinstance(t, TRetVoid):
            w("return;")
        elif isinstance(t, TRetBool):
            w(f"return {'true' if t.value else 'false'};")
        elif isinstance(t, TStop):
            if fn.detclass == "emu":
                w(f"rt_stop({STOP_CODES[t.status]}); return;")
            else:
                w("rt_trap(\"deterministic predicate failed\");")
                w("return" + (" false" if fn.detclass == "semidet" else "") + ";")
        else:
            raise InternalError(f"bad terminator {t!r}")
    out.append("}")
    out.append("")


def emit_native(emu_ir) -> str:
    """The whole emulator as one C99 translation unit."""
    out = [
        "/* generated emulator; options: "
        + (str(emu_ir.opts) if str(emu_ir.opts) != "none" else "baseline")
        + f" (bits {emu_ir.opts.bits}) */",
        '#include "machrt.h"',
        "",
        "#define code (mach_image.code)",
        "#define pool (mach_image.pool)",
        "",
    ]
    helpers = [emu_ir.unit.funcs[n] for n in emu_ir.unit.order
               if emu_ir.unit.funcs[n].detclass != "emu"]
    for fn in helpers:
        out.append(_sig(fn) + ";")
    out.append("")
    for fn in helpers:
        _emit_function(fn, out)

    emu = emu_ir.unit.funcs["emu"]
    flat = flatten(emu)
    out.append("void emu(uint32_t start) {")
    for name, (rm, _ty) in sorted(emu.locals.items()):
        out.append(f"    {_ctype(rm)} {name} = 0;".replace("* ", "*"))
    out.append("    g.p = start;")
    g = emu.graph
    pos = {b: i for i, b in enumerate(flat.order)}

    def w(line):
        out.append("    " + line)

    for i, b in enumerate(flat.order):
        if b in flat.labels or i == 0:
            out.append(f"b{b}:")
        if i == 0:
            out.append("    ;")
        _stmts(g[b], w)
        t = g[b].term
        if isinstance(t, TJump):
            if pos.get(t.dst) != i + 1:
                w(f"goto b{t.dst};")
        elif isinstance(t, TBranch):
            w(f"if ({_expr(t.cond)}) goto b{t.t}; else goto b{t.f};")
        elif isinstance(t, TSwitch):
            w(f"switch ({_expr(t.expr)}) {{")
            for v, d in t.cases:
                w(f"case {v}: goto b{d};")
            if t.default is not None:
                w(f"default: goto b{t.default};")
            w("}")
        elif isinstance(t, TStop):
            w(f"rt_stop({STOP_CODES[t.status]}); return;")
        else:
            raise InternalError(f"emulator terminator {t!r}")
    out.append("}")
    out.append("")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# textual IR listing (--dump-ir)


def ir_listing(unit) -> str:
    """One block per paragraph: ``blockId: stmt; ...; terminator``."""
    out = []
    for name in unit.order:
        fn = unit.funcs[name]
        params = ", ".join(f"{p[0]}:{p[1]}" for p in fn.params)
        out.append(f"{fn.detclass} {fn.name}({params}) entry=b{fn.entry}")
        flat = flatten(fn)
        for b in flat.order:
            parts = []
            tmp = []
            _stmts(fn.graph[b], tmp.append)
            parts.extend(x.rstrip(";") for x in tmp)
            t = fn.graph[b].term
            if isinstance(t, TJump):
                parts.append(f"jump b{t.dst}")
            elif isinstance(t, TBranch):
                parts.append(f"branch {_expr(t.cond)} ? b{t.t} : b{t.f}")
            elif isinstance(t, TSwitch):
                cs = " ".join(f"{v}->b{d}" for v, d in t.cases)
                parts.append(f"switch {_expr(t.expr)} [{cs}] default b{t.default}")
            elif isinstance(t, TRetVoid):
                parts.append("return")
            elif isinstance(t, TRetBool):
                parts.append(f"return {t.value}")
            elif isinstance(t, TStop):
                parts.append(f"stop {t.status}")
            out.append(f"  b{b}: " + "; ".join(parts))
        out.append("")
    return "\n".join(out) + "\n"
