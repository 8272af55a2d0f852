"""Mini-Prolog front end: a parser for the benchmark subset, a compiler
to symbolic machine code, and a resolution-based reference interpreter
that serves as the end-to-end oracle.

Subset: clauses over atoms, small integers, variables, lists and
compound terms; builtin goals ``is/2``, arithmetic comparisons, ``=/2``,
``!/0``, ``true``, ``fail``.  Cuts are restricted to guard position (no
user-predicate call may precede them in the clause body).
"""

from __future__ import annotations

import hashlib
import itertools
import re
from dataclasses import dataclass, field

from .assembler import Ins
from .diagnostics import Pos, error
from .machdef import BUILTIN_BY_NAME
from .terms import Atom, Int, NIL, Struct, Term, Var, is_const, mklist, render, term_vars

# ---------------------------------------------------------------------------
# Tokenizer / parser

_PL_TOKEN = re.compile(
    r"""
    (?P<ws>\s+|%[^\n]*|/\*.*?\*/)
  | (?P<int>\d+)
  | (?P<name>[a-z][A-Za-z0-9_]*)
  | (?P<var>[_A-Z][A-Za-z0-9_]*)
  | (?P<punct>:-|\?-|=\.\.|=:=|=\\=|=<|>=|//|->|[()\[\],|.!;=<>+\-*/])
    """,
    re.VERBOSE | re.DOTALL,
)

_CMP_OPS = {"<": "lt", ">": "gt", "=<": "le", ">=": "ge",
            "=:=": "numeq", "=\\=": "numne"}
_ARITH_BIN = {"+": "add", "-": "sub", "*": "mul", "//": "idiv", "mod": "mod"}


@dataclass
class PTok:
    kind: str
    text: str
    pos: Pos


def _pl_tokens(text: str, filename: str):
    toks, line, col, i = [], 1, 1, 0
    while i < len(text):
        m = _PL_TOKEN.match(text, i)
        if not m:
            raise error(Pos(filename, line, col), "syntax",
                        f"unexpected character {text[i]!r}")
        s = m.group()
        if m.lastgroup != "ws":
            toks.append(PTok(m.lastgroup, s, Pos(filename, line, col)))
        nl = s.count("\n")
        if nl:
            line += nl
            col = len(s) - s.rfind("\n")
        else:
            col += len(s)
        i = m.end()
    toks.append(PTok("eof", "", Pos(filename, line, col)))
    return toks


class _PlParser:
    """Operator-precedence parser for the benchmark subset."""

    def __init__(self, toks):
        self.toks = toks
        self.i = 0
        self.varnum = itertools.count(1)

    def peek(self):
        return self.toks[self.i]

    def next(self):
        t = self.toks[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def at(self, s):
        t = self.peek()
        return t.kind != "eof" and t.text == s

    def expect(self, s):
        t = self.next()
        if t.text != s:
            raise error(t.pos, "syntax", f"expected {s!r}, found {t.text!r}")

    def clauses(self):
        out = []
        while self.peek().kind != "eof":
            pos = self.peek().pos
            if self.at(":-") or self.at("?-"):
                raise error(pos, "syntax", "directives are not in the subset")
            head = self.term(999)
            body = None
            if self.at(":-"):
                self.next()
                body = self.term(1200)
            self.expect(".")
            out.append((head, body, pos))
        return out

    def goal(self):
        t = self.term(1200)
        if self.peek().kind != "eof" and not self.at("."):
            raise error(self.peek().pos, "syntax", "trailing input after goal")
        return t

    # precedence climbing: 1000 ',' (xfy); 700 comparisons/=/is (xfx);
    # 500 + - (yfx); 400 * // mod (yfx); primary
    def term(self, maxp):
        t = self.primary()
        while True:
            tok = self.peek()
            text = tok.text
            if text == "," and maxp >= 1000:
                self.next()
                rhs = self.term(1000)
                t = Struct(",", (t, rhs))
            elif text in ("=", "is", "<", ">", "=<", ">=", "=:=", "=\\=") \
                    and maxp >= 700:
                self.next()
                rhs = self.term(699)
                t = Struct(text, (t, rhs))
            elif text in ("+", "-") and maxp >= 500:
                self.next()
                rhs = self.term(499)
                t = Struct(text, (t, rhs))
            elif text in ("*", "//", "/") and maxp >= 400:
                self.next()
                rhs = self.term(399)
                t = Struct(text, (t, rhs))
            elif text == "mod" and tok.kind == "name" and maxp >= 400 \
                    and self.toks[self.i + 1].text not in ("(",):
                self.next()
                rhs = self.term(399)
                t = Struct("mod", (t, rhs))
            else:
                return t

    def primary(self):
        tok = self.next()
        if tok.kind == "int":
            return Int(int(tok.text))
        if tok.text == "-" and self.peek().kind == "int":
            return Int(-int(self.next().text))
        if tok.kind == "var":
            if tok.text == "_":
                return Var(f"_G{next(self.varnum)}")
            return Var(tok.text)
        if tok.text == "(":
            t = self.term(1200)
            self.expect(")")
            return t
        if tok.text == "[":
            return self.list_term()
        if tok.text == "!":
            return Atom("!")
        if tok.kind == "name":
            if self.at("("):
                self.next()
                args = [self.term(999)]
                while self.at(","):
                    self.next()
                    args.append(self.term(999))
                self.expect(")")
                return Struct(tok.text, tuple(args))
            return Atom(tok.text)
        raise error(tok.pos, "syntax", f"unexpected token {tok.text!r}")

    def list_term(self):
        if self.at("]"):
            self.next()
            return NIL
        items = [self.term(999)]
        while self.at(","):
            self.next()
            items.append(self.term(999))
        tail = NIL
        if self.at("|"):
            self.next()
            tail = self.term(999)
        self.expect("]")
        return mklist(items, tail)


@dataclass
class PrologProgram:
    clauses: dict = field(default_factory=dict)   # (name, arity) -> [(head, body goals)]
    order: list = field(default_factory=list)


def parse_program(text: str, filename: str = "<pl>") -> PrologProgram:
    parser = _PlParser(_pl_tokens(text, filename))
    prog = PrologProgram()
    for head, body, pos in parser.clauses():
        if isinstance(head, Atom):
            key = (head.name, 0)
        elif isinstance(head, Struct) and head.name not in (",",):
            key = (head.name, head.arity)
        else:
            raise error(pos, "syntax", f"bad clause head {head!r}")
        goals = _flatten_conj(body) if body is not None else []
        if key not in prog.clauses:
            prog.clauses[key] = []
            prog.order.append(key)
        prog.clauses[key].append((head, goals))
    return prog


def parse_goal(text: str) -> Term:
    return _PlParser(_pl_tokens(text, "<goal>")).goal()


def _flatten_conj(t: Term) -> list:
    if isinstance(t, Struct) and t.name == "," and t.arity == 2:
        return _flatten_conj(t.args[0]) + _flatten_conj(t.args[1])
    return [t]


BUILTIN_GOALS = {"is", "=", "<", ">", "=<", ">=", "=:=", "=\\=",
                 "true", "fail", "!"}


# ---------------------------------------------------------------------------
# Compiler to symbolic machine code

VOID_REG = 254   # scratch register consumed by unify_void


class _ClauseCompiler:
    def __init__(self, arity: int, nperm_order: list, reg_floor: int):
        self.code: list = []
        self.arity = arity
        self.perms = {v: i for i, v in enumerate(nperm_order)}
        self.perm_seen: set = set()
        self.temp_home: dict = {}
        self.next_temp = reg_floor
        self.occurs_left: dict = {}

    def emit(self, name, ops):
        self.code.append(Ins(name, ops))

    def fresh_temp(self) -> int:
        t = self.next_temp
        self.next_temp += 1
        if t >= VOID_REG:
            raise error(Pos(), "regs", "clause needs too many registers")
        return t

    def invalidate_temps(self):
        self.temp_home.clear()

    # -- where does a variable live?  (None until its first occurrence
    # has stored it somewhere)

    def home(self, v: Var):
        if v.name in self.perms:
            if v.name in self.perm_seen:
                return ("y", self.perms[v.name])
            return None
        if v.name in self.temp_home:
            return ("x", self.temp_home[v.name])
        return None

    def set_temp_home(self, v: Var, reg: int):
        self.temp_home[v.name] = reg

    # -- head

    def compile_head(self, head):
        args = head.args if isinstance(head, Struct) else ()
        pending = []
        for i, a in enumerate(args):
            if isinstance(a, Var):
                h = self.home(a)
                if h is None:
                    if self.is_void(a):
                        continue
                    if a.name in self.perms:
                        self.emit("get_variable_y",
                                  [("x", i), ("y", self.perms[a.name])])
                        # mark as seen
                        self.perm_seen.add(a.name)
                    else:
                        t = self.fresh_temp()
                        self.emit("get_variable_x", [("x", i), ("x", t)])
                        self.set_temp_home(a, t)
                else:
                    self.emit_get_value(h, i)
            elif is_const(a):
                self.emit("get_constant", [("x", i), ("const", a)])
            else:
                pending.extend(self.get_structure(a, ("x", i)))
        while pending:
            sub, reg = pending.pop(0)
            pending.extend(self.get_structure(sub, ("x", reg)))

    def emit_get_value(self, h, i):
        if h[0] == "x":
            self.emit("get_value_x", [("x", h[1]), ("x", i)])
        else:
            self.emit("get_value_y", [("y", h[1]), ("x", i)])

    def get_structure(self, t: Struct, where) -> list:
        """get_structure/get_list on `where`, then unify-instructions for
        the arguments; nested structures are deferred via fresh temps."""
        deferred = []
        if t.name == "." and t.arity == 2:
            self.emit("get_list", [where])
            args = t.args
        else:
            self.emit("get_structure", [where, ("functor", (t.name, t.arity))])
            args = t.args
        for a in args:
            deferred.extend(self.unify_arg(a))
        return deferred

    def unify_arg(self, a) -> list:
        if isinstance(a, Var):
            h = self.home(a)
            if h is None:
                if self.is_void(a):
                    self.emit("unify_void", [("x", VOID_REG)])
                    return []
                if a.name in self.perms:
                    self.perm_seen.add(a.name)
                    self.emit("unify_variable_y", [("y", self.perms[a.name])])
                else:
                    t = self.fresh_temp()
                    self.emit("unify_variable_x", [("x", t)])
                    self.set_temp_home(a, t)
            else:
                if h[0] == "x":
                    self.emit("unify_value_x", [("x", h[1])])
                else:
                    self.emit("unify_value_y", [("y", h[1])])
            return []
        if is_const(a):
            self.emit("unify_constant", [("const", a)])
            return []
        # nested structure: bind a temp now, match it afterwards
        t = self.fresh_temp()
        self.emit("unify_variable_x", [("x", t)])
        return [(a, t)]

    def is_void(self, v: Var) -> bool:
        if v.name in self.perms:
            return False
        return self.occurs_left.get(v.name, 0) <= 1

    # -- body argument loading

    def put_arg(self, a, target: int):
        if isinstance(a, Var):
            h = self.home(a)
            if h is None:
                if self.is_void(a):
                    self.emit("put_void", [("x", target)])
                elif a.name in self.perms:
                    self.perm_seen.add(a.name)
                    self.emit("put_variable_y",
                              [("y", self.perms[a.name]), ("x", target)])
                else:
                    t = self.fresh_temp()
                    self.emit("put_variable_x", [("x", t), ("x", target)])
                    self.set_temp_home(a, t)
            elif h == ("x", target):
                pass
            elif h[0] == "x":
                self.emit("put_value_x", [("x", h[1]), ("x", target)])
            else:
                self.emit("put_value_y", [("y", h[1]), ("x", target)])
        elif is_const(a):
            self.emit("put_constant", [("x", target), ("const", a)])
        else:
            self.build_structure(a, target)

    def build_structure(self, t: Struct, target: int):
        """Bottom-up construction: children into temps first."""
        child_regs = []
        for a in t.args:
            if isinstance(a, Struct):
                r = self.fresh_temp()
                self.build_structure(a, r)
                child_regs.append(("built", r))
            else:
                child_regs.append(("leaf", a))
        if t.name == "." and t.arity == 2:
            self.emit("put_list", [("x", target)])
        else:
            self.emit("put_structure",
                      [("x", target), ("functor", (t.name, t.arity))])
        for kind, c in child_regs:
            if kind == "built":
                self.emit("unify_value_x", [("x", c)])
            elif isinstance(c, Var):
                h = self.home(c)
                if h is None:
                    if self.is_void(c):
                        self.emit("unify_void", [("x", VOID_REG)])
                    elif c.name in self.perms:
                        self.perm_seen.add(c.name)
                        self.emit("unify_variable_y",
                                  [("y", self.perms[c.name])])
                    else:
                        r = self.fresh_temp()
                        self.emit("unify_variable_x", [("x", r)])
                        self.set_temp_home(c, r)
                elif h[0] == "x":
                    self.emit("unify_value_x", [("x", h[1])])
                else:
                    self.emit("unify_value_y", [("y", h[1])])
            else:
                self.emit("unify_constant", [("const", c)])

    def value_reg(self, a) -> int:
        """Load an int or variable (or structure) into some register."""
        if isinstance(a, Var):
            h = self.home(a)
            if h is None:
                raise error(Pos(), "mode", f"unbound variable {a.name} in "
                            "arithmetic")
            if h[0] == "x":
                return h[1]
            t = self.fresh_temp()
            self.emit("put_value_y", [("y", h[1]), ("x", t)])
            return t
        t = self.fresh_temp()
        if is_const(a):
            self.emit("put_constant", [("x", t), ("const", a)])
        else:
            self.build_structure(a, t)
        return t

    def eval_arith(self, e) -> int:
        """Compile an arithmetic expression; returns the result register."""
        if isinstance(e, (Var, Int)):
            return self.value_reg(e)
        if isinstance(e, Struct) and e.name in _ARITH_BIN and e.arity == 2:
            ra = self.eval_arith(e.args[0])
            rb = self.eval_arith(e.args[1])
            rz = self.fresh_temp()
            bid = BUILTIN_BY_NAME[_ARITH_BIN[e.name]].id
            self.emit("bltin3d", [("bltin", bid), ("x", ra), ("x", rb),
                                  ("x", rz)])
            return rz
        if isinstance(e, Struct) and e.name == "-" and e.arity == 1:
            ra = self.eval_arith(e.args[0])
            rz = self.fresh_temp()
            self.emit("bltin2d", [("bltin", BUILTIN_BY_NAME["neg"].id),
                                  ("x", ra), ("x", rz)])
            return rz
        raise error(Pos(), "arith", f"cannot evaluate {render(e)}")


def _count_occurrences(head, goals) -> dict:
    counts: dict = {}

    def rec(x):
        if isinstance(x, Var):
            counts[x.name] = counts.get(x.name, 0) + 1
        elif isinstance(x, Struct):
            for a in x.args:
                rec(a)

    rec(head)
    for g in goals:
        rec(g)
    return counts


def _chunks(head, goals):
    """Split at user-predicate calls for permanent-variable analysis."""
    chunks = [[head]]
    for g in goals:
        chunks[-1].append(g)
        if _is_user_call(g):
            chunks.append([])
    return [c for c in chunks if c]


def _is_user_call(g) -> bool:
    if isinstance(g, Atom):
        return g.name not in BUILTIN_GOALS
    if isinstance(g, Struct):
        return g.name not in BUILTIN_GOALS
    return False


def _perm_vars(head, goals) -> list:
    chunks = _chunks(head, goals)
    seen_in: dict = {}
    order: list = []
    for ci, chunk in enumerate(chunks):
        for t in chunk:
            for v in term_vars(t):
                s = seen_in.setdefault(v.name, set())
                s.add(ci)
                if v.name not in order:
                    order.append(v.name)
    return [v for v in order if len(seen_in[v]) > 1]


def compile_clause(head, goals, force_perms=None, solution_tail=False):
    """One clause to instructions.  With ``solution_tail`` the clause ends
    with a solution instruction instead of returning (query compilation)."""
    arity = head.arity if isinstance(head, Struct) else 0
    perms = force_perms if force_perms is not None else _perm_vars(head, goals)
    calls = [g for g in goals if _is_user_call(g)]
    last_is_call = bool(goals) and _is_user_call(goals[-1]) and not solution_tail
    needs_env = bool(perms) or solution_tail or (
        calls and (len(calls) > 1 or not last_is_call))
    reg_floor = max([arity] + [g.arity if isinstance(g, Struct) else 0
                               for g in goals]) + 1
    cc = _ClauseCompiler(arity, perms, reg_floor)
    cc.occurs_left = _count_occurrences(head, goals)
    if needs_env:
        cc.emit("allocate", [("count", len(perms))])
    cc.compile_head(head)

    seen_call = False
    for gi, g in enumerate(goals):
        is_last = gi == len(goals) - 1
        if isinstance(g, Atom) and g.name == "true":
            continue
        if isinstance(g, Atom) and g.name == "fail":
            cc.emit("fail", [])
            break
        if isinstance(g, Atom) and g.name == "!":
            if seen_call:
                raise error(Pos(), "cut",
                            "cut after a user-predicate call is not supported")
            cc.emit("neck_cut", [])
            continue
        if isinstance(g, Struct) and g.name == "is" and g.arity == 2:
            r = cc.eval_arith(g.args[1])
            _bind_result(cc, g.args[0], r)
            continue
        if isinstance(g, Struct) and g.name in _CMP_OPS and g.arity == 2:
            ra = cc.value_reg(g.args[0])
            rb = cc.value_reg(g.args[1])
            bid = BUILTIN_BY_NAME[_CMP_OPS[g.name]].id
            cc.emit("bltin2s", [("bltin", bid), ("x", ra), ("x", rb)])
            continue
        if isinstance(g, Struct) and g.name == "=" and g.arity == 2:
            ra = cc.value_reg_general(g.args[0])
            rb = cc.value_reg_general(g.args[1])
            cc.emit("get_value_x", [("x", ra), ("x", rb)])
            continue
        if _is_user_call(g):
            seen_call = True
            args = g.args if isinstance(g, Struct) else ()
            for j, a in enumerate(args):
                cc.put_arg(a, j)
            key = (g.name, len(args))
            if is_last and last_is_call:
                if needs_env:
                    cc.emit("deallocate", [])
                cc.emit("execute", [("plbl", key)])
                return cc.code
            cc.emit("call", [("plbl", key)])
            cc.invalidate_temps()
            cc.next_temp = reg_floor
            continue
        raise error(Pos(), "subset", f"unsupported goal {render(g)}")

    if solution_tail:
        cc.emit("solution", [("count", len(perms))])
        return cc.code
    if needs_env:
        cc.emit("deallocate", [])
    cc.emit("proceed", [])
    return cc.code


def _bind_result(cc: _ClauseCompiler, v, reg: int):
    if not isinstance(v, Var):
        r2 = cc.value_reg(v)
        cc.emit("get_value_x", [("x", r2), ("x", reg)])
        return
    h = cc.home(v)
    if h is None:
        if v.name in cc.perms:
            cc.perm_seen.add(v.name)
            cc.emit("get_variable_y", [("x", reg), ("y", cc.perms[v.name])])
        else:
            cc.set_temp_home(v, reg)
    elif h[0] == "x":
        cc.emit("get_value_x", [("x", h[1]), ("x", reg)])
    else:
        cc.emit("get_value_y", [("y", h[1]), ("x", reg)])


def compile_prolog(prog: PrologProgram) -> dict:
    """Full program to symbolic code: linear try/retry/trust chains per
    predicate, one entry per (name, arity)."""
    out: dict = {}
    for key in prog.order:
        clauses = prog.clauses[key]
        arity = key[1]
        if len(clauses) == 1:
            out[key] = compile_clause(*clauses[0])
            continue
        bodies = [compile_clause(h, b) for (h, b) in clauses]
        code: list = []
        starts: list = []
        # layout: try_me_else placeholder + c1, retry/trust + rest
        idx = 0
        for ci, body in enumerate(bodies):
            starts.append(len(code))
            if ci == 0:
                code.append(Ins("try_me_else", [("count", arity), ("lbl", 0)]))
            elif ci < len(bodies) - 1:
                code.append(Ins("retry_me_else", [("lbl", 0)]))
            else:
                code.append(Ins("trust_me", []))
            code.extend(body)
        # patch alternatives to the following clause start
        for ci in range(len(bodies) - 1):
            at = starts[ci]
            nxt = starts[ci + 1]
            name = code[at].name
            ops = list(code[at].operands)
            ops[-1] = ("lbl", nxt)
            code[at] = Ins(name, ops)
        out[key] = code
    return out


def compile_query(goal: Term) -> tuple:
    """Compile ``?- goal`` into a $query/0 predicate: all query variables
    become permanent so they survive to the solution instruction.

    Returns (code, varnames)."""
    goals = _flatten_conj(goal)
    qvars = []
    for g in goals:
        for v in term_vars(g):
            if v.name not in qvars and not v.name.startswith("_G"):
                qvars.append(v.name)
    head = Atom("$query")
    code = compile_clause(head, goals, force_perms=qvars, solution_tail=True)
    return code, qvars


# value_reg_general: like value_reg but allows unbound (fresh heap var)
def _value_reg_general(self, a) -> int:
    if isinstance(a, Var):
        h = self.home(a)
        if h is None:
            t = self.fresh_temp()
            if a.name in self.perms:
                self.perm_seen.add(a.name)
                self.emit("put_variable_y", [("y", self.perms[a.name]), ("x", t)])
            else:
                t2 = self.fresh_temp()
                self.emit("put_variable_x", [("x", t2), ("x", t)])
                self.set_temp_home(a, t2)
            return t
        if h[0] == "x":
            return h[1]
        t = self.fresh_temp()
        self.emit("put_value_y", [("y", h[1]), ("x", t)])
        return t
    t = self.fresh_temp()
    if is_const(a):
        self.emit("put_constant", [("x", t), ("const", a)])
    else:
        self.build_structure(a, t)
    return t


_ClauseCompiler.value_reg_general = _value_reg_general


# ---------------------------------------------------------------------------
# Reference interpreter (SLD resolution, leftmost selection, textual
# clause order, guard cuts, arithmetic)


@dataclass
class Solution:
    bindings: dict               # query var name -> term
    ordinal: int

    def line(self, varnames) -> str:
        if not varnames:
            return "true"
        varmap: dict = {}
        parts = []
        for v in varnames:
            parts.append(f"{v} = {_render_oracle(self.bindings.get(v, Var(v)), varmap)}")
        return ", ".join(parts)


def _render_oracle(t, varmap) -> str:
    if isinstance(t, Var):
        if t.name not in varmap:
            varmap[t.name] = f"_{len(varmap)}"
        return varmap[t.name]
    if isinstance(t, Struct):
        if t.name == "." and t.arity == 2:
            parts, cur = [], t
            while isinstance(cur, Struct) and cur.name == "." and cur.arity == 2:
                parts.append(_render_oracle(cur.args[0], varmap))
                cur = cur.args[1]
            if cur == NIL:
                return "[" + ",".join(parts) + "]"
            return "[" + ",".join(parts) + "|" + _render_oracle(cur, varmap) + "]"
        return (t.name + "("
                + ",".join(_render_oracle(a, varmap) for a in t.args) + ")")
    return render(t)


class OracleLimit(Exception):
    pass


class Oracle:
    def __init__(self, prog: PrologProgram, max_steps: int = 50_000_000,
                 max_depth: int = 2000):
        import sys
        sys.setrecursionlimit(max(sys.getrecursionlimit(), 60_000))
        self.prog = prog
        self.max_steps = max_steps
        self.max_depth = max_depth
        self.steps = 0
        self.rename = itertools.count(1)

    # bindings: mutable dict with an undo trail
    def walk(self, t, b):
        while isinstance(t, Var):
            v = b.get(t.name)
            if v is None:
                return t
            t = v
        return t

    def bind(self, name, t, b, trail):
        b[name] = t
        trail.append(name)

    def undo(self, mark, b, trail):
        while len(trail) > mark:
            del b[trail.pop()]

    def unify(self, x, y, b, trail) -> bool:
        x = self.walk(x, b)
        y = self.walk(y, b)
        if isinstance(x, Var):
            if isinstance(y, Var) and x.name == y.name:
                return True
            self.bind(x.name, y, b, trail)
            return True
        if isinstance(y, Var):
            self.bind(y.name, x, b, trail)
            return True
        if isinstance(x, (Atom, Int)) or isinstance(y, (Atom, Int)):
            return x == y
        if x.name != y.name or x.arity != y.arity:
            return False
        return all(self.unify(a, c, b, trail) for a, c in zip(x.args, y.args))

    def eval(self, t, b) -> int:
        t = self.walk(t, b)
        if isinstance(t, Int):
            return t.value
        if isinstance(t, Struct) and t.name in _ARITH_BIN and t.arity == 2:
            a = self.eval(t.args[0], b)
            c = self.eval(t.args[1], b)
            op = t.name
            if op == "+":
                return a + c
            if op == "-":
                return a - c
            if op == "*":
                return a * c
            if op == "//":
                if c == 0:
                    raise OracleLimit("division by zero")
                q = abs(a) // abs(c)
                return -q if (a < 0) != (c < 0) else q
            if op == "mod":
                if c == 0:
                    raise OracleLimit("division by zero")
                return a - c * (a // c)
        if isinstance(t, Struct) and t.name == "-" and t.arity == 1:
            return -self.eval(t.args[0], b)
        raise OracleLimit(f"cannot evaluate {render(t)}")

    def rename_clause(self, head, goals):
        n = next(self.rename)
        sub: dict = {}

        def rec(t):
            if isinstance(t, Var):
                nm = sub.get(t.name)
                if nm is None:
                    nm = sub[t.name] = Var(f"{t.name}&{n}")
                return nm
            if isinstance(t, Struct):
                return Struct(t.name, tuple(rec(a) for a in t.args))
            return t

        return rec(head), [rec(g) for g in goals]

    def solve_goals(self, goals, i, b, trail, cut, depth):
        if i == len(goals):
            yield True
            return
        g = goals[i]
        for _ in self.solve_goal(g, b, trail, cut, depth):
            yield from self.solve_goals(goals, i + 1, b, trail, cut, depth)
            if cut[0]:
                break

    def solve_goal(self, g, b, trail, cut, depth):
        self.steps += 1
        if self.steps > self.max_steps:
            raise OracleLimit("step limit exceeded")
        if depth > self.max_depth:
            raise OracleLimit("depth limit exceeded")
        if isinstance(g, Atom):
            if g.name == "true":
                yield True
                return
            if g.name == "fail":
                return
            if g.name == "!":
                cut[0] = True
                yield True
                return
            yield from self.solve_call(g.name, (), b, trail, depth)
            return
        if isinstance(g, Var):
            raise OracleLimit("unbound goal")
        name = g.name
        if name == "=" and g.arity == 2:
            mark = len(trail)
            if self.unify(g.args[0], g.args[1], b, trail):
                yield True
            self.undo(mark, b, trail)
            return
        if name == "is" and g.arity == 2:
            v = Int(self.eval(g.args[1], b))
            mark = len(trail)
            if self.unify(g.args[0], v, b, trail):
                yield True
            self.undo(mark, b, trail)
            return
        if name in _CMP_OPS and g.arity == 2:
            a = self.eval(g.args[0], b)
            c = self.eval(g.args[1], b)
            ok = {"lt": a < c, "le": a <= c, "gt": a > c, "ge": a >= c,
                  "numeq": a == c, "numne": a != c}[_CMP_OPS[name]]
            if ok:
                yield True
            return
        yield from self.solve_call(name, g.args, b, trail, depth)

    def solve_call(self, name, args, b, trail, depth):
        key = (name, len(args))
        clauses = self.prog.clauses.get(key)
        if clauses is None:
            raise OracleLimit(f"undefined predicate {name}/{len(args)}")
        goal_args = list(args)
        mycut = [False]
        for (h, goals) in clauses:
            rh, rgoals = self.rename_clause(h, goals)
            mark = len(trail)
            hargs = rh.args if isinstance(rh, Struct) else ()
            if all(self.unify(a, p, b, trail)
                   for a, p in zip(goal_args, hargs)):
                yield from self.solve_goals(rgoals, 0, b, trail, mycut,
                                            depth + 1)
            self.undo(mark, b, trail)
            if mycut[0]:
                break

    def resolve(self, t, b):
        t = self.walk(t, b)
        if isinstance(t, Struct):
            return Struct(t.name, tuple(self.resolve(a, b) for a in t.args))
        return t


def reference_solve(prog: PrologProgram, goal: Term, max_solutions: int = 1,
                    max_steps: int = 50_000_000) -> list[Solution]:
    """All (up to max_solutions) solutions by SLD resolution, independent
    of every machine code path."""
    oracle = Oracle(prog, max_steps)
    goals = _flatten_conj(goal)
    qvars = []
    for g in goals:
        for v in term_vars(g):
            if v.name not in qvars and not v.name.startswith("_G"):
                qvars.append(v.name)
    out: list = []
    b: dict = {}
    trail: list = []
    cut = [False]
    for _ in oracle.solve_goals(goals, 0, b, trail, cut, 0):
        binding = {v: oracle.resolve(Var(v), b) for v in qvars}
        out.append(Solution(binding, len(out) + 1))
        if len(out) >= max_solutions:
            break
    return out


def solution_lines(sols: list[Solution], varnames) -> list[str]:
    return [s.line(varnames) for s in sols]


def solutions_digest(lines: list[str]) -> str:
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()
