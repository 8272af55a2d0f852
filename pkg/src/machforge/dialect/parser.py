"""Parser for the dialect's concrete syntax (``.ipl`` files).

The syntax is Prolog-like.  Mutable reads are written ``M@``, assignment
``M <= V``, and ``~f(Args)`` is functional notation for a builtin whose
last argument receives the result (so ``X = ~tagval(T)@`` reads through
the mutable returned by ``tagval``).  Declarations:

    :- regtype flag/1 + low(int32).
    flag := off | on.
    :- pred p(+I) :: flag.
    :- pred mflag/2 + unfold.
    :- ins_alias(ux_cons, u_cons(xreg_mutable, constagged)).
    :- ins_entry(movexy + movexy).      % optionally with an unfold spec
    :- ins_opcode(ux_cons, 97).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..diagnostics import Pos, error
from ..terms import Atom, Int, Struct, Term, Var
from .syntax import Clause, InsAlias, InsEntry, InsOpcode, PredAssertion, RegType

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>%[^\n]*)
  | (?P<int>\d+)
  | (?P<name>[a-z][A-Za-z0-9_]*)
  | (?P<var>[_A-Z][A-Za-z0-9_]*)
  | (?P<punct>:-|:=|::|->|<=|=|@|;|\||,|\.|\(|\)|\+|-|\*|~|!|/)
    """,
    re.VERBOSE,
)

KNOWN_DECLS = {"regtype", "pred", "ins_alias", "ins_entry", "ins_opcode"}


@dataclass
class Tok:
    kind: str
    text: str
    pos: Pos


def tokenize(text: str, filename: str) -> list[Tok]:
    toks = []
    line, col = 1, 1
    i = 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if not m:
            raise error(Pos(filename, line, col), "syntax",
                        f"unexpected character {text[i]!r}")
        kind = m.lastgroup
        s = m.group()
        if kind not in ("ws", "comment"):
            toks.append(Tok(kind, s, Pos(filename, line, col)))
        nl = s.count("\n")
        if nl:
            line += nl
            col = len(s) - s.rfind("\n")
        else:
            col += len(s)
        i = m.end()
    toks.append(Tok("eof", "", Pos(filename, line, col)))
    return toks


class _Parser:
    def __init__(self, toks: list[Tok]):
        self.toks = toks
        self.i = 0

    # -- token plumbing

    def peek(self) -> Tok:
        return self.toks[self.i]

    def next(self) -> Tok:
        t = self.toks[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def at(self, text: str) -> bool:
        t = self.peek()
        return t.kind != "eof" and t.text == text

    def expect(self, text: str) -> Tok:
        t = self.next()
        if t.text != text:
            raise error(t.pos, "syntax", f"expected {text!r}, found {t.text!r}")
        return t

    def fail(self, msg: str):
        raise error(self.peek().pos, "syntax", msg)

    # -- program

    def program(self):
        decls, clauses = [], []
        while self.peek().kind != "eof":
            if self.at(":-"):
                decls.append(self.directive())
            else:
                item = self.clause()
                if isinstance(item, RegType):
                    decls.append(item)
                else:
                    clauses.append(item)
        return decls, clauses

    def directive(self):
        pos = self.expect(":-").pos
        t = self.peek()
        if t.kind != "name":
            self.fail("expected declaration keyword")
        if t.text not in KNOWN_DECLS:
            raise error(t.pos, "unknown-decl", f"unknown declaration {t.text!r}")
        kw = self.next().text
        out = getattr(self, "d_" + kw)(pos)
        self.expect(".")
        return out

    def name_tok(self) -> str:
        t = self.next()
        if t.kind != "name":
            raise error(t.pos, "syntax", f"expected name, found {t.text!r}")
        return t.text

    def int_tok(self) -> int:
        neg = False
        if self.at("-"):
            self.next()
            neg = True
        t = self.next()
        if t.kind != "int":
            raise error(t.pos, "syntax", f"expected integer, found {t.text!r}")
        return -int(t.text) if neg else int(t.text)

    # -- declarations

    def d_regtype(self, pos):
        name = self.name_tok()
        self.expect("/")
        arity = self.int_tok()
        if arity != 1:
            raise error(pos, "syntax", "regtype declarations are unary")
        encoding = ""
        if self.at("+"):
            self.next()
            scheme = self.name_tok()   # e.g. "low"
            self.expect("(")
            encoding = self.name_tok()
            self.expect(")")
            del scheme
        return RegType(name, encoding, [], pos)

    def d_pred(self, pos):
        name = self.name_tok()
        argmodes = None
        arity = None
        if self.at("("):
            self.next()
            argmodes = []
            while not self.at(")"):
                mode = self.next()
                if mode.text not in ("+", "-"):
                    raise error(mode.pos, "syntax", "argument mode must be + or -")
                if self.peek().kind == "var":
                    self.next()  # argument names are documentation only
                argmodes.append(mode.text)
                if self.at(","):
                    self.next()
            self.expect(")")
            arity = len(argmodes)
        else:
            self.expect("/")
            arity = self.int_tok()
        argtypes = None
        if self.at("::"):
            self.next()
            argtypes = [self.type_term()]
            while self.at("*"):
                self.next()
                argtypes.append(self.type_term())
        flags = set()
        while self.at("+"):
            self.next()
            flags.add(self.name_tok())
        return PredAssertion(name, arity, argmodes, argtypes, flags, pos)

    def type_term(self):
        name = self.name_tok()
        if self.at("("):
            self.next()
            inner = self.name_tok()
            self.expect(")")
            return (name, inner)
        return name

    def d_ins_alias(self, pos):
        self.expect("(")
        new = self.name_tok()
        self.expect(",")
        base = self.name_tok()
        kinds = []
        if self.at("("):
            self.next()
            while not self.at(")"):
                kinds.append(self.name_tok())
                if self.at(","):
                    self.next()
            self.expect(")")
        self.expect(")")
        return InsAlias(new, base, kinds, pos)

    def d_ins_entry(self, pos):
        self.expect("(")
        seq = [self.name_tok()]
        while self.at("+"):
            self.next()
            seq.append(self.name_tok())
        unfold = None
        if self.at(","):
            self.next()
            t = self.next()
            if t.kind == "int":
                unfold = int(t.text)
            elif t.text == "all":
                unfold = "all"
            else:
                raise error(t.pos, "syntax", "unfold spec must be an index or 'all'")
        self.expect(")")
        return InsEntry(seq, unfold, pos)

    def d_ins_opcode(self, pos):
        self.expect("(")
        name = self.name_tok()
        self.expect(",")
        num = self.int_tok()
        self.expect(")")
        return InsOpcode(name, num, pos)

    # -- clauses and regtype case lists

    def clause(self):
        pos = self.peek().pos
        head = self.term()
        if self.at(":="):
            self.next()
            if not isinstance(head, Atom):
                raise error(pos, "syntax", "type case list head must be an atom")
            cases = [self.name_tok()]
            while self.at("|"):
                self.next()
                cases.append(self.name_tok())
            self.expect(".")
            return RegType(head.name, "", cases, pos)
        body = None
        if self.at(":-"):
            self.next()
            body = self.body_expr()
        self.expect(".")
        if not isinstance(head, (Atom, Struct)):
            raise error(pos, "syntax", "clause head must be an atom or structure")
        return Clause(head, body, pos)

    # -- goal expressions (operator tree over terms)

    def body_expr(self) -> Term:
        return self.expr_disj()

    def expr_disj(self) -> Term:
        a = self.expr_ite()
        if self.at(";"):
            self.next()
            b = self.expr_disj()
            return Struct(";", (a, b))
        return a

    def expr_ite(self) -> Term:
        a = self.expr_conj()
        if self.at("->"):
            self.next()
            b = self.expr_ite()
            return Struct("->", (a, b))
        return a

    def expr_conj(self) -> Term:
        a = self.expr_goal()
        if self.at(","):
            self.next()
            b = self.expr_conj()
            return Struct(",", (a, b))
        return a

    def expr_goal(self) -> Term:
        if self.at("("):
            self.next()
            inner = self.body_expr()
            self.expect(")")
            return self.maybe_infix(self.maybe_postfix(inner))
        if self.at("!"):
            self.next()
            return Atom("!")
        t = self.term()
        return self.maybe_infix(t)

    def maybe_infix(self, t: Term) -> Term:
        if self.at("="):
            self.next()
            rhs = self.term()
            return Struct("=", (t, rhs))
        if self.at("<="):
            self.next()
            rhs = self.term()
            return Struct("<=", (t, rhs))
        return t

    def maybe_postfix(self, t: Term) -> Term:
        while self.at("@"):
            self.next()
            t = Struct("@", (t,))
        return t

    # -- terms

    def term(self) -> Term:
        t = self.primary()
        return self.maybe_postfix(t)

    def primary(self) -> Term:
        tok = self.peek()
        if tok.kind == "int":
            self.next()
            return Int(int(tok.text))
        if tok.text == "-" and self.toks[self.i + 1].kind == "int":
            self.next()
            return Int(-int(self.next().text))
        if tok.kind == "var":
            self.next()
            return Var(tok.text)
        if tok.text == "~":
            self.next()
            inner = self.primary()
            if not isinstance(inner, Struct):
                raise error(tok.pos, "syntax", "~ expects a call")
            return Struct("~", (inner,))
        if tok.kind == "name":
            self.next()
            if self.at("("):
                self.next()
                args = []
                while not self.at(")"):
                    args.append(self.term())
                    if self.at(","):
                        self.next()
                self.expect(")")
                return Struct(tok.text, tuple(args))
            return Atom(tok.text)
        raise error(tok.pos, "syntax", f"unexpected token {tok.text!r}")


def parse_source(text: str, filename: str = "<string>"):
    """Parse dialect source into (declarations, raw clauses)."""
    p = _Parser(tokenize(text, filename))
    decls, clauses = p.program()
    # merge `:- regtype t/1 + low(enc)` with its `t := a | b` case list
    merged: dict[str, RegType] = {}
    out_decls = []
    for d in decls:
        if isinstance(d, RegType):
            if d.name in merged:
                prev = merged[d.name]
                prev.encoding = prev.encoding or d.encoding
                prev.cases = prev.cases or d.cases
            else:
                merged[d.name] = d
                out_decls.append(d)
        else:
            out_decls.append(d)
    return out_decls, clauses
