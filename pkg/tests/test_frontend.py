"""Front-end tests: parsing, compilation shape, the resolution oracle,
and machine-vs-oracle equivalence incl. randomized cut predicates."""

import random

import pytest

from machforge import frontend
from machforge.assembler import assign_opcodes, assemble
from machforge.diagnostics import CompileError
from machforge.emugen import emucomp
from machforge.machdef import seed_machine
from machforge.pybackend import eval_ir
from machforge.terms import Atom, Int, Struct, Var, mklist, render
from machforge.transforms import OptionSet

_MACHINE = None
_IR = None


def machine_and_ir():
    global _MACHINE, _IR
    if _MACHINE is None:
        _MACHINE = assign_opcodes(seed_machine())
        _IR = emucomp(_MACHINE, OptionSet())
    return _MACHINE, _IR


def run_machine(src, goaltext, maxsol=10):
    prog = frontend.parse_program(src)
    goal = frontend.parse_goal(goaltext)
    code = frontend.compile_prolog(prog)
    qcode, qvars = frontend.compile_query(goal)
    code[("$query", 0)] = qcode
    m, ir = machine_and_ir()
    img = assemble(code, m, query={"entry": ("$query", 0), "varnames": qvars})
    out = eval_ir(ir, img, max_solutions=maxsol)
    return out.solutions, qvars


def run_oracle(src, goaltext, maxsol=10):
    prog = frontend.parse_program(src)
    goal = frontend.parse_goal(goaltext)
    sols = frontend.reference_solve(prog, goal, max_solutions=maxsol)
    qcode, qvars = frontend.compile_query(goal)
    return frontend.solution_lines(sols, qvars), qvars


class TestParser:
    def test_clause_and_list(self):
        prog = frontend.parse_program("p([X|Xs], X) :- q(Xs).\n")
        (head, goals) = prog.clauses[("p", 2)][0]
        assert head.args[0] == Struct(".", (Var("X"), Var("Xs")))
        assert goals[0] == Struct("q", (Var("Xs"),))

    def test_arith_precedence(self):
        g = frontend.parse_goal("X is 1 + 2 * 3 - 4")
        assert render(g.args[1]) == "-(+(1,*(2,3)),4)"

    def test_anonymous_vars_distinct(self):
        prog = frontend.parse_program("p(_, _).\n")
        (head, _) = prog.clauses[("p", 2)][0]
        assert head.args[0] != head.args[1]

    def test_comments(self):
        prog = frontend.parse_program("% line\n/* block */\np(a).\n")
        assert ("p", 1) in prog.clauses


class TestCompileShape:
    def test_fact_is_proceed_terminated(self):
        code = frontend.compile_prolog(frontend.parse_program("a.\n"))
        names = [i.name for i in code[("a", 0)]]
        assert names[-1] == "proceed"
        assert "get_constant" not in names

    def test_append_chain(self):
        src = "app([], L, L).\napp([X|Xs], L, [X|Zs]) :- app(Xs, L, Zs).\n"
        code = frontend.compile_prolog(frontend.parse_program(src))
        names = [i.name for i in code[("app", 3)]]
        assert names[0] == "try_me_else"
        assert "trust_me" in names
        assert "get_list" in names
        assert names[-1] == "execute"       # last call optimized

    def test_conj_lco(self):
        src = "p :- q, r.\nq.\nr.\n"
        code = frontend.compile_prolog(frontend.parse_program(src))
        names = [i.name for i in code[("p", 0)]]
        assert names[0] == "allocate"
        assert "call" in names
        assert names[-2:] == ["deallocate", "execute"]

    def test_deep_cut_rejected(self):
        src = "p(X) :- q(X), !, r(X).\nq(_).\nr(_).\n"
        with pytest.raises(CompileError):
            frontend.compile_prolog(frontend.parse_program(src))


class TestOracle:
    def test_nreverse(self):
        lines, _ = run_oracle(
            "app([], L, L).\napp([X|Xs], L, [X|Zs]) :- app(Xs, L, Zs).\n"
            "nreverse([], []).\n"
            "nreverse([X|Xs], R) :- nreverse(Xs, R1), app(R1, [X], R).\n",
            "nreverse([1,2,3], R)")
        assert lines == ["R = [3,2,1]"]

    def test_member_order(self):
        lines, _ = run_oracle("member(X, [X|_]).\nmember(X, [_|T]) :- member(X, T).\n",
                              "member(X, [a,b])")
        assert lines == ["X = a", "X = b"]

    def test_queens_first_solution_is_valid(self):
        import pathlib
        src = (pathlib.Path(__file__).parent.parent / "benchmarks" /
               "queens.pl").read_text()
        prog = frontend.parse_program(src)
        goal = frontend.parse_goal("queens(6, Qs)")
        (sol,) = frontend.reference_solve(prog, goal, max_solutions=1)
        qs = sol.bindings["Qs"]
        cols = []
        while isinstance(qs, Struct):
            cols.append(qs.args[0].value)
            qs = qs.args[1]
        assert sorted(cols) == list(range(1, 7))
        for i in range(len(cols)):
            for j in range(i + 1, len(cols)):
                assert abs(cols[i] - cols[j]) != j - i  # no diagonal attack

    def test_limit_exceeded(self):
        prog = frontend.parse_program("loop :- loop.\n")
        with pytest.raises(frontend.OracleLimit):
            frontend.reference_solve(prog, frontend.parse_goal("loop"),
                                     max_steps=1000)


class TestEndToEnd:
    CASES = [
        ("p(1).\np(2).\np(3).\n", "p(X)", 10),
        ("f(X, Y) :- Y is X * 2 + 1.\n", "f(20, Y)", 1),
        ("sum([], 0).\nsum([X|Xs], S) :- sum(Xs, S1), S is S1 + X.\n",
         "sum([1,2,3,4,5], S)", 1),
        ("last([X], X) :- !.\nlast([_|T], X) :- last(T, X).\n",
         "last([a,b,c], X)", 3),
        ("eq(X, X).\n", "eq(f(Y, 2), f(1, Z))", 1),
    ]

    @pytest.mark.parametrize("src,goal,maxsol", CASES)
    def test_machine_equals_oracle(self, src, goal, maxsol):
        got, _ = run_machine(src, goal, maxsol)
        want, _ = run_oracle(src, goal, maxsol)
        assert got == want

    def test_cut_soundness_randomized(self):
        rng = random.Random(31337)
        consts = ["a", "b", "c"]
        for trial in range(40):
            # three clauses over one argument, one guard cut
            cutpos = rng.randrange(0, 3)
            lines = []
            for ci in range(3):
                c = rng.choice(consts)
                body = " :- !" if ci == cutpos else ""
                lines.append(f"p({c}){body}.")
            src = "\n".join(lines) + "\nd(a).\nd(b).\nd(c).\n"
            goal = "d(X), p(X)"
            got, _ = run_machine(src, goal, 10)
            want, _ = run_oracle(src, goal, 10)
            assert got == want, src


class TestQueryCompilation:
    def test_query_vars_order(self):
        _, qvars = run_oracle("p(1, 2).\n", "p(A, B)")
        assert qvars == ["A", "B"]

    def test_no_vars_prints_true(self):
        got, _ = run_machine("yes.\n", "yes", 1)
        assert got == ["true"]

    def test_unbound_var_rendering_canonical(self):
        got, _ = run_machine("p(_).\n", "p(X)", 1)
        want, _ = run_oracle("p(_).\n", "p(X)", 1)
        assert got == want == ["X = _0"]
