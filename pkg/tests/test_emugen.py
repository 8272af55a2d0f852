"""Emulator-compiler tests: dispatch totality, code-generation option
effects (ts/cc/ur/rw), counter behavior, and backend agreement hooks."""

import pytest

from machforge import frontend
from machforge.assembler import Ins, assign_opcodes, assemble
from machforge.emugen import emucomp
from machforge.ir import TSwitch
from machforge.machdef import seed_machine
from machforge.pybackend import eval_ir
from machforge.transforms import OptionSet


def machine():
    return assign_opcodes(seed_machine())


def build(bits):
    m = machine()
    return m, emucomp(m, OptionSet.from_bits(bits))


def run_goal(ir, m, src, goaltext, maxsol=5):
    prog = frontend.parse_program(src)
    goal = frontend.parse_goal(goaltext)
    code = frontend.compile_prolog(prog)
    qcode, qvars = frontend.compile_query(goal)
    code[("$query", 0)] = qcode
    img = assemble(code, m, query={"entry": ("$query", 0), "varnames": qvars})
    return eval_ir(ir, img, max_solutions=maxsol)


class TestDispatch:
    def test_totality(self):
        m, ir = build("0000000")
        emu = ir.unit.funcs["emu"]
        switches = [emu.graph[b].term for b in ir.dispatch_switches]
        opcodes = {i.opcode for i in m.instructions.values()}
        for sw in switches:
            assert isinstance(sw, TSwitch)
            assert {v for v, _ in sw.cases} == opcodes
            assert sw.default is not None

    def test_single_noop_machine(self):
        from machforge.machdef import mgen
        m = assign_opcodes(mgen(
            ":- pred nop_p/0 + det.\nnop_p :- true.\n"
            ":- ins_alias(nop, nop_p).\n:- ins_entry(nop).\n"))
        ir = emucomp(m, OptionSet())
        emu = ir.unit.funcs["emu"]
        sw = emu.graph[ir.dispatch_switches[0]].term
        assert len(sw.cases) == 1

    def test_dispatch_counter_counts_fetches(self):
        m, ir = build("0000000")
        out = run_goal(ir, m, "t.\n", "t", 1)
        # allocate, call, proceed, solution plus clause code: exact count
        # equals a hand trace of the instruction stream
        # $query: allocate(0) call(t/0) solution(0); t/0: proceed
        assert out.counters["dispatches"] == 4

    def test_step_budget(self):
        from machforge.machdef import Limits
        m, ir = build("0000000")
        prog = frontend.parse_program("loop :- loop.\n")
        goal = frontend.parse_goal("loop")
        code = frontend.compile_prolog(prog)
        qcode, qvars = frontend.compile_query(goal)
        code[("$query", 0)] = qcode
        img = assemble(code, m, query={"entry": ("$query", 0),
                                       "varnames": qvars})
        out = eval_ir(ir, img, limits=Limits(step_budget=5000))
        assert out.status == "steps"

    def test_area_overflow(self):
        from machforge.machdef import Limits, FRAME_BASE
        m, ir = build("0000000")
        prog = frontend.parse_program(
            "grow(X) :- grow([X]).\n")
        goal = frontend.parse_goal("grow(0)")
        code = frontend.compile_prolog(prog)
        qcode, qvars = frontend.compile_query(goal)
        code[("$query", 0)] = qcode
        img = assemble(code, m, query={"entry": ("$query", 0),
                                       "varnames": qvars})
        out = eval_ir(ir, img, limits=Limits(heap_words=2048))
        assert out.status.startswith("overflow")


class TestRw:
    def test_two_switches(self):
        _, ir0 = build("0000000")
        _, ir1 = build("0000001")
        assert len(ir0.dispatch_switches) == 1
        assert len(ir1.dispatch_switches) == 2

    def test_block_growth_only_in_mode_dependent(self):
        m0, ir0 = build("0000000")
        m1, ir1 = build("0000001")
        mode_dep = {"unify_variable_x", "unify_variable_y", "unify_value_x",
                    "unify_value_y", "unify_constant", "unify_void",
                    "unify_voidskip"}
        for name in ir0.ins_block_counts:
            c0 = ir0.ins_block_counts[name]
            c1 = ir1.ins_block_counts[name]
            if name in mode_dep:
                assert c1 > c0, name
            else:
                assert c1 == c0, name

    def test_outcomes_unchanged(self):
        src = "p([f(X)|_], X).\n"
        m0, ir0 = build("0000000")
        m1, ir1 = build("0000001")
        a = run_goal(ir0, m0, src, "p([f(9), f(8)], V)")
        b = run_goal(ir1, m1, src, "p([f(9), f(8)], V)")
        assert a.solutions == b.solutions == ["V = 9"]


class TestTs:
    def test_switch_lowering_used(self):
        _, ir_off = build("0000000")
        _, ir_on = build("0001000")
        def count_switches(ir):
            emu = ir.unit.funcs["emu"]
            disp = set(ir.dispatch_switches)
            return sum(1 for b in range(len(emu.graph))
                       if b not in disp and isinstance(emu.graph[b].term, TSwitch))
        assert count_switches(ir_off) == 0
        assert count_switches(ir_on) > 0

    def test_outcomes_unchanged(self):
        src = "p(f(a)).\np([x]).\np(7).\np(c).\n"
        m0, ir0 = build("0000000")
        m1, ir1 = build("0001000")
        for g in ("p(f(a))", "p([x])", "p(7)", "p(c)", "p(X)"):
            a = run_goal(ir0, m0, src, g)
            b = run_goal(ir1, m1, src, g)
            assert a.solutions == b.solutions


class TestCc:
    def test_blocks_grow_and_outcomes_match(self):
        m0, ir0 = build("0000000")
        m1, ir1 = build("0000100")
        assert ir1.block_count > ir0.block_count
        src = "p(a).\np(b).\n"
        a = run_goal(ir0, m0, src, "p(X)")
        b = run_goal(ir1, m1, src, "p(X)")
        assert a.solutions == b.solutions
        assert a.counters == b.counters


class TestUr:
    def test_partial_unfold_jumps_into_shared_suffix(self):
        from machforge.transforms import (MergeRule, apply_im)
        src = ("p(A, B) :- q(A, B, A, B).\n"
               "q(W, X, Y, Z) :- r(W, X, Y, Z).\n"
               "r(_, _, _, _).\n")
        prog = frontend.parse_program(src)
        code = frontend.compile_prolog(prog)
        qcode, qvars = frontend.compile_query(frontend.parse_goal("p(1, 2)"))
        code[("$query", 0)] = qcode
        rules = [MergeRule(("get_variable_y", "get_variable_y"), "all"),
                 MergeRule(("allocate", "get_variable_y", "get_variable_y"), 1)]
        outs = {}
        for bits in ("0010000", "0010010"):
            opts = OptionSet.from_bits(bits)
            m2, code2 = apply_im(rules, machine(), code)
            m2 = assign_opcodes(m2)
            ir = emucomp(m2, opts)
            img = assemble(code2, m2, query={"entry": ("$query", 0),
                                             "varnames": qvars})
            outs[bits] = (eval_ir(ir, img), ir.block_count)
        (full, nfull), (partial, npartial) = outs["0010000"], outs["0010010"]
        assert full.solutions == partial.solutions
        assert full.counters["dispatches"] == partial.counters["dispatches"]
        # honoring the unfold spec shares the suffix code
        assert npartial < nfull


class TestNativeSource:
    def test_emit_is_deterministic(self):
        from machforge.cbackend import emit_native
        _, ir = build("0000000")
        assert emit_native(ir) == emit_native(ir)

    def test_rw_emits_two_switches(self):
        from machforge.cbackend import emit_native
        _, ir0 = build("0000000")
        _, ir1 = build("0000001")
        c0 = emit_native(ir0)
        c1 = emit_native(ir1)
        assert c0.count("switch (code[g.p])") == 1
        assert c1.count("switch (code[g.p])") == 2

    def test_empty_machine_emits(self):
        from machforge.cbackend import emit_native
        from machforge.machdef import mgen
        m = assign_opcodes(mgen(""))
        ir = emucomp(m, OptionSet())
        text = emit_native(ir)
        assert "void emu" in text
