"""Instruction-set transformation tests: merging, counted encoding,
builtin specialization, variant enumeration, and commutation."""

import pytest

from machforge.assembler import Ins, assign_opcodes, assemble, code_size_words
from machforge.dialect.syntax import Conj, Unify, leaf_goals
from machforge.machdef import BUILTIN_BY_NAME, seed_machine
from machforge.terms import Atom, Int
from machforge.transforms import (MergeRule, OptionSet, apply_ib, apply_ie,
                                  apply_im, apply_variant, default_rules,
                                  enumerate_variants, merged_name,
                                  parse_rules)


def machine():
    return assign_opcodes(seed_machine())


class TestOptionSet:
    def test_count_is_96(self):
        assert len(enumerate_variants()) == 96

    def test_all_false_present(self):
        assert OptionSet() in enumerate_variants()

    def test_no_ie_without_im(self):
        for v in enumerate_variants():
            assert not (v.ie and not v.im)
        with pytest.raises(ValueError):
            OptionSet(ie=True)

    def test_canonical_and_duplicate_free(self):
        vs = enumerate_variants()
        assert vs == enumerate_variants()
        assert len({v.bits for v in vs}) == 96

    def test_bits_roundtrip(self):
        v = OptionSet(ib=True, im=True, rw=True)
        assert OptionSet.from_bits(v.bits) == v
        assert OptionSet.from_names("ib,im,rw") == v


class TestRules:
    def test_parse(self):
        rules = parse_rules("a+b unfold=all\nx+y+z unfold=1\n# comment\n")
        assert rules[0] == MergeRule(("a", "b"), "all")
        assert rules[1] == MergeRule(("x", "y", "z"), 1)

    def test_default_rules_include_pairs(self):
        rules = default_rules(machine())
        seqs = {r.seq for r in rules}
        assert ("get_variable_y", "get_variable_y") in seqs
        assert ("allocate", "get_variable_y", "get_variable_y") in seqs
        assert ("put_constant", "put_constant") in seqs


class TestIm:
    RULE = [MergeRule(("get_variable_y", "get_variable_y"), "all")]

    def test_pattern_replaced(self):
        m = machine()
        prog = {("p", 2): [
            Ins("get_variable_y", [("x", 0), ("y", 1)]),
            Ins("get_variable_y", [("x", 2), ("y", 3)]),
            Ins("proceed", []),
        ]}
        m2, prog2 = apply_im(self.RULE, m, prog)
        name = merged_name(("get_variable_y", "get_variable_y"))
        assert [i.name for i in prog2[("p", 2)]] == [name, "proceed"]
        assert prog2[("p", 2)][0].operands == (("x", 0), ("y", 1),
                                               ("x", 2), ("y", 3))
        assert name in m2.instructions

    def test_merged_body_is_sequential_composition(self):
        m = machine()
        m2, _ = apply_im(self.RULE, m, {})
        name = merged_name(("get_variable_y", "get_variable_y"))
        ins = m2.instructions[name]
        pred = m2.program.predicates[(ins.base, ins.arity)]
        kinds = [type(g).__name__ for g in leaf_goals(pred.body)]
        # two copies of move/2: ReadMut + AssignMut each
        assert kinds == ["ReadMut", "AssignMut", "ReadMut", "AssignMut"]

    def test_no_pattern_unchanged(self):
        m = machine()
        prog = {("p", 0): [Ins("proceed", [])]}
        _, prog2 = apply_im(self.RULE, m, prog)
        assert prog2 == prog

    def test_overlap_greedy_left(self):
        m = machine()
        mk = lambda: Ins("get_variable_y", [("x", 0), ("y", 0)])
        prog = {("p", 0): [mk(), mk(), mk()]}
        _, prog2 = apply_im(self.RULE, m, prog)
        names = [i.name for i in prog2[("p", 0)]]
        # exactly one merge applies; the third instruction is left alone
        assert names == [merged_name(("get_variable_y", "get_variable_y")),
                         "get_variable_y"]
        # brute force: count non-overlapping occurrences left to right
        seq = ["m", "m", "m"]
        count = 0
        i = 0
        while i + 1 < len(seq):
            if seq[i] == seq[i + 1] == "m":
                count += 1
                i += 2
            else:
                i += 1
        assert count == 1

    def test_longest_rule_first(self):
        m = machine()
        rules = [MergeRule(("get_variable_y", "get_variable_y"), "all"),
                 MergeRule(("allocate", "get_variable_y", "get_variable_y"), 1)]
        prog = {("p", 0): [
            Ins("allocate", [("count", 2)]),
            Ins("get_variable_y", [("x", 0), ("y", 0)]),
            Ins("get_variable_y", [("x", 1), ("y", 1)]),
        ]}
        _, prog2 = apply_im(rules, m, prog)
        assert [i.name for i in prog2[("p", 0)]] == \
            [merged_name(("allocate", "get_variable_y", "get_variable_y"))]

    def test_unknown_instruction_rejected(self):
        from machforge.diagnostics import CompileError
        with pytest.raises(CompileError):
            apply_im([MergeRule(("no_such_ins", "proceed"), "all")],
                     machine(), {})

    def test_dispatch_reduction(self):
        # merged program must dispatch strictly less on a matching stream
        m = machine()
        from machforge.emugen import emucomp
        from machforge.pybackend import eval_ir
        from machforge import frontend
        prog = frontend.parse_program("p(X, Y) :- q(X, Y, X, Y).\n"
                                      "q(_, _, _, _).\n")
        goal = frontend.parse_goal("p(1, 2)")
        code = frontend.compile_prolog(prog)
        qcode, qvars = frontend.compile_query(goal)
        code[("$query", 0)] = qcode
        counts = {}
        for bits in ("0000000", "0010000"):
            opts = OptionSet.from_bits(bits)
            m2, code2 = apply_variant(opts, m, code, default_rules(m))
            m2 = assign_opcodes(m2)
            img = assemble(code2, m2, query={"entry": ("$query", 0),
                                             "varnames": qvars})
            out = eval_ir(emucomp(m2, opts), img)
            counts[bits] = out.counters["dispatches"]
        assert counts["0010000"] < counts["0000000"]


class TestIe:
    def test_run_collapsed(self):
        m = machine()
        prog = {("p", 0): [
            Ins("unify_void", [("x", 1)]),
            Ins("unify_void", [("x", 2)]),
            Ins("unify_void", [("x", 5)]),
            Ins("proceed", []),
        ]}
        m2, prog2 = apply_ie(m, prog)
        code = prog2[("p", 0)]
        assert code[0].name == "unify_void_n"
        assert code[0].operands == (("count", 3), ("x", 1), ("x", 2), ("x", 5))

    def test_single_occurrence_unchanged(self):
        m = machine()
        prog = {("p", 0): [Ins("unify_void", [("x", 1)]), Ins("proceed", [])]}
        _, prog2 = apply_ie(m, prog)
        assert [i.name for i in prog2[("p", 0)]] == ["unify_void", "proceed"]

    def test_size_reduction_run_of_5(self):
        m = machine()
        run5 = [Ins("unify_void", [("x", i)]) for i in range(5)]
        prog = {("p", 0): run5}
        assert code_size_words(prog, m) == 10
        m2, prog2 = apply_ie(m, prog)
        m2 = assign_opcodes(m2)
        assert code_size_words(prog2, m2) == 7

    def test_size_rule_general(self):
        # 2k words become k+2 for any run of k >= 2
        m = machine()
        for k in range(2, 7):
            prog = {("p", 0): [Ins("unify_void", [("x", i)]) for i in range(k)]}
            m2, prog2 = apply_ie(m, prog)
            m2 = assign_opcodes(m2)
            assert code_size_words(prog2, m2) == k + 2


class TestIb:
    def test_bridge_specialized(self):
        m = machine()
        lt = BUILTIN_BY_NAME["lt"].id
        prog = {("p", 0): [
            Ins("bltin2s", [("bltin", lt), ("x", 0), ("x", 1)]),
            Ins("proceed", []),
        ]}
        m2, prog2 = apply_ib(m, prog)
        code = prog2[("p", 0)]
        assert code[0].name == "bltin2s_lt"
        assert code[0].operands == (("x", 0), ("x", 1))

    def test_no_builtins_unchanged(self):
        m = machine()
        prog = {("p", 0): [Ins("proceed", [])]}
        _, prog2 = apply_ib(m, prog)
        assert prog2 == prog

    def test_specialized_body_is_bridge_with_fixed_id(self):
        m = machine()
        m2, _ = apply_ib(m, {})
        for bname in ("bltin2s_lt", "bltin3d_add"):
            ins = m2.instructions[bname]
            pred = m2.program.predicates[(ins.base, ins.arity)]
            goals = list(leaf_goals(pred.body))
            # first goal fixes the abstraction argument to the builtin id
            assert isinstance(goals[0], Unify)
            assert isinstance(goals[0].b, Int)
            generic = m2.instructions[bname.rsplit("_", 1)[0]]
            gpred = m2.program.predicates[(generic.base, generic.arity)]
            assert len(goals) == len(list(leaf_goals(gpred.body))) + 1

    def test_word_count_drops_by_k(self):
        m = machine()
        lt = BUILTIN_BY_NAME["lt"].id
        add = BUILTIN_BY_NAME["add"].id
        prog = {("p", 0): [
            Ins("bltin2s", [("bltin", lt), ("x", 0), ("x", 1)]),
            Ins("bltin3d", [("bltin", add), ("x", 0), ("x", 1), ("x", 2)]),
            Ins("proceed", []),
        ]}
        before = code_size_words(prog, m)
        m2, prog2 = apply_ib(m, prog)
        m2 = assign_opcodes(m2)
        assert code_size_words(prog2, m2) == before - 2
