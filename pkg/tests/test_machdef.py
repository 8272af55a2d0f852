"""Machine-definition tests: word encoding, the dereference/bind
mirrors, mgen, and .mdef round-tripping."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from machforge.diagnostics import CompileError
from machforge.machdef import (NUM_MAX, NUM_MIN, TAG_ATM, TAG_LST, TAG_NUM,
                               TAG_REF, TAG_STR, TAGS, bind_mirror,
                               deref_mirror, functor_parts, load_mdef, mgen,
                               mkatom, mkfunctor, mknum, mkword, num_value,
                               save_mdef, seed_machine, word_tag, word_val)

MINI_MACHINE = """
:- pred u_cons(+A, +Cons) :: mut(tagged) * tagged + semidet.
u_cons(A, Cons) :-
    deref(A@, Td),
    ( tagof(Td, ref) -> bind_cons(Td, Cons)
    ; Td = Cons
    ).

:- pred deref(+T, -Td) :: tagged * tagged + det.
deref(T, Td) :-
    ( tagof(T, ref) ->
        T1 = ~tagval(T)@,
        ( T = T1 -> Td = T1 ; deref(T1, Td) )
    ; Td = T
    ).

:- pred bind_cons(+Var, +Cons) :: tagged * tagged + det.
bind_cons(Var, Cons) :-
    ( trail_cond(Var) -> trail_push(Var) ; true ),
    ~tagval(Var) <= Cons.

:- pred move(+A, +B) :: mut(tagged) * mut(tagged) + det.
move(A, B) :- T = A@, B <= T.

:- ins_alias(ux_cons, u_cons(xreg_mutable, constagged)).
:- ins_alias(movexy, move(xreg_mutable, yreg_mutable)).
:- ins_entry(ux_cons).
:- ins_entry(movexy).
:- ins_opcode(ux_cons, 97).
"""


class TestWords:
    def test_tag_roundtrip_examples(self):
        for tagname, tag in TAGS.items():
            w = mkword(tag, 1234)
            assert word_tag(w) == tag
            assert word_val(w) == 1234

    @given(st.sampled_from(sorted(TAGS.values())),
           st.integers(0, (1 << 40) - 1))
    @settings(max_examples=200)
    def test_tag_roundtrip(self, tag, payload):
        w = mkword(tag, payload)
        assert (word_tag(w), word_val(w)) == (tag, payload)

    @given(st.integers(NUM_MIN, NUM_MAX))
    @settings(max_examples=200)
    def test_num_roundtrip(self, n):
        assert num_value(mknum(n)) == n

    def test_num_overflow(self):
        with pytest.raises(OverflowError):
            mknum(NUM_MAX + 1)

    def test_functor_roundtrip(self):
        w = mkfunctor(7, 3)
        assert functor_parts(w) == (7, 3)
        assert word_tag(w) == TAG_ATM

    def test_atom_is_arity_zero_functor(self):
        assert functor_parts(mkatom(5)) == (5, 0)


class TestDerefMirror:
    def test_unbound_self_reference(self):
        mem = [0] * 8
        mem[3] = mkword(TAG_REF, 3)
        assert deref_mirror(mem, mem[3]) == mem[3]

    def test_chain_of_two(self):
        mem = [0] * 8
        mem[0] = mkatom(4)
        mem[1] = mkword(TAG_REF, 0)
        mem[2] = mkword(TAG_REF, 1)
        assert deref_mirror(mem, mem[2]) == mkatom(4)

    def test_idempotent(self):
        mem = [0] * 8
        mem[0] = mknum(9)
        mem[1] = mkword(TAG_REF, 0)
        w = deref_mirror(mem, mem[1])
        assert deref_mirror(mem, w) == w

    def test_bind(self):
        mem = [0] * 4
        mem[2] = mkword(TAG_REF, 2)
        bind_mirror(mem, mem[2], mknum(5))
        assert deref_mirror(mem, mkword(TAG_REF, 2)) == mknum(5)


class TestMgen:
    def test_alias_formats(self):
        m = mgen(MINI_MACHINE)
        assert m.instructions["ux_cons"].kinds == ["xreg_mutable", "constagged"]
        assert m.instructions["movexy"].kinds == ["xreg_mutable", "yreg_mutable"]

    def test_preassigned_opcode(self):
        m = mgen(MINI_MACHINE)
        assert m.instructions["ux_cons"].opcode == 97

    def test_empty_definition(self):
        m = mgen("")
        assert m.instructions == {}

    def test_alias_kind_type_mismatch(self):
        bad = MINI_MACHINE + ":- ins_alias(bad, move(constagged, constagged)).\n:- ins_entry(bad).\n"
        with pytest.raises(CompileError):
            mgen(bad)

    def test_seed_machine_loads(self):
        m = seed_machine()
        assert len(m.instructions) >= 32
        for name in ("put_constant", "get_structure", "unify_void", "call",
                     "try_me_else", "solution", "bltin3d"):
            assert name in m.instructions

    def test_mdef_roundtrip(self, tmp_path):
        from machforge.assembler import assign_opcodes
        m = assign_opcodes(mgen(MINI_MACHINE))
        path = tmp_path / "mini.mdef"
        save_mdef(m, str(path))
        m2 = load_mdef(str(path))
        assert {n: i.opcode for n, i in m2.instructions.items()} == \
               {n: i.opcode for n, i in m.instructions.items()}
        assert {n: i.kinds for n, i in m2.instructions.items()} == \
               {n: i.kinds for n, i in m.instructions.items()}


class TestBacktrackingRestores:
    def test_heap_restored_between_solutions(self):
        """Bind under a choice point, fail, observe the original value."""
        from machforge.assembler import assign_opcodes, assemble
        from machforge.emugen import emucomp
        from machforge.pybackend import eval_ir
        from machforge.transforms import OptionSet
        from machforge import frontend

        prog = frontend.parse_program("p(a).\np(b).\np(c).\n")
        goal = frontend.parse_goal("p(X)")
        code = frontend.compile_prolog(prog)
        qcode, qvars = frontend.compile_query(goal)
        code[("$query", 0)] = qcode
        m = assign_opcodes(seed_machine())
        img = assemble(code, m, query={"entry": ("$query", 0),
                                       "varnames": qvars})
        ir = emucomp(m, OptionSet())
        out = eval_ir(ir, img, max_solutions=5)
        # each retry must see the query variable unbound again
        assert out.solutions == ["X = a", "X = b", "X = c"]
        assert out.counters["trail_pushes"] >= 1
