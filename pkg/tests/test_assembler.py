"""Assembler tests: opcode assignment, encode/decode round trips,
container I/O, and the size formula."""

import random

import pytest

from machforge.assembler import (Ins, assemble, assign_opcodes,
                                 code_size_words, disassemble, image_bytes,
                                 image_from_bytes, ins_width, listing,
                                 load_image, save_image)
from machforge.diagnostics import CompileError
from machforge.machdef import mgen, seed_machine
from machforge.terms import Atom, Int


def machine():
    return assign_opcodes(seed_machine())


class TestAssignOpcodes:
    def test_dense_from_zero(self):
        m = mgen(":- pred a/0 + det.\na :- true.\n"
                 ":- pred b/0 + det.\nb :- true.\n"
                 ":- pred c/0 + det.\nc :- true.\n"
                 ":- ins_alias(i1, a).\n:- ins_alias(i2, b).\n"
                 ":- ins_alias(i3, c).\n"
                 ":- ins_entry(i1).\n:- ins_entry(i2).\n:- ins_entry(i3).\n")
        assign_opcodes(m)
        assert sorted(i.opcode for i in m.instructions.values()) == [0, 1, 2]

    def test_preassignment_honored(self):
        m = mgen(":- pred a/0 + det.\na :- true.\n"
                 ":- ins_alias(ux_cons, a).\n:- ins_entry(ux_cons).\n"
                 ":- ins_opcode(ux_cons, 97).\n")
        assign_opcodes(m)
        assert m.instructions["ux_cons"].opcode == 97

    def test_deterministic_across_runs(self):
        a = {n: i.opcode for n, i in machine().instructions.items()}
        b = {n: i.opcode for n, i in machine().instructions.items()}
        assert a == b


def random_program(rng: random.Random, m) -> dict:
    """A random well-formed symbolic program for the seed machine."""
    prog = {}
    names = [f"p{i}" for i in range(rng.randrange(1, 4))]
    keys = [(n, rng.randrange(0, 3)) for n in names]
    insdefs = [d for d in m.instructions.values() if "opn_array" not in d.kinds]
    for key in keys:
        n_ins = rng.randrange(1, 8)
        code = []
        for idx in range(n_ins):
            d = rng.choice(insdefs)
            ops = []
            for kind in d.kinds:
                if kind == "xreg_mutable":
                    ops.append(("x", rng.randrange(0, 32)))
                elif kind == "yreg_mutable":
                    ops.append(("y", rng.randrange(0, 16)))
                elif kind == "constagged":
                    ops.append(("const",
                                rng.choice([Atom("a"), Atom("bb"), Int(7),
                                            Int(-3), Int(0)])))
                elif kind == "functor":
                    ops.append(("functor", (rng.choice(["f", "g"]),
                                            rng.randrange(1, 4))))
                elif kind == "label":
                    if n_ins > 1:
                        ops.append(("lbl", rng.randrange(1, n_ins)))
                    else:
                        ops.append(("plbl", keys[0]))
                elif kind == "uint":
                    ops.append(("count", rng.randrange(0, 6)))
                elif kind == "bltnum":
                    ops.append(("bltin", rng.randrange(0, 13)))
            code.append(Ins(d.name, ops))
        prog[key] = code
    # counted-array instruction on top (exercises the dynamic format)
    if rng.random() < 0.3 and "unify_void_n" in m.instructions:
        k = rng.randrange(2, 5)
        prog[keys[0]].append(Ins("unify_void_n",
                                 [("count", k)]
                                 + [("x", rng.randrange(0, 9))
                                    for _ in range(k)]))
    return prog


class TestRoundtrip:
    def test_empty_program(self):
        m = machine()
        img = assemble({}, m)
        assert img.code == []
        assert disassemble(img, m) == {}

    def test_simple_roundtrip(self):
        m = machine()
        prog = {("p", 1): [
            Ins("get_constant", [("x", 0), ("const", Atom("a"))]),
            Ins("put_constant", [("x", 1), ("const", Int(5))]),
            Ins("proceed", []),
        ]}
        img = assemble(prog, m)
        assert disassemble(img, m) == prog

    def test_random_roundtrip_1000(self):
        m = machine()
        rng = random.Random(99)
        for _ in range(1000):
            prog = random_program(rng, m)
            img = assemble(prog, m)
            back = disassemble(img, m)
            assert back == prog
            img2 = assemble(back, m)
            assert image_bytes(img2) == image_bytes(img)

    def test_counted_width(self):
        m = machine()
        from machforge.transforms import apply_ie, OptionSet
        m2, _ = apply_ie(m, {})
        m2 = assign_opcodes(m2)
        ins = Ins("unify_void_n", [("count", 3), ("x", 1), ("x", 2), ("x", 5)])
        assert ins_width(ins, m2) == 5

    def test_size_formula(self):
        m = machine()
        prog = {("p", 0): [
            Ins("allocate", [("count", 2)]),          # 2 words
            Ins("put_value_x", [("x", 0), ("x", 1)]),  # 3 words
            Ins("proceed", []),                        # 1 word
        ]}
        assert code_size_words(prog, m) == 6
        img = assemble(prog, m)
        assert len(img.code) == 6

    def test_unknown_instruction(self):
        m = machine()
        with pytest.raises(CompileError):
            assemble({("p", 0): [Ins("frobnicate", [])]}, m)

    def test_unknown_opcode_offset_in_error(self):
        m = machine()
        img = assemble({("p", 0): [Ins("proceed", [])]}, m)
        img.code[0] = 511
        with pytest.raises(CompileError) as e:
            disassemble(img, m)
        assert "offset 0" in str(e.value)


class TestContainer:
    def test_file_roundtrip(self, tmp_path):
        m = machine()
        prog = {("p", 1): [Ins("get_constant", [("x", 0), ("const", Atom("z"))]),
                           Ins("proceed", [])]}
        img = assemble(prog, m, query={"entry": ("p", 1), "varnames": ["X"]})
        path = tmp_path / "t.mbc"
        save_image(img, str(path))
        img2 = load_image(str(path))
        assert img2.code == img.code
        assert img2.pool == img.pool
        assert img2.atoms == img.atoms
        assert img2.entries == img.entries
        assert img2.query == img.query

    def test_truncated_stream(self):
        m = machine()
        img = assemble({("p", 0): [Ins("proceed", [])]}, m)
        data = image_bytes(img)[:-3]
        with pytest.raises(CompileError):
            image_from_bytes(data)

    def test_bad_magic(self):
        with pytest.raises(CompileError):
            image_from_bytes(b"XXXX" + b"\x00" * 16)

    def test_listing_format(self):
        m = machine()
        prog = {("p", 0): [Ins("allocate", [("count", 1)]),
                           Ins("proceed", [])]}
        img = assemble(prog, m)
        text = listing(img, m)
        assert "allocate" in text and "proceed" in text
        assert text.splitlines()[1].lstrip().startswith("0")
