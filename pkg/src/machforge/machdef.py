"""Machine definition: tagged words, memory layout, runtime primitives,
and ``mgen`` (building a machine definition from dialect source).

Word model: 64-bit logical words with 3 low tag bits and the payload in
the upper 61 bits.  Atoms are interned; integers are small ints encoded
in two's complement (overflow is a runtime error).  Functor cells pack
(atom index, arity) into an atm-tagged word.

Memory is one flat word array shared by X registers, a scratch area for
local mutables, the frame stack and the heap, so that a mutable-cell
address is an ordinary integer in both execution backends.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from typing import Optional

from .analysis import BuiltinSig, analyze
from .diagnostics import NOPOS, error
from .dialect import normalize, parse_source

# ---------------------------------------------------------------------------
# Tags and word encoding

TAG_REF = 0
TAG_STR = 1
TAG_LST = 2
TAG_ATM = 3
TAG_NUM = 4

TAGS = {"ref": TAG_REF, "str": TAG_STR, "lst": TAG_LST,
        "atm": TAG_ATM, "num": TAG_NUM}

TAG_BITS = 3
PAYLOAD_BITS = 61
PAYLOAD_MASK = (1 << PAYLOAD_BITS) - 1
NUM_MIN = -(1 << (PAYLOAD_BITS - 1))
NUM_MAX = (1 << (PAYLOAD_BITS - 1)) - 1
ARITY_BITS = 12
ARITY_MASK = (1 << ARITY_BITS) - 1


def mkword(tag: int, payload: int) -> int:
    return ((payload & PAYLOAD_MASK) << TAG_BITS) | tag


def word_tag(w: int) -> int:
    return w & 0b111


def word_val(w: int) -> int:
    return w >> TAG_BITS


def mknum(n: int) -> int:
    if not (NUM_MIN <= n <= NUM_MAX):
        raise OverflowError(f"integer {n} does not fit a small-int payload")
    return mkword(TAG_NUM, n)


def num_value(w: int) -> int:
    v = word_val(w)
    if v >= (1 << (PAYLOAD_BITS - 1)):
        v -= 1 << PAYLOAD_BITS
    return v


def mkfunctor(atom_idx: int, arity: int) -> int:
    if arity > ARITY_MASK:
        raise OverflowError(f"arity {arity} too large")
    return mkword(TAG_ATM, (atom_idx << ARITY_BITS) | arity)


def functor_parts(w: int) -> tuple[int, int]:
    v = word_val(w)
    return v >> ARITY_BITS, v & ARITY_MASK


def mkatom(atom_idx: int) -> int:
    # plain atoms are functor words of arity 0
    return mkfunctor(atom_idx, 0)


# ---------------------------------------------------------------------------
# Memory layout and limits

X_BASE = 0
N_XREGS = 256
SCRATCH_BASE = 256
N_SCRATCH = 256
FRAME_BASE = 512


@dataclass(frozen=True)
class Limits:
    heap_words: int = 1 << 20
    frame_words: int = 1 << 18
    choice_slots: int = 1 << 18
    trail_words: int = 1 << 18
    step_budget: int = 200_000_000

    @property
    def heap_base(self) -> int:
        return FRAME_BASE + self.frame_words

    @property
    def mem_words(self) -> int:
        return self.heap_base + self.heap_words


DEFAULT_LIMITS = Limits()


# ---------------------------------------------------------------------------
# Reference-semantics mirrors of the dialect-defined runtime predicates.
# The compiled emulator uses the dialect bodies; these mirrors serve as the
# independent oracle side for machine-level tests.


def deref_mirror(mem: list, w: int) -> int:
    while word_tag(w) == TAG_REF:
        nxt = mem[word_val(w)]
        if nxt == w:
            return w
        w = nxt
    return w


def bind_mirror(mem: list, var_word: int, value: int) -> None:
    mem[word_val(var_word)] = value


# ---------------------------------------------------------------------------
# Runtime primitive signatures (visible to analysis as builtins)

PRIM_SIGS = [
    BuiltinSig("tagof", ["+", "+"], ["tagged", "tagged"], "semidet"),
    BuiltinSig("tagval", ["+", "-"], ["tagged", ("mut", "tagged")]),
    BuiltinSig("heap_alloc_var", ["-"], ["tagged"]),
    BuiltinSig("heap_push", ["+"], ["tagged"]),
    BuiltinSig("heap_push_var", [], []),
    BuiltinSig("heap_push_functor", ["+", "-"], ["tagged", "tagged"]),
    BuiltinSig("heap_top_lst", ["-"], ["tagged"]),
    BuiltinSig("functor_is", ["+", "+"], ["tagged", "tagged"], "semidet"),
    BuiltinSig("functor_arity", ["+", "-"], ["tagged", "int"]),
    BuiltinSig("mut_offset", ["+", "+", "-"],
               [("mut", "tagged"), "int", ("mut", "tagged")]),
    BuiltinSig("older_cell", ["+", "+"], ["tagged", "tagged"], "semidet"),
    BuiltinSig("set_s_str", ["+"], ["tagged"]),
    BuiltinSig("set_s_lst", ["+"], ["tagged"]),
    BuiltinSig("set_write_mode", [], []),
    BuiltinSig("read_mode", [], [], "semidet"),
    BuiltinSig("s_read", ["-"], ["tagged"]),
    BuiltinSig("s_skip", [], []),
    BuiltinSig("trail_cond", ["+"], ["tagged"], "semidet"),
    BuiltinSig("trail_push", ["+"], ["tagged"]),
    BuiltinSig("push_frame", ["+"], ["int"]),
    BuiltinSig("pop_frame", [], []),
    BuiltinSig("push_choice", ["+", "+"], ["int", "int"]),
    BuiltinSig("set_choice_alt", ["+"], ["int"]),
    BuiltinSig("pop_choice", [], []),
    BuiltinSig("cut_to_b0", [], []),
    BuiltinSig("set_b0", [], []),
    BuiltinSig("record_solution", ["+"], ["int"]),
    BuiltinSig("more_solutions", [], [], "semidet"),
    BuiltinSig("iadd", ["+", "+", "-"], ["int", "int", "int"]),
    BuiltinSig("isub", ["+", "+", "-"], ["int", "int", "int"]),
    BuiltinSig("imul", ["+", "+", "-"], ["int", "int", "int"]),
    BuiltinSig("opn_array_len", ["+", "-"], ["int", "int"]),
    BuiltinSig("opn_array_xreg", ["+", "+", "-"],
               ["int", "int", ("mut", "tagged")]),
    BuiltinSig("call_bltin1s", ["+", "+"], ["int", "tagged"], "semidet"),
    BuiltinSig("call_bltin2s", ["+", "+", "+"],
               ["int", "tagged", "tagged"], "semidet"),
    BuiltinSig("call_bltin2d", ["+", "+", "-"], ["int", "tagged", "tagged"]),
    BuiltinSig("call_bltin3d", ["+", "+", "+", "-"],
               ["int", "tagged", "tagged", "tagged"]),
    # control transfers (no dataflow effect)
    BuiltinSig("next_ins", [], []),
    BuiltinSig("fail_ins", [], []),
    BuiltinSig("halt_ins", [], []),
    BuiltinSig("goto_ins", ["+"], ["int"]),
    BuiltinSig("goto_cont", [], []),
    BuiltinSig("set_cont_next", [], []),
]

# Primitives that appear as pure branch conditions
SEMIDET_PRIMS = {"tagof", "functor_is", "older_cell", "read_mode",
                 "trail_cond", "more_solutions", "call_bltin1s",
                 "call_bltin2s"}

# Pure single-result primitives that lower to expressions
PURE_VALUE_PRIMS = {"tagval", "functor_arity", "mut_offset",
                    "iadd", "isub", "imul",
                    "opn_array_len", "opn_array_xreg"}

CONTROL_PRIMS = {"next_ins", "fail_ins", "halt_ins", "goto_ins",
                 "goto_cont", "set_cont_next"}


# ---------------------------------------------------------------------------
# Prolog-level builtin table (bridged by the bltin* instructions)


@dataclass(frozen=True)
class Bltin:
    id: int
    name: str
    bridge: str                  # bltin1s | bltin2s | bltin2d | bltin3d


BUILTIN_TABLE = [
    Bltin(0, "lt", "bltin2s"),
    Bltin(1, "le", "bltin2s"),
    Bltin(2, "gt", "bltin2s"),
    Bltin(3, "ge", "bltin2s"),
    Bltin(4, "numeq", "bltin2s"),
    Bltin(5, "numne", "bltin2s"),
    Bltin(6, "add", "bltin3d"),
    Bltin(7, "sub", "bltin3d"),
    Bltin(8, "mul", "bltin3d"),
    Bltin(9, "idiv", "bltin3d"),
    Bltin(10, "mod", "bltin3d"),
    Bltin(11, "neg", "bltin2d"),
    Bltin(12, "isnum", "bltin1s"),
]

BUILTIN_BY_NAME = {b.name: b for b in BUILTIN_TABLE}
BUILTIN_BY_ID = {b.id: b for b in BUILTIN_TABLE}


# ---------------------------------------------------------------------------
# Operand kinds

OPERAND_KINDS = {
    "xreg_mutable": ("mut", "tagged"),
    "yreg_mutable": ("mut", "tagged"),
    "constagged": "tagged",
    "functor": "tagged",
    "label": "int",
    "uint": "int",
    "bltnum": "int",
    "opn_array": "int",
}


@dataclass
class InsDef:
    """One emulator instruction: a name, an operand format, and the base
    predicate providing the body."""

    name: str
    base: str                    # base predicate name
    kinds: list                  # operand kinds, in operand order
    opcode: Optional[int] = None
    collapsible: bool = False
    merged_from: Optional[list] = None   # component instruction names
    unfold: object = None                # unfold spec carried by merge rules

    @property
    def arity(self) -> int:
        return len(self.kinds)

    def fixed_width(self) -> Optional[int]:
        """Encoded words (opcode + operands); None when operand count is
        dynamic (array operands carry a count word plus that many words)."""
        if "opn_array" in self.kinds:
            return None
        return 1 + len(self.kinds)


@dataclass
class MachineDef:
    program: object              # analyzed NormProgram (defI bodies)
    facts: object                # analysis Facts (refmodes etc.)
    instructions: dict           # name -> InsDef
    merge_rules: list = field(default_factory=list)   # [(seq, unfold)]
    source: str = ""
    collapsible: set = field(default_factory=set)

    def clone(self) -> "MachineDef":
        return copy.deepcopy(self)

    def opcode_table(self) -> list:
        rows = [(i.opcode, i.name) for i in self.instructions.values()
                if i.opcode is not None]
        return sorted(rows)

    def by_opcode(self) -> dict:
        return {i.opcode: i for i in self.instructions.values()
                if i.opcode is not None}


# Instructions collapsed by the operand-encoding transformation
COLLAPSIBLE_SEED = {"unify_void"}


def mgen(source: str, filename: str = "machine.ipl") -> MachineDef:
    """Normalize and analyze an emulator definition, derive instruction
    formats from alias declarations, and collect merge rules."""
    decls, clauses = parse_source(source, filename)
    prog = normalize(decls, clauses)
    ann, facts = analyze(prog, builtins=PRIM_SIGS)
    if facts.refmode_errors or facts.diagnostics:
        raise error(NOPOS, "machdef",
                    "machine definition failed analysis: "
                    + "; ".join(str(d) for d in
                                facts.refmode_errors + facts.diagnostics))

    aliases = {}
    for al in ann.aliases:
        if al.name in aliases:
            raise error(al.pos, "machdef", f"duplicate alias {al.name}")
        for k in al.argkinds:
            if k not in OPERAND_KINDS:
                raise error(al.pos, "machdef", f"unknown operand kind {k}")
        basekey = (al.base, len(al.argkinds))
        if basekey not in ann.predicates:
            raise error(al.pos, "machdef",
                        f"alias {al.name}: no base predicate "
                        f"{al.base}/{len(al.argkinds)}")
        asrt = ann.assertions.get(basekey)
        if asrt and asrt.argtypes:
            for k, ty in zip(al.argkinds, asrt.argtypes):
                if OPERAND_KINDS[k] != ty:
                    raise error(al.pos, "machdef",
                                f"alias {al.name}: operand kind {k} does not "
                                f"carry type {ty}")
        aliases[al.name] = al

    instructions: dict = {}
    merge_rules: list = []
    for entry in ann.entries:
        if len(entry.seq) == 1:
            name = entry.seq[0]
            if name in instructions:
                raise error(entry.pos, "machdef", f"duplicate instruction {name}")
            al = aliases.get(name)
            if al is None:
                raise error(entry.pos, "machdef",
                            f"entry {name} has no alias declaration")
            instructions[name] = InsDef(name, al.base, list(al.argkinds),
                                        opcode=ann.opcodes.get(name),
                                        collapsible=name in COLLAPSIBLE_SEED)
        else:
            for n in entry.seq:
                if n not in aliases:
                    raise error(entry.pos, "machdef",
                                f"merge entry references unknown instruction {n}")
            merge_rules.append((list(entry.seq), entry.unfold))

    return MachineDef(ann, facts, instructions, merge_rules, source,
                      set(COLLAPSIBLE_SEED))


def seed_machine() -> MachineDef:
    """The machine shipped with the package."""
    import importlib.resources as res
    src = (res.files("machforge") / "machine" / "seed.ipl").read_text()
    return mgen(src, "seed.ipl")


def seed_rules_text() -> str:
    import importlib.resources as res
    return (res.files("machforge") / "machine" / "seed.rules").read_text()


# ---------------------------------------------------------------------------
# .mdef serialization


def save_mdef(m: MachineDef, path: str) -> None:
    lines = ["machdef 1"]
    for b in BUILTIN_TABLE:
        lines.append(f"bltin {b.id} {b.name} {b.bridge}")
    for ins in m.instructions.values():
        op = ins.opcode if ins.opcode is not None else "-"
        kinds = " ".join(ins.kinds) if ins.kinds else "-"
        lines.append(f"ins {op} {ins.name} {kinds}")
    lines.append("note: constants are pooled 64-bit tagged words; "
                 "operands are 32-bit words (pool indices for constants)")
    lines.append("source <<<")
    lines.append(m.source.rstrip("\n"))
    lines.append(">>>")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_mdef(path: str) -> MachineDef:
    text = open(path).read()
    m = re.search(r"^source <<<\n(.*)\n>>>\s*$", text, re.S | re.M)
    if not m or not text.startswith("machdef 1"):
        raise error(NOPOS, "mdef", f"{path} is not a machdef file")
    mdef = mgen(m.group(1) + "\n", path)
    for line in text.splitlines():
        if line.startswith("ins "):
            parts = line.split()
            op, name = parts[1], parts[2]
            if name not in mdef.instructions:
                raise error(NOPOS, "mdef", f"unknown instruction {name} in {path}")
            if op != "-":
                mdef.instructions[name].opcode = int(op)
    return mdef
