"""Symbolic bytecode and its encoded image form.

An instruction is one opcode word plus one 32-bit word per operand
(array operands: a count word followed by that many words).  Constants
are pooled as 64-bit tagged words and referenced by index.  Local label
operands name an instruction index within the same predicate; cross-
predicate labels name a predicate entry.  On disk: magic ``MBC1``,
version word, then atom / code / pool / entry / query sections,
little-endian.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

from .diagnostics import NOPOS, error
from .machdef import (
    MachineDef,
    mkatom,
    mkfunctor,
    mknum,
    functor_parts,
    num_value,
    word_tag,
    TAG_NUM,
)
from .terms import Atom, Int

MAGIC = b"MBC1"
VERSION = 1


@dataclass(frozen=True)
class Ins:
    """A symbolic instruction: name plus tagged operands.

    Operand forms: ("x", i), ("y", i), ("const", Atom|Int),
    ("functor", (name, arity)), ("lbl", index), ("plbl", (name, arity)),
    ("count", n), ("bltin", id).
    """

    name: str
    operands: tuple

    def __init__(self, name, operands=()):
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "operands", tuple(operands))

    def __repr__(self):
        ops = ", ".join(_operand_str(o) for o in self.operands)
        return f"{self.name}({ops})" if ops else self.name


def _operand_str(o):
    kind, v = o
    if kind in ("x", "y"):
        return f"{kind}({v})"
    if kind == "const":
        return repr(v)
    if kind == "functor":
        return f"{v[0]}/{v[1]}"
    if kind == "plbl":
        return f"{v[0]}/{v[1]}"
    if kind == "lbl":
        return f"->{v}"
    if kind == "count":
        return str(v)
    if kind == "bltin":
        return f"#{v}"
    return repr(o)


@dataclass
class Image:
    code: list = field(default_factory=list)      # u32 words
    pool: list = field(default_factory=list)      # u64 tagged words
    atoms: list = field(default_factory=list)     # interned names
    entries: dict = field(default_factory=dict)   # (name, arity) -> offset
    query: dict | None = None                     # {entry, nvars, varnames}

    def atom_index(self, name: str) -> int:
        try:
            return self.atoms.index(name)
        except ValueError:
            self.atoms.append(name)
            return len(self.atoms) - 1


# ---------------------------------------------------------------------------
# Opcode assignment


def assign_opcodes(machine: MachineDef) -> MachineDef:
    """Number the instruction table: pre-assigned opcodes are honored,
    the rest are filled densely in name order.  Deterministic."""
    used = {}
    for ins in machine.instructions.values():
        if ins.opcode is not None:
            if ins.opcode in used:
                raise error(NOPOS, "opcode",
                            f"opcode {ins.opcode} assigned to both "
                            f"{used[ins.opcode]} and {ins.name}")
            used[ins.opcode] = ins.name
    nxt = 0
    for name in sorted(machine.instructions):
        ins = machine.instructions[name]
        if ins.opcode is None:
            while nxt in used:
                nxt += 1
            ins.opcode = nxt
            used[nxt] = name
            nxt += 1
    return machine


# ---------------------------------------------------------------------------
# Widths


def ins_width(ins: Ins, machine: MachineDef) -> int:
    d = machine.instructions.get(ins.name)
    if d is None:
        raise error(NOPOS, "asm", f"unknown instruction {ins.name}")
    w = d.fixed_width()
    if w is not None:
        if len(ins.operands) != len(d.kinds):
            raise error(NOPOS, "asm",
                        f"{ins.name}: expected {len(d.kinds)} operands, "
                        f"got {len(ins.operands)}")
        return w
    # array format: count word + elements
    n = ins.operands[0][1]
    return 2 + n


def code_size_words(program: dict, machine: MachineDef) -> int:
    return sum(ins_width(i, machine) for code in program.values() for i in code)


# ---------------------------------------------------------------------------
# Assembly


def _encode_const(term, img: Image) -> int:
    if isinstance(term, Int):
        w = mknum(term.value)
    elif isinstance(term, Atom):
        w = mkatom(img.atom_index(term.name))
    else:
        raise error(NOPOS, "asm", f"cannot pool {term!r}")
    try:
        return img.pool.index(w)
    except ValueError:
        img.pool.append(w)
        return len(img.pool) - 1


def _encode_functor(name, arity, img: Image) -> int:
    w = mkfunctor(img.atom_index(name), arity)
    try:
        return img.pool.index(w)
    except ValueError:
        img.pool.append(w)
        return len(img.pool) - 1


def assemble(program: dict, machine: MachineDef, query=None) -> Image:
    """Encode a symbolic program against the machine's instruction table.

    ``program`` maps (name, arity) or name to instruction lists; entries
    appear in iteration order.  ``query`` is an optional dict with keys
    ``entry`` ((name, arity)) and ``varnames``."""
    if any(i.opcode is None for i in machine.instructions.values()):
        raise error(NOPOS, "asm", "opcodes not assigned; run assign_opcodes")
    img = Image()
    img.atom_index("[]")  # nil is always atom 0
    # first pass: entry offsets
    offsets: dict = {}
    pc = 0
    for key, code in program.items():
        img.atom_index(key[0])
        img.entries[key] = pc
        ins_offsets = []
        for ins in code:
            ins_offsets.append(pc)
            pc += ins_width(ins, machine)
        offsets[key] = ins_offsets
    # second pass: encode
    for key, code in program.items():
        for ins in code:
            d = machine.instructions[ins.name]
            img.code.append(d.opcode)
            kinds = d.kinds
            if kinds and kinds[0] == "opn_array":
                n = ins.operands[0][1]
                img.code.append(n)
                for (k, v) in ins.operands[1:]:
                    if k != "x":
                        raise error(NOPOS, "asm",
                                    f"{ins.name}: array elements must be X "
                                    f"registers, got {k}")
                    img.code.append(v)
                continue
            for (k, v), kind in zip(ins.operands, kinds):
                img.code.append(_encode_operand(ins, k, v, kind, img,
                                                offsets, key))
    if query is not None:
        img.query = {
            "entry": query["entry"],
            "varnames": list(query.get("varnames", [])),
        }
        for vn in img.query["varnames"]:
            img.atom_index(vn)
        img.atom_index(query["entry"][0])
    return img


def _encode_operand(ins, k, v, kind, img, offsets, predkey) -> int:
    if kind == "xreg_mutable":
        if k != "x":
            raise error(NOPOS, "asm", f"{ins.name}: expected x operand, got {k}")
        return v
    if kind == "yreg_mutable":
        if k != "y":
            raise error(NOPOS, "asm", f"{ins.name}: expected y operand, got {k}")
        return v
    if kind == "constagged":
        if k != "const":
            raise error(NOPOS, "asm", f"{ins.name}: expected constant, got {k}")
        return _encode_const(v, img)
    if kind == "functor":
        if k != "functor":
            raise error(NOPOS, "asm", f"{ins.name}: expected functor, got {k}")
        return _encode_functor(v[0], v[1], img)
    if kind == "label":
        if k == "lbl":
            return offsets[predkey][v]
        if k == "plbl":
            if v not in img.entries:
                raise error(NOPOS, "asm", f"{ins.name}: unresolved label {v}")
            return img.entries[v]
        raise error(NOPOS, "asm", f"{ins.name}: expected label, got {k}")
    if kind == "uint":
        if k != "count":
            raise error(NOPOS, "asm", f"{ins.name}: expected count, got {k}")
        return v
    if kind == "bltnum":
        if k != "bltin":
            raise error(NOPOS, "asm", f"{ins.name}: expected builtin id, got {k}")
        return v
    raise error(NOPOS, "asm", f"{ins.name}: cannot encode kind {kind}")


# ---------------------------------------------------------------------------
# Disassembly


def disassemble(img: Image, machine: MachineDef) -> dict:
    """Exact inverse of assemble (up to constant-pool interning)."""
    by_op = machine.by_opcode()
    entry_at = {off: key for key, off in img.entries.items()}
    bounds = sorted(img.entries.values()) + [len(img.code)]
    program: dict = {}
    pc = 0
    cur = None
    ins_at: dict = {}
    # first pass: split instruction stream per predicate, record offsets
    raw: list = []
    while pc < len(img.code):
        if pc in entry_at:
            cur = entry_at[pc]
            program[cur] = []
        if cur is None:
            raise error(NOPOS, "disasm", f"code at {pc} precedes any entry")
        op = img.code[pc]
        d = by_op.get(op)
        if d is None:
            raise error(NOPOS, "disasm", f"unknown opcode {op} at offset {pc}")
        ins_at[pc] = (cur, len(program[cur]))
        if d.kinds and d.kinds[0] == "opn_array":
            n = img.code[pc + 1]
            words = img.code[pc + 2: pc + 2 + n]
            program[cur].append((pc, d, [("count", n)] + [("x", w) for w in words]))
            pc += 2 + n
        else:
            words = img.code[pc + 1: pc + 1 + len(d.kinds)]
            program[cur].append((pc, d, list(zip(d.kinds, words))))
            pc += 1 + len(d.kinds)
    # second pass: decode operands (labels need ins_at)
    out: dict = {}
    for key, items in program.items():
        code = []
        for (off, d, ops) in items:
            if d.kinds and d.kinds[0] == "opn_array":
                code.append(Ins(d.name, ops))
                continue
            sym = []
            for kind, w in ops:
                sym.append(_decode_operand(kind, w, img, ins_at, key))
            code.append(Ins(d.name, sym))
        out[key] = code
    return out


def _decode_operand(kind, w, img, ins_at, predkey):
    if kind == "xreg_mutable":
        return ("x", w)
    if kind == "yreg_mutable":
        return ("y", w)
    if kind == "constagged":
        return ("const", _decode_const(img.pool[w], img))
    if kind == "functor":
        ai, ar = functor_parts(img.pool[w])
        return ("functor", (img.atoms[ai], ar))
    if kind == "label":
        tgt = ins_at.get(w)
        if tgt is None:
            raise error(NOPOS, "disasm", f"label to non-instruction offset {w}")
        tkey, tidx = tgt
        if tkey == predkey and tidx != 0:
            return ("lbl", tidx)
        if tidx != 0:
            raise error(NOPOS, "disasm",
                        f"label into the middle of {tkey[0]}/{tkey[1]}")
        return ("plbl", tkey)
    if kind == "uint":
        return ("count", w)
    if kind == "bltnum":
        return ("bltin", w)
    raise error(NOPOS, "disasm", f"cannot decode kind {kind}")


def _decode_const(w, img):
    if word_tag(w) == TAG_NUM:
        return Int(num_value(w))
    ai, ar = functor_parts(w)
    if ar == 0:
        return Atom(img.atoms[ai])
    raise error(NOPOS, "disasm", f"pool word {w} is not a constant")


def listing(img: Image, machine: MachineDef) -> str:
    """One instruction per line: ``offset opcode name operands...``."""
    by_op = machine.by_opcode()
    prog = disassemble(img, machine)
    entry_at = {off: key for key, off in img.entries.items()}
    lines = []
    pc = 0
    for key, code in prog.items():
        for ins in code:
            if pc in entry_at:
                k = entry_at[pc]
                lines.append(f"; {k[0]}/{k[1]}:")
            d = machine.instructions[ins.name]
            ops = " ".join(_operand_str(o) for o in ins.operands)
            lines.append(f"{pc:6d} {d.opcode:4d} {ins.name} {ops}".rstrip())
            pc += ins_width(ins, machine)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Container I/O


def save_image(img: Image, path: str) -> None:
    with open(path, "wb") as f:
        f.write(image_bytes(img))


def image_bytes(img: Image) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", VERSION))
    out.write(struct.pack("<I", len(img.atoms)))
    for a in img.atoms:
        b = a.encode()
        out.write(struct.pack("<I", len(b)))
        out.write(b)
    out.write(struct.pack("<I", len(img.code)))
    for w in img.code:
        out.write(struct.pack("<I", w))
    out.write(struct.pack("<I", len(img.pool)))
    for w in img.pool:
        out.write(struct.pack("<Q", w))
    out.write(struct.pack("<I", len(img.entries)))
    for (name, arity), off in img.entries.items():
        out.write(struct.pack("<III", img.atoms.index(name), arity, off))
    if img.query is None:
        out.write(struct.pack("<B", 0))
    else:
        out.write(struct.pack("<B", 1))
        en, ea = img.query["entry"]
        names = img.query["varnames"]
        out.write(struct.pack("<III", img.atoms.index(en), ea, len(names)))
        for vn in names:
            out.write(struct.pack("<I", img.atoms.index(vn)))
    return out.getvalue()


def load_image(path: str) -> Image:
    data = open(path, "rb").read()
    return image_from_bytes(data, path)


def image_from_bytes(data: bytes, name: str = "<image>") -> Image:
    buf = io.BytesIO(data)

    def u32():
        b = buf.read(4)
        if len(b) != 4:
            raise error(NOPOS, "image", f"{name}: truncated stream")
        return struct.unpack("<I", b)[0]

    if buf.read(4) != MAGIC:
        raise error(NOPOS, "image", f"{name}: bad magic")
    if u32() != VERSION:
        raise error(NOPOS, "image", f"{name}: unsupported version")
    img = Image()
    for _ in range(u32()):
        n = u32()
        img.atoms.append(buf.read(n).decode())
    img.code = [u32() for _ in range(u32())]
    npool = u32()
    for _ in range(npool):
        b = buf.read(8)
        if len(b) != 8:
            raise error(NOPOS, "image", f"{name}: truncated pool")
        img.pool.append(struct.unpack("<Q", b)[0])
    for _ in range(u32()):
        ai, ar, off = u32(), u32(), u32()
        img.entries[(img.atoms[ai], ar)] = off
    flag = buf.read(1)
    if flag == b"\x01":
        ai, ar, nv = u32(), u32(), u32()
        img.query = {"entry": (img.atoms[ai], ar),
                     "varnames": [img.atoms[u32()] for _ in range(nv)]}
    return img
