"""Instruction-set transformations and code-generation toggles.

An instruction-set transformation is a pair: a program transformation
over symbolic bytecode and a machine-definition transformation, applied
together so outcomes are preserved.

  im  merge fixed instruction sequences into one instruction
  ie  collapse runs of one collapsible instruction into a counted form
  ib  specialize builtin-bridge instructions per builtin

The remaining four options (ts, cc, ur, rw) do not change the
instruction set; they select alternative code-generation schemes and are
consumed by the emulator compiler.
"""

from __future__ import annotations

import copy
import itertools
import re
from dataclasses import dataclass

from .diagnostics import NOPOS, error
from .dialect.syntax import Conj, PredAssertion, goal_vars, rename_goal
from .machdef import (
    BUILTIN_TABLE,
    InsDef,
    MachineDef,
    OPERAND_KINDS,
)
from .terms import Var

OPTION_NAMES = ("ie", "ib", "im", "ts", "cc", "ur", "rw")


@dataclass(frozen=True)
class OptionSet:
    """The seven generation options; bit order follows OPTION_NAMES."""

    ie: bool = False
    ib: bool = False
    im: bool = False
    ts: bool = False
    cc: bool = False
    ur: bool = False
    rw: bool = False

    def __post_init__(self):
        if self.ie and not self.im:
            raise ValueError("ie requires im")

    @property
    def bits(self) -> str:
        return "".join("1" if getattr(self, n) else "0" for n in OPTION_NAMES)

    @classmethod
    def from_bits(cls, bits: str) -> "OptionSet":
        bits = bits.strip()
        if len(bits) != 7 or set(bits) - {"0", "1"}:
            raise ValueError(f"option bits must be 7 binary digits, got {bits!r}")
        return cls(**{n: b == "1" for n, b in zip(OPTION_NAMES, bits)})

    @classmethod
    def from_names(cls, names: str) -> "OptionSet":
        parts = [p.strip() for p in names.split(",") if p.strip()]
        bad = [p for p in parts if p not in OPTION_NAMES]
        if bad:
            raise ValueError(f"unknown options: {', '.join(bad)}")
        return cls(**{p: True for p in parts})

    def __str__(self):
        on = [n for n in OPTION_NAMES if getattr(self, n)]
        return ",".join(on) if on else "none"


def enumerate_variants() -> list[OptionSet]:
    """All option combinations minus those violating the ie->im
    dependency, in canonical bit order."""
    out = []
    for combo in itertools.product((False, True), repeat=7):
        d = dict(zip(OPTION_NAMES, combo))
        if d["ie"] and not d["im"]:
            continue
        out.append(OptionSet(**d))
    return out


# ---------------------------------------------------------------------------
# Merge rules


@dataclass(frozen=True)
class MergeRule:
    seq: tuple
    unfold: object = "all"       # 'all' or a 1-based component index


def parse_rules(text: str) -> list[MergeRule]:
    """One rule per line: ``name1+name2[+name3] unfold=<all|k>``."""
    rules = []
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"([a-z0-9_]+(?:\+[a-z0-9_]+)+)\s+unfold=(all|\d+)", line)
        if not m:
            raise error(NOPOS, "rules", f"line {ln}: cannot parse {line!r}")
        seq = tuple(m.group(1).split("+"))
        unfold = m.group(2)
        rules.append(MergeRule(seq, "all" if unfold == "all" else int(unfold)))
    return rules


MERGE_FAMILY = ("get_constant", "get_value_x", "get_value_y",
                "put_constant", "put_value_x", "put_value_y",
                "unify_constant", "unify_value_x", "unify_value_y")


def default_rules(machine: MachineDef) -> list[MergeRule]:
    """The shipped rule set: the explicit rules from the rules file, the
    machine's own multi-instruction entries, and all pairs over the
    constant/value data-movement families (merging depth 2)."""
    from .machdef import seed_rules_text

    rules = parse_rules(seed_rules_text())
    for seq, unfold in machine.merge_rules:
        rules.append(MergeRule(tuple(seq), unfold if unfold is not None else "all"))
    seen = {r.seq for r in rules}
    for a in MERGE_FAMILY:
        for b in MERGE_FAMILY:
            if (a, b) not in seen:
                rules.append(MergeRule((a, b), "all"))
    return rules


def merged_name(seq) -> str:
    return "__".join(seq)


# ---------------------------------------------------------------------------
# im: instruction merging


def apply_im(rules: list[MergeRule], machine: MachineDef, program):
    """Add merged instructions for each rule and rewrite the program,
    replacing instruction sequences left-to-right, longest rule first.

    ``program`` is symbolic bytecode: {predname: [Ins]} (see assembler).
    Returns (machine', program')."""
    machine = machine.clone()
    for rule in rules:
        _add_merged_instruction(machine, rule)
    program = {name: _merge_seq(code, rules, machine)
               for name, code in program.items()}
    return machine, program


def _add_merged_instruction(machine: MachineDef, rule: MergeRule) -> None:
    name = merged_name(rule.seq)
    if name in machine.instructions:
        return
    kinds: list = []
    bodies = []
    headvars: list = []
    counter = itertools.count(1)
    prog = machine.program
    for comp in rule.seq:
        ins = machine.instructions.get(comp)
        if ins is None:
            raise error(NOPOS, "im", f"merge rule references unknown "
                        f"instruction {comp}")
        if "opn_array" in ins.kinds:
            raise error(NOPOS, "im", f"cannot merge array instruction {comp}")
        base = prog.predicates[(ins.base, ins.arity)]
        n = next(counter)
        sub = {v: f"{v}_m{n}" for v in set(base.headvars) | set(goal_vars(base.body))}
        bodies.append(rename_goal(copy.deepcopy(base.body), sub))
        headvars.extend(sub[hv] for hv in base.headvars)
        kinds.extend(ins.kinds)
    # combined body: sequential composition of the component bodies
    body = Conj(bodies) if len(bodies) > 1 else bodies[0]
    from .dialect.syntax import NormPred
    basename = name + "_body"
    pred = NormPred(basename, len(headvars), headvars, body)
    asrt = PredAssertion(basename, len(headvars),
                         ["+"] * len(headvars),
                         [OPERAND_KINDS[k] for k in kinds])
    pred.assertion = asrt
    prog.predicates[(basename, len(headvars))] = pred
    prog.assertions[(basename, len(headvars))] = asrt
    # analyze the new predicate in place
    from .analysis import Analyzer
    from .machdef import PRIM_SIGS
    an = Analyzer(prog, PRIM_SIGS)
    beta = an.entry_state(pred)
    pred.entry_ann = beta
    pred.exit_ann = an.transfer(pred.body, beta.copy(), pred.key)
    machine.facts.detclass[pred.key] = pred.detclass = _merged_detclass(machine, rule)
    for i, hv in enumerate(headvars):
        rm = "1m" if isinstance(asrt.argtypes[i], tuple) else "0v"
        machine.facts.refmodes[(pred.key, hv)] = rm
    infer_refmodes_single(prog, machine.facts, pred)
    machine.instructions[name] = InsDef(
        name, basename, kinds, merged_from=list(rule.seq), unfold=rule.unfold)


def infer_refmodes_single(prog, facts, pred) -> None:
    from .analysis import Analyzer, _refmodes_pred
    from .machdef import PRIM_SIGS
    _refmodes_pred(pred, prog, facts, Analyzer(prog, PRIM_SIGS))


def _merged_detclass(machine: MachineDef, rule: MergeRule) -> str:
    classes = []
    for comp in rule.seq:
        ins = machine.instructions[comp]
        classes.append(machine.facts.detclass[(ins.base, ins.arity)])
    return "semidet" if "semidet" in classes else "det"


def _label_targets(code: list) -> set:
    out = set()
    for ins in code:
        for (k, v) in ins.operands:
            if k == "lbl":
                out.add(v)
    return out


def _remap_labels(code: list, old2new: dict) -> list:
    from .assembler import Ins
    out = []
    for ins in code:
        ops = []
        changed = False
        for (k, v) in ins.operands:
            if k == "lbl":
                ops.append(("lbl", old2new[v]))
                changed = True
            else:
                ops.append((k, v))
        out.append(Ins(ins.name, ops) if changed else ins)
    return out


def _merge_seq(code: list, rules: list[MergeRule], machine: MachineDef) -> list:
    """Greedy left-to-right replacement, longest rule first.  A merge may
    not swallow a local label target (instruction boundaries that control
    transfers depend on must survive); label operands are remapped to the
    new instruction indices afterwards."""
    order = sorted(rules, key=lambda r: -len(r.seq))
    targets = _label_targets(code)
    out = []
    old2new: dict = {}
    i = 0
    while i < len(code):
        old2new[i] = len(out)
        hit = None
        for rule in order:
            k = len(rule.seq)
            if i + k <= len(code) and all(
                    code[i + j].name == rule.seq[j] for j in range(k)) \
                    and not any(t in targets for t in range(i + 1, i + k)):
                hit = rule
                break
        if hit is None:
            out.append(code[i])
            i += 1
        else:
            ops = []
            for j in range(len(hit.seq)):
                ops.extend(code[i + j].operands)
            from .assembler import Ins
            out.append(Ins(merged_name(hit.seq), ops))
            i += len(hit.seq)
    old2new[len(code)] = len(out)
    return _remap_labels(out, old2new)


# ---------------------------------------------------------------------------
# ie: counted encoding of runs of one collapsible instruction


def counted_name(name: str) -> str:
    return name + "_n"


def apply_ie(machine: MachineDef, program):
    """Collapse maximal runs (length >= 2) of each collapsible instruction
    into a counted instruction carrying the operand list."""
    machine = machine.clone()
    for name in sorted(machine.collapsible):
        _add_counted_instruction(machine, name)
    from .assembler import Ins

    def rewrite(code):
        targets = _label_targets(code)
        out = []
        old2new: dict = {}
        i = 0
        while i < len(code):
            old2new[i] = len(out)
            name = code[i].name
            if name in machine.collapsible:
                j = i
                while j < len(code) and code[j].name == name:
                    if j > i and j in targets:
                        break  # a run may not swallow a label target
                    j += 1
                if j - i >= 2:
                    ops = [("count", j - i)]
                    for k in range(i, j):
                        ops.extend(code[k].operands)
                    out.append(Ins(counted_name(name), ops))
                    i = j
                    continue
            out.append(code[i])
            i += 1
        old2new[len(code)] = len(out)
        return _remap_labels(out, old2new)

    return machine, {n: rewrite(c) for n, c in program.items()}


COUNTED_BODY = """
:- pred {base}(+Arr) :: int + det.
{base}(Arr) :- opn_array_len(Arr, L), u_void_loop(0, L, Arr).
"""


def _add_counted_instruction(machine: MachineDef, name: str) -> None:
    cname = counted_name(name)
    if cname in machine.instructions:
        return
    ins = machine.instructions[name]
    if ins.kinds != ["xreg_mutable"]:
        raise error(NOPOS, "ie", f"{name} is not collapsible (format {ins.kinds})")
    basename = cname + "_body"
    src = COUNTED_BODY.format(base=basename)
    from .dialect import normalize, parse_source
    decls, clauses = parse_source(src, f"<{cname}>")
    frag = normalize(decls, clauses)
    pred = frag.predicates[(basename, 1)]
    pred.assertion = frag.assertions[(basename, 1)]
    prog = machine.program
    prog.predicates[pred.key] = pred
    prog.assertions[pred.key] = pred.assertion
    from .analysis import Analyzer
    from .machdef import PRIM_SIGS
    an = Analyzer(prog, PRIM_SIGS)
    beta = an.entry_state(pred)
    pred.entry_ann = beta
    pred.exit_ann = an.transfer(pred.body, beta.copy(), pred.key)
    pred.detclass = "det"
    machine.facts.detclass[pred.key] = "det"
    infer_refmodes_single(prog, machine.facts, pred)
    machine.instructions[cname] = InsDef(cname, basename, ["opn_array"])


# ---------------------------------------------------------------------------
# ib: per-builtin specialization of the bridge instructions

BRIDGE_INS = ("bltin1s", "bltin2s", "bltin2d", "bltin3d")


def bltin_ins_name(bridge: str, bltname: str) -> str:
    return f"{bridge}_{bltname}"


def apply_ib(machine: MachineDef, program):
    """Replace generic builtin bridges by instructions specialized per
    builtin; the builtin-identifier operand disappears."""
    machine = machine.clone()
    for b in BUILTIN_TABLE:
        _add_bltin_instruction(machine, b)
    from .assembler import Ins

    def rewrite(code):
        out = []
        for ins in code:
            if ins.name in BRIDGE_INS:
                kind, bid = ins.operands[0]
                assert kind == "bltin"
                from .machdef import BUILTIN_BY_ID
                b = BUILTIN_BY_ID.get(bid)
                if b is None:
                    raise error(NOPOS, "ib", f"unknown builtin id {bid}")
                out.append(Ins(bltin_ins_name(ins.name, b.name), ins.operands[1:]))
            else:
                out.append(ins)
        return out

    return machine, {n: rewrite(c) for n, c in program.items()}


def _add_bltin_instruction(machine: MachineDef, b) -> None:
    name = bltin_ins_name(b.bridge, b.name)
    if name in machine.instructions:
        return
    generic = machine.instructions[b.bridge]
    prog = machine.program
    base = prog.predicates[(generic.base, generic.arity)]
    # the specialized body is the bridge body with the builtin-id
    # argument fixed to a constant
    from .dialect.syntax import NormPred, Unify
    from .terms import Int
    counter = f"_ib_{b.name}"
    sub = {v: f"{v}{counter}" for v in set(base.headvars) | set(goal_vars(base.body))}
    body = rename_goal(copy.deepcopy(base.body), sub)
    headvars = [sub[hv] for hv in base.headvars]
    fvar = headvars[0]
    body = Conj([Unify(Var(fvar), Int(b.id)), body])
    basename = name + "_body"
    pred = NormPred(basename, generic.arity - 1, headvars[1:], body)
    asrt = PredAssertion(basename, generic.arity - 1,
                         ["+"] * (generic.arity - 1),
                         [OPERAND_KINDS[k] for k in generic.kinds[1:]])
    pred.assertion = asrt
    prog.predicates[pred.key] = pred
    prog.assertions[pred.key] = asrt
    from .analysis import Analyzer
    from .machdef import PRIM_SIGS
    an = Analyzer(prog, PRIM_SIGS)
    beta = an.entry_state(pred)
    pred.entry_ann = beta
    pred.exit_ann = an.transfer(pred.body, beta.copy(), pred.key)
    pred.detclass = machine.facts.detclass[(generic.base, generic.arity)]
    machine.facts.detclass[pred.key] = pred.detclass
    infer_refmodes_single(prog, machine.facts, pred)
    machine.instructions[name] = InsDef(name, basename, list(generic.kinds[1:]))


# ---------------------------------------------------------------------------
# variant application


def apply_variant(opts: OptionSet, machine: MachineDef, program,
                  rules: list[MergeRule] | None = None):
    """Apply the instruction-set transformations selected by ``opts``.

    Returns (machine', program'); the codegen options travel with
    ``opts`` into the emulator compiler."""
    if opts.ib:
        machine, program = apply_ib(machine, program)
    if opts.im:
        if rules is None:
            rules = default_rules(machine)
        machine, program = apply_im(rules, machine, program)
    if opts.ie:
        machine, program = apply_ie(machine, program)
    return machine, program
