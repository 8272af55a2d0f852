"""Command-line entry point.

Subcommands cover the full pipeline: dialect compilation (compile),
machine generation (gen-machine), emulator generation (gen-emulator),
assembly and disassembly (asm/disasm), execution on the in-process
evaluator (run), the resolution oracle (run-ref), the variant matrix
(bench) and reporting (report).  Exit codes: 0 success, 1 user error,
2 broken internal invariant.
"""

from __future__ import annotations

import argparse
import pathlib
import sys

from .diagnostics import CompileError, InternalError


def _opts_from_args(args):
    from .transforms import OptionSet
    if getattr(args, "optbits", None):
        return OptionSet.from_bits(args.optbits)
    if getattr(args, "opts", None):
        return OptionSet.from_names(args.opts)
    return OptionSet()


def _machine_from_args(args):
    from .assembler import assign_opcodes
    from .machdef import load_mdef, seed_machine
    if getattr(args, "machine", None):
        m = load_mdef(args.machine)
    else:
        m = seed_machine()
    return assign_opcodes(m)


def _variant_machine(args, program):
    """Apply the selected instruction-set transformations."""
    from .assembler import assign_opcodes
    from .transforms import apply_variant, default_rules, parse_rules
    opts = _opts_from_args(args)
    machine = _machine_from_args(args)
    rules = None
    if getattr(args, "rules", None):
        rules = parse_rules(pathlib.Path(args.rules).read_text())
    elif opts.im:
        rules = default_rules(machine)
    machine2, program2 = apply_variant(opts, machine, program, rules)
    return assign_opcodes(machine2), program2, opts


def _compile_pl(args):
    from . import frontend
    src = pathlib.Path(args.file).read_text()
    prog = frontend.parse_program(src, args.file)
    goal = frontend.parse_goal(args.goal)
    code = frontend.compile_prolog(prog)
    qcode, qvars = frontend.compile_query(goal)
    code[("$query", 0)] = qcode
    return prog, goal, code, qvars


# ---------------------------------------------------------------------------
# subcommands


def cmd_compile(args):
    from .analysis import analyze
    from .codegen import pcomp
    from .dialect import check_admissible, normalize, parse_source
    from .ir import CompilationUnit
    from .machdef import PRIM_SIGS

    src = pathlib.Path(args.file).read_text()
    decls, clauses = parse_source(src, args.file)
    prog = normalize(decls, clauses)
    ann, facts = analyze(prog, builtins=PRIM_SIGS)
    diags = check_admissible(ann, facts)
    for d in diags:
        print(d, file=sys.stderr)
    if diags:
        return 1
    out = []
    if args.dump_analysis:
        for pred in ann.predicates.values():
            from .dialect.syntax import leaf_goals
            for point, g in enumerate(leaf_goals(pred.body)):
                if g.ann is None:
                    continue
                for var, f in sorted(g.ann.items()):
                    facts_s = []
                    if f.fresh:
                        facts_s.append("fresh")
                    if f.ground:
                        facts_s.append("ground")
                    if f.type is not None:
                        t = f.type if isinstance(f.type, str) else f"mut({f.type[1]})"
                        facts_s.append(f"type={t}")
                    if f.const is not None:
                        facts_s.append(f"const={f.const}")
                    for fs in facts_s:
                        out.append(f"{pred.name}/{pred.arity} {var} {point} {fs}")
    if args.dump_ir or not args.dump_analysis:
        unit = CompilationUnit()
        for pred in ann.predicates.values():
            pcomp(ann, facts, pred, unit)
        from .cbackend import ir_listing
        out.append(ir_listing(unit))
    text = "\n".join(out) + ("\n" if out else "")
    _write_out(args, text)
    return 0


def cmd_gen_machine(args):
    from .machdef import mgen, save_mdef
    src = pathlib.Path(args.file).read_text()
    m = mgen(src, args.file)
    from .assembler import assign_opcodes
    assign_opcodes(m)
    save_mdef(m, args.out)
    print(f"wrote {args.out} ({len(m.instructions)} instructions)",
          file=sys.stderr)
    return 0


def cmd_gen_emulator(args):
    from .emugen import emucomp
    from .transforms import apply_variant, default_rules, parse_rules
    from .assembler import assign_opcodes
    opts = _opts_from_args(args)
    machine = _machine_from_args(args)
    rules = None
    if getattr(args, "rules", None):
        rules = parse_rules(pathlib.Path(args.rules).read_text())
    machine, _ = apply_variant(opts, machine, {}, rules)
    machine = assign_opcodes(machine)
    ir = emucomp(machine, opts)
    if args.emit_c:
        from .cbackend import emit_native
        pathlib.Path(args.emit_c).write_text(emit_native(ir))
        print(f"wrote {args.emit_c}", file=sys.stderr)
        return 0
    from .cbackend import ir_listing
    _write_out(args, ir_listing(ir.unit))
    return 0


def cmd_asm(args):
    from .assembler import assemble, save_image
    prog, goal, code, qvars = _compile_pl(args)
    machine, code, opts = _variant_machine(args, code)
    img = assemble(code, machine,
                   query={"entry": ("$query", 0), "varnames": qvars})
    save_image(img, args.out)
    print(f"wrote {args.out} ({len(img.code)} code words)", file=sys.stderr)
    return 0


def cmd_disasm(args):
    from .assembler import listing, load_image
    machine, _, opts = _variant_machine(args, {})
    img = load_image(args.file)
    sys.stdout.write(listing(img, machine))
    return 0


def cmd_run(args):
    from .assembler import load_image
    from .emugen import emucomp
    from .pybackend import eval_ir
    machine, _, opts = _variant_machine(args, {})
    ir = emucomp(machine, opts)
    img = load_image(args.file)
    out = eval_ir(ir, img, max_solutions=args.max_solutions)
    for line in out.solutions:
        print(line)
    for k, v in sorted(out.counters.items()):
        print(f"# {k}={v}")
    return 0 if out.status in ("halt", "fail") else 1


def cmd_run_ref(args):
    from . import frontend
    src = pathlib.Path(args.file).read_text()
    prog = frontend.parse_program(src, args.file)
    goal = frontend.parse_goal(args.goal)
    sols = frontend.reference_solve(prog, goal,
                                    max_solutions=args.max_solutions)
    qcode, qvars = frontend.compile_query(goal)
    for line in frontend.solution_lines(sols, qvars):
        print(line)
    return 0


def cmd_bench(args):
    from .bench import (default_corpus_dir, load_corpus, run_matrix,
                        write_csv)
    from .transforms import OptionSet, enumerate_variants
    corpus = load_corpus(args.corpus or default_corpus_dir())
    if args.benchmarks:
        keep = set(args.benchmarks.split(","))
        corpus = [b for b in corpus if b.name in keep]
    if args.variants == "all":
        variants = enumerate_variants()
    else:
        variants = [OptionSet.from_bits(v.strip())
                    for v in args.variants.split(",")]

    def progress(done, total):
        print(f"\r{done}/{total} variants", end="", file=sys.stderr)
        if done == total:
            print(file=sys.stderr)

    rows = run_matrix(corpus, variants, repetitions=args.reps,
                      jobs=args.jobs, src_sizes=args.src_sizes,
                      progress=progress)
    write_csv(rows, args.out)
    print(f"wrote {args.out} ({len(rows)} rows)", file=sys.stderr)
    return 0


def cmd_report(args):
    from .bench import read_csv, write_report
    rows = read_csv(args.file)
    s = write_report(rows, args.outdir, baseline=args.baseline,
                     make_figures=not args.no_figures)
    best = max(s.variants, key=lambda v: s.geo_time[v])
    print(f"wrote {args.outdir}/report.md; best variant {best} "
          f"(geomean {s.geo_time[best]:.3f}x)", file=sys.stderr)
    return 0


def _write_out(args, text):
    if getattr(args, "out", None):
        pathlib.Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(
        prog="machforge",
        description="abstract-machine workbench: dialect compiler, emulator "
                    "generator, transformations, and benchmarks")
    sub = p.add_subparsers(dest="cmd", required=True)

    def add_opts(sp):
        sp.add_argument("--opts", help="comma-separated options (ie,ib,im,ts,cc,ur,rw)")
        sp.add_argument("--optbits", help="7-bit option string, e.g. 1010110")
        sp.add_argument("-m", "--machine", help=".mdef machine definition "
                        "(default: built-in seed machine)")
        sp.add_argument("--rules", help="merge-rule file (.rules)")

    sp = sub.add_parser("compile", help="compile dialect source to IR")
    sp.add_argument("file")
    sp.add_argument("--dump-ir", action="store_true")
    sp.add_argument("--dump-analysis", action="store_true")
    sp.add_argument("-o", "--out")
    sp.set_defaults(fn=cmd_compile)

    sp = sub.add_parser("gen-machine", help="emulator definition -> .mdef")
    sp.add_argument("file")
    sp.add_argument("-o", "--out", required=True)
    sp.set_defaults(fn=cmd_gen_machine)

    sp = sub.add_parser("gen-emulator", help=".mdef + options -> emulator IR or C")
    add_opts(sp)
    sp.add_argument("--emit-c", metavar="FILE")
    sp.add_argument("-o", "--out")
    sp.set_defaults(fn=cmd_gen_emulator)

    sp = sub.add_parser("asm", help="compile+assemble a program and goal")
    sp.add_argument("file", help=".pl program")
    sp.add_argument("-g", "--goal", required=True)
    add_opts(sp)
    sp.add_argument("-o", "--out", required=True)
    sp.set_defaults(fn=cmd_asm)

    sp = sub.add_parser("disasm", help="print an image listing")
    sp.add_argument("file", help=".mbc image")
    add_opts(sp)
    sp.set_defaults(fn=cmd_disasm)

    sp = sub.add_parser("run", help="run an image on the IR evaluator")
    sp.add_argument("file", help=".mbc image")
    add_opts(sp)
    sp.add_argument("--max-solutions", type=int, default=1)
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("run-ref", help="run a goal on the resolution oracle")
    sp.add_argument("file", help=".pl program")
    sp.add_argument("-g", "--goal", required=True)
    sp.add_argument("--max-solutions", type=int, default=1)
    sp.set_defaults(fn=cmd_run_ref)

    sp = sub.add_parser("bench", help="run the variant x benchmark matrix")
    sp.add_argument("--corpus", help="corpus directory (with manifest.json)")
    sp.add_argument("--benchmarks", help="comma-separated subset of names")
    sp.add_argument("--variants", default="all",
                    help="'all' or comma-separated bit strings")
    sp.add_argument("--reps", type=int, default=5)
    sp.add_argument("--jobs", type=int, default=max(1, os_cpus() or 1))
    sp.add_argument("--src-sizes", action="store_true",
                    help="also measure emitted C source size")
    sp.add_argument("--out", default="bench.csv")
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("report", help="summarize a bench.csv")
    sp.add_argument("file")
    sp.add_argument("--outdir", default="report")
    sp.add_argument("--baseline", default="0000000")
    sp.add_argument("--no-figures", action="store_true")
    sp.set_defaults(fn=cmd_report)
    return p


def os_cpus():
    import os
    return os.cpu_count()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CompileError as e:
        for d in e.diagnostics:
            print(d, file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except InternalError as e:
        print(f"internal error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
