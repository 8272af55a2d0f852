"""Benchmark matrix: build emulator variants, run the corpus on each,
verify solution digests against the resolution oracle, and report.

The time metric is the minimum wall clock over the configured
repetitions; counters are deterministic and measured on the first run.
Matrix cells run in parallel across worker processes, partitioned by
variant (each worker builds a variant once and runs all benchmarks).
"""

from __future__ import annotations

import csv
import json
import math
import pathlib
import time
from dataclasses import dataclass

from . import frontend
from .assembler import assign_opcodes, assemble, code_size_words
from .diagnostics import InternalError
from .emugen import emucomp
from .machdef import seed_machine
from .pybackend import compile_emulator, eval_ir
from .transforms import (OptionSet, OPTION_NAMES, apply_variant,
                         default_rules)

CSV_COLUMNS = ["optbits", "benchmark", "time_ns", "dispatches", "bc_words",
               "ir_blocks", "src_bytes", "digest"]


@dataclass
class Benchmark:
    name: str
    file: str
    goal: str
    max_solutions: int = 1


@dataclass
class Prepared:
    """Frontend output for one benchmark (variant-independent)."""

    bench: Benchmark
    code: dict
    varnames: list
    oracle_digest: str
    oracle_lines: list


def load_corpus(path: str | pathlib.Path) -> list[Benchmark]:
    path = pathlib.Path(path)
    man = json.loads((path / "manifest.json").read_text())
    out = []
    for b in man["benchmarks"]:
        out.append(Benchmark(b["name"], str(path / b["file"]), b["goal"],
                             b.get("max_solutions", 1)))
    return out


def default_corpus_dir() -> pathlib.Path:
    here = pathlib.Path(__file__).resolve()
    for up in here.parents:
        cand = up / "benchmarks"
        if (cand / "manifest.json").exists():
            return cand
    raise InternalError("benchmark corpus not found")


def prepare_benchmark(b: Benchmark) -> Prepared:
    src = pathlib.Path(b.file).read_text()
    prog = frontend.parse_program(src)
    goal = frontend.parse_goal(b.goal)
    sols = frontend.reference_solve(prog, goal, max_solutions=b.max_solutions)
    qcode, qvars = frontend.compile_query(goal)
    lines = frontend.solution_lines(sols, qvars)
    code = frontend.compile_prolog(prog)
    code[("$query", 0)] = qcode
    return Prepared(b, code, qvars, frontend.solutions_digest(lines), lines)


# ---------------------------------------------------------------------------
# one matrix cell


class DigestMismatch(Exception):
    def __init__(self, optbits, benchmark, got, want):
        self.optbits = optbits
        self.benchmark = benchmark
        super().__init__(f"digest mismatch for variant {optbits} on "
                         f"{benchmark}: {got[:16]} != {want[:16]}")


def _variant_rows(args):
    """Worker: build one variant, run every prepared benchmark on it."""
    (bits, prepared, repetitions, src_sizes) = args
    opts = OptionSet.from_bits(bits)
    machine = assign_opcodes(seed_machine())
    rules = default_rules(machine)
    rows = []
    # instruction-set transformation (shared by all benchmarks)
    pmachine = None
    emu_ir = None
    src_bytes = 0
    for prep in prepared:
        tm, tcode = apply_variant(opts, machine, prep.code, rules)
        if pmachine is None:
            pmachine = assign_opcodes(tm)
            emu_ir = emucomp(pmachine, opts)
            compile_emulator(emu_ir)
            if src_sizes:
                from .cbackend import emit_native
                src_bytes = len(emit_native(emu_ir))
        img = assemble(tcode, pmachine,
                       query={"entry": ("$query", 0),
                              "varnames": prep.varnames})
        best_ns = None
        counters = None
        solutions = None
        for _ in range(max(1, repetitions)):
            t0 = time.perf_counter_ns()
            out = eval_ir(emu_ir, img, max_solutions=prep.bench.max_solutions)
            dt = time.perf_counter_ns() - t0
            if out.status not in ("halt", "fail"):
                raise InternalError(
                    f"variant {bits} on {prep.bench.name}: status {out.status}")
            if counters is None:
                counters = out.counters
                solutions = out.solutions
            elif out.counters != counters:
                raise InternalError(
                    f"variant {bits} on {prep.bench.name}: "
                    "nondeterministic counters")
            best_ns = dt if best_ns is None else min(best_ns, dt)
        digest = frontend.solutions_digest(solutions)
        if digest != prep.oracle_digest:
            raise DigestMismatch(bits, prep.bench.name, digest,
                                 prep.oracle_digest)
        rows.append({
            "optbits": bits,
            "benchmark": prep.bench.name,
            "time_ns": best_ns,
            "dispatches": counters["dispatches"],
            "bc_words": code_size_words(tcode, pmachine),
            "ir_blocks": emu_ir.block_count,
            "src_bytes": src_bytes,
            "digest": digest,
        })
    return rows


def run_matrix(corpus: list[Benchmark], variants: list[OptionSet],
               repetitions: int = 5, jobs: int = 1,
               src_sizes: bool = False, progress=None) -> list[dict]:
    """All (variant, benchmark) cells; aborts on any digest mismatch."""
    if not variants:
        return []
    prepared = [prepare_benchmark(b) for b in corpus]
    tasks = [(v.bits, prepared, repetitions, src_sizes) for v in variants]
    rows: list = []
    if jobs > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(jobs) as pool:
            for i, out in enumerate(pool.imap(_variant_rows, tasks)):
                rows.extend(out)
                if progress:
                    progress(i + 1, len(tasks))
    else:
        for i, t in enumerate(tasks):
            rows.extend(_variant_rows(t))
            if progress:
                progress(i + 1, len(tasks))
    _verify_gate(rows, prepared)
    return rows


def _verify_gate(rows, prepared):
    """Correctness gate: per benchmark, one digest across all variants,
    equal to the oracle's."""
    want = {p.bench.name: p.oracle_digest for p in prepared}
    for r in rows:
        if r["digest"] != want[r["benchmark"]]:
            raise DigestMismatch(r["optbits"], r["benchmark"], r["digest"],
                                 want[r["benchmark"]])


def write_csv(rows: list[dict], path: str) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: r[k] for k in CSV_COLUMNS})


def read_csv(path: str) -> list[dict]:
    with open(path) as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        for k in ("time_ns", "dispatches", "bc_words", "ir_blocks", "src_bytes"):
            r[k] = int(r[k])
    return rows


# ---------------------------------------------------------------------------
# report


def geomean(xs):
    return math.exp(sum(math.log(x) for x in xs) / len(xs)) if xs else 1.0


@dataclass
class Summary:
    baseline: str
    benchmarks: list
    variants: list
    speedup_time: dict      # (bits, bench) -> float
    speedup_disp: dict
    geo_time: dict          # bits -> float
    geo_disp: dict
    arith_time: dict
    best_rows: list
    worst_rows: list


def summarize(rows: list[dict], baseline: str = "0000000") -> Summary:
    by = {(r["optbits"], r["benchmark"]): r for r in rows}
    variants = sorted({r["optbits"] for r in rows})
    benches = sorted({r["benchmark"] for r in rows})
    if not any(v == baseline for v in variants):
        raise InternalError(f"baseline variant {baseline} not in table")
    sp_t, sp_d = {}, {}
    for v in variants:
        for b in benches:
            base = by[(baseline, b)]
            cell = by[(v, b)]
            sp_t[(v, b)] = base["time_ns"] / max(1, cell["time_ns"])
            sp_d[(v, b)] = base["dispatches"] / max(1, cell["dispatches"])
    geo_t = {v: geomean([sp_t[(v, b)] for b in benches]) for v in variants}
    geo_d = {v: geomean([sp_d[(v, b)] for b in benches]) for v in variants}
    ar_t = {v: sum(sp_t[(v, b)] for b in benches) / len(benches)
            for v in variants}

    def optrow(v, b, metric):
        ticks = ["x" if bit == "1" else " " for bit in v]
        wrt_def = metric[(v, b)] if b else None
        return ticks, wrt_def

    best, worst = [], []
    for b in benches:
        bv = max(variants, key=lambda v: sp_t[(v, b)])
        wv = min(variants, key=lambda v: sp_t[(v, b)])
        best.append((b, bv, sp_t[(bv, b)], sp_d[(bv, b)]))
        worst.append((b, wv, sp_t[(wv, b)], sp_d[(wv, b)]))
    gb = max(variants, key=lambda v: geo_t[v])
    gw = min(variants, key=lambda v: geo_t[v])
    best.insert(0, ("all (geom.)", gb, geo_t[gb], geo_d[gb]))
    worst.insert(0, ("all (geom.)", gw, geo_t[gw], geo_d[gw]))
    return Summary(baseline, benches, variants, sp_t, sp_d, geo_t, geo_d,
                   ar_t, best, worst)


def _options_table(rows, title) -> list[str]:
    out = [f"### {title}", "",
           "| Benchmark | " + " | ".join(OPTION_NAMES)
           + " | speedup (time) | speedup (dispatch) |",
           "|" + "---|" * (len(OPTION_NAMES) + 3)]
    for (bench, bits, st, sd) in rows:
        ticks = " | ".join("x" if c == "1" else " " for c in bits)
        out.append(f"| {bench} | {ticks} | {st:.2f} | {sd:.2f} |")
    out.append("")
    return out


def write_report(rows: list[dict], outdir: str, baseline: str = "0000000",
                 make_figures: bool = True) -> Summary:
    """report.md, plot-data CSV, and the speedup figures."""
    outdir = pathlib.Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    s = summarize(rows, baseline)

    with open(outdir / "plot_points.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["optbits", "benchmark", "speedup_time", "speedup_dispatch"])
        for (v, b), st in sorted(s.speedup_time.items()):
            wr.writerow([v, b, f"{st:.6f}", f"{s.speedup_disp[(v, b)]:.6f}"])

    lines = ["# Emulator variant report", "",
             f"Baseline variant: `{baseline}` "
             f"(bit order: {', '.join(OPTION_NAMES)})", "",
             f"{len(s.variants)} variants x {len(s.benchmarks)} benchmarks = "
             f"{len(rows)} cells.  Wall-clock speedups are informational; "
             "dispatch counts are deterministic.", ""]
    lines += ["## Geometric mean speedup per variant (top 10 by time)", "",
              "| variant | time | dispatches |", "|---|---|---|"]
    top = sorted(s.variants, key=lambda v: -s.geo_time[v])[:10]
    for v in top:
        lines.append(f"| `{v}` | {s.geo_time[v]:.3f} | {s.geo_disp[v]:.3f} |")
    lines.append("")
    lines += _options_table(s.best_rows, "Options giving best performance (time)")
    lines += _options_table(s.worst_rows, "Options giving worst performance (time)")

    if make_figures:
        figs = _figures(s, outdir)
        lines += ["## Figures", ""]
        lines += [f"![{name}](figures/{name}.png)" for name in figs]
        lines.append("")
    (outdir / "report.md").write_text("\n".join(lines))
    return s


_MARKERS = "ov^<>sphPXD*d12348"


def _figures(s: Summary, outdir: pathlib.Path) -> list[str]:
    """Dot-per-emulator speedup clouds: the instruction-set bits select
    the row, the codegen bits the marker (mirroring the variant matrix
    structure)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    (outdir / "figures").mkdir(exist_ok=True)
    names = []

    def cloud(name, value_of):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for v in s.variants:
            iset = int(v[:3], 2)
            cgen = int(v[3:], 2)
            ax.plot(value_of(v), iset, marker=_MARKERS[cgen % len(_MARKERS)],
                    linestyle="", markersize=5, color=f"C{cgen % 10}")
        ax.set_yticks(range(8))
        ax.set_yticklabels([f"{i:03b}" for i in range(8)])
        ax.set_ylabel("instruction-set options (ie ib im)")
        ax.set_xlabel("speedup vs baseline")
        ax.axvline(1.0, color="grey", lw=0.6)
        ax.set_title(name)
        fig.tight_layout()
        fig.savefig(outdir / "figures" / f"{name}.png", dpi=110)
        plt.close(fig)
        names.append(name)

    cloud("geomean_time", lambda v: s.geo_time[v])
    cloud("geomean_dispatch", lambda v: s.geo_disp[v])
    for b in s.benchmarks:
        cloud(f"time_{b}", lambda v, b=b: s.speedup_time[(v, b)])
    return names
