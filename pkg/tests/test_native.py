"""Native backend parity: emitted C + runtime shim vs the IR evaluator.

Builds the baseline and a merged-heavy option set with the system C
compiler and compares solution bytes and counters over the corpus.
"""

import pathlib
import shutil
import subprocess

import pytest

from machforge import frontend
from machforge.assembler import assign_opcodes, assemble, save_image
from machforge.bench import default_corpus_dir, load_corpus
from machforge.cbackend import emit_native
from machforge.emugen import emucomp
from machforge.machdef import seed_machine
from machforge.pybackend import eval_ir
from machforge.transforms import OptionSet, apply_variant, default_rules

ROOT = pathlib.Path(__file__).parent.parent
RUNTIME = ROOT / "runtime"

CC = shutil.which("cc") or shutil.which("gcc")

pytestmark = pytest.mark.skipif(CC is None, reason="no C compiler")


def build_native(emu_ir, tmp_path, name) -> pathlib.Path:
    src = tmp_path / f"{name}.c"
    src.write_text(emit_native(emu_ir))
    exe = tmp_path / name
    subprocess.run(
        [CC, "-std=c99", "-O1", "-Wall", "-Werror", f"-I{RUNTIME}",
         "-o", str(exe), str(src), str(RUNTIME / "machrt.c")],
        check=True, capture_output=True)
    return exe


@pytest.fixture(scope="module")
def corpus():
    return load_corpus(default_corpus_dir())


@pytest.mark.parametrize("bits", ["0000000", "1110110"])
def test_parity_on_corpus(bits, corpus, tmp_path):
    opts = OptionSet.from_bits(bits)
    machine = assign_opcodes(seed_machine())
    rules = default_rules(machine)
    built = None
    exe = None
    for b in corpus:
        src = pathlib.Path(b.file).read_text()
        prog = frontend.parse_program(src)
        goal = frontend.parse_goal(b.goal)
        code = frontend.compile_prolog(prog)
        qcode, qvars = frontend.compile_query(goal)
        code[("$query", 0)] = qcode
        m2, code2 = apply_variant(opts, machine, code, rules)
        m2 = assign_opcodes(m2)
        if built is None:
            built = emucomp(m2, opts)
            exe = build_native(built, tmp_path, f"emu_{bits}")
        img = assemble(code2, m2, query={"entry": ("$query", 0),
                                         "varnames": qvars})
        path = tmp_path / f"{b.name}.mbc"
        save_image(img, str(path))
        out_py = eval_ir(built, img, max_solutions=b.max_solutions)
        py_text = "".join(f"{l}\n" for l in out_py.solutions)
        py_text += "".join(f"# {k}={v}\n"
                           for k, v in sorted(out_py.counters.items()))
        res = subprocess.run(
            [str(exe), str(path), "--max-solutions", str(b.max_solutions)],
            capture_output=True, text=True, timeout=120)
        assert res.returncode == 0, res.stderr
        assert res.stdout == py_text, f"{b.name}: output differs"


def test_missing_image_exits_3(tmp_path):
    machine = assign_opcodes(seed_machine())
    ir = emucomp(machine, OptionSet())
    exe = build_native(ir, tmp_path, "emu_miss")
    res = subprocess.run([str(exe), str(tmp_path / "nope.mbc")],
                         capture_output=True, text=True)
    assert res.returncode == 3


def test_malformed_image_exits_3(tmp_path):
    machine = assign_opcodes(seed_machine())
    ir = emucomp(machine, OptionSet())
    exe = build_native(ir, tmp_path, "emu_bad")
    bad = tmp_path / "bad.mbc"
    bad.write_bytes(b"XXXXgarbage")
    res = subprocess.run([str(exe), str(bad)], capture_output=True, text=True)
    assert res.returncode == 3
