"""CLI behaviors: end-to-end pipelines, exit codes, output formats."""

import json
import pathlib

import pytest

from machforge.cli import main

BENCH = pathlib.Path(__file__).parent.parent / "benchmarks"


@pytest.fixture
def nrev_file(tmp_path):
    p = tmp_path / "nrev.pl"
    p.write_text(
        "app([], L, L).\napp([X|Xs], L, [X|Zs]) :- app(Xs, L, Zs).\n"
        "nreverse([], []).\n"
        "nreverse([X|Xs], R) :- nreverse(Xs, R1), app(R1, [X], R).\n")
    return p


class TestRunRef:
    def test_prints_solution(self, nrev_file, capsys):
        rc = main(["run-ref", str(nrev_file), "-g", "nreverse([1,2,3],R)"])
        assert rc == 0
        assert capsys.readouterr().out == "R = [3,2,1]\n"


class TestPipelineComposes:
    def test_gen_asm_run_matches_internal(self, nrev_file, tmp_path, capsys):
        """gen-machine | gen-emulator | asm | run reproduces one bench cell."""
        mdef = tmp_path / "m.mdef"
        import importlib.resources as res
        seed = (res.files("machforge") / "machine" / "seed.ipl").read_text()
        src = tmp_path / "seed.ipl"
        src.write_text(seed)
        assert main(["gen-machine", str(src), "-o", str(mdef)]) == 0
        img = tmp_path / "t.mbc"
        assert main(["asm", str(nrev_file), "-g", "nreverse([1,2,3,4],R)",
                     "-m", str(mdef), "--optbits", "0010000",
                     "-o", str(img)]) == 0
        capsys.readouterr()
        assert main(["run", str(img), "-m", str(mdef),
                     "--optbits", "0010000"]) == 0
        out = capsys.readouterr().out
        assert out.splitlines()[0] == "R = [4,3,2,1]"
        assert any(l.startswith("# dispatches=") for l in out.splitlines())
        # digest equality with what bench computes internally
        from machforge.bench import Benchmark, prepare_benchmark, run_matrix
        from machforge.transforms import OptionSet
        b = Benchmark("nrev", str(nrev_file), "nreverse([1,2,3,4],R)", 1)
        rows = run_matrix([b], [OptionSet.from_bits("0010000")], repetitions=1)
        from machforge import frontend
        sols = [l for l in out.splitlines() if not l.startswith("#")]
        assert frontend.solutions_digest(sols) == rows[0]["digest"]

    def test_disasm(self, nrev_file, tmp_path, capsys):
        img = tmp_path / "t.mbc"
        main(["asm", str(nrev_file), "-g", "nreverse([1],R)", "-o", str(img)])
        capsys.readouterr()
        assert main(["disasm", str(img)]) == 0
        text = capsys.readouterr().out
        assert "try_me_else" in text
        assert "execute" in text


class TestCompile:
    def test_dump_ir(self, tmp_path, capsys):
        f = tmp_path / "flags.ipl"
        f.write_text(":- regtype flag/1 + low(int32).\nflag := off | on.\n"
                     ":- pred flip(+X) :: mut(flag) + det.\n"
                     "flip(X) :- T = X@, ( T = on -> X <= off ; X <= on ).\n")
        assert main(["compile", str(f), "--dump-ir"]) == 0
        out = capsys.readouterr().out
        assert "det flip" in out

    def test_inadmissible_rejected(self, tmp_path, capsys):
        f = tmp_path / "bad.ipl"
        f.write_text(":- pred p(-X) :: int.\np(X) :- X = 1.\np(X) :- X = 2.\n")
        assert main(["compile", str(f)]) == 1
        assert "disj-not-convertible" in capsys.readouterr().err

    def test_dump_analysis(self, tmp_path, capsys):
        f = tmp_path / "t.ipl"
        f.write_text(":- pred p(+X) :: int + det.\np(X) :- Y = X.\n")
        assert main(["compile", str(f), "--dump-analysis"]) == 0
        out = capsys.readouterr().out
        assert "p/1 X 0 ground" in out


class TestErrors:
    def test_unknown_subcommand_exit_code(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code == 2  # argparse usage error

    def test_missing_file(self, capsys):
        assert main(["run-ref", "nope.pl", "-g", "x"]) == 1

    def test_syntax_error_reported(self, tmp_path, capsys):
        f = tmp_path / "bad.pl"
        f.write_text("p(a :- q.\n")
        assert main(["run-ref", str(f), "-g", "p(X)"]) == 1
        assert "syntax" in capsys.readouterr().err


class TestBenchCli:
    def test_small_matrix(self, tmp_path, capsys, nrev_file):
        man = tmp_path / "manifest.json"
        man.write_text(json.dumps({"benchmarks": [
            {"name": "nrev", "file": nrev_file.name,
             "goal": "nrev6(R)", "max_solutions": 1}]}))
        # write a self-contained benchmark next to the manifest
        (tmp_path / nrev_file.name).write_text(
            nrev_file.read_text() + "nrev6(R) :- nreverse([1,2,3,4,5,6], R).\n")
        out = tmp_path / "b.csv"
        rc = main(["bench", "--corpus", str(tmp_path),
                   "--variants", "0000000,0010000", "--reps", "1",
                   "--jobs", "1", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("optbits,benchmark,time_ns")
        assert len(lines) == 3
        rep = tmp_path / "rep"
        assert main(["report", str(out), "--outdir", str(rep)]) == 0
        assert (rep / "report.md").exists()
