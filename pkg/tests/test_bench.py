"""Benchmark matrix and report tests (small synthetic corpus)."""

import json
import pathlib

import pytest

from machforge.bench import (Benchmark, DigestMismatch, Summary, geomean,
                             load_corpus, prepare_benchmark, read_csv,
                             run_matrix, summarize, write_csv, write_report)
from machforge.transforms import OptionSet

SRC = """
app([], L, L).
app([X|Xs], L, [X|Zs]) :- app(Xs, L, Zs).
nrev([], []).
nrev([X|Xs], R) :- nrev(Xs, R1), app(R1, [X], R).
"""


@pytest.fixture
def tiny_corpus(tmp_path):
    (tmp_path / "nrev.pl").write_text(SRC)
    (tmp_path / "manifest.json").write_text(json.dumps({
        "benchmarks": [
            {"name": "nrev", "file": "nrev.pl",
             "goal": "nrev([1,2,3,4,5,6], R)", "max_solutions": 1}
        ]}))
    return load_corpus(tmp_path)


class TestMatrix:
    def test_empty_variants(self, tiny_corpus):
        assert run_matrix(tiny_corpus, []) == []

    def test_rows_and_gate(self, tiny_corpus):
        variants = [OptionSet.from_bits(b)
                    for b in ("0000000", "0010000", "1110111")]
        rows = run_matrix(tiny_corpus, variants, repetitions=1)
        assert len(rows) == 3
        digests = {r["digest"] for r in rows}
        assert len(digests) == 1
        base = next(r for r in rows if r["optbits"] == "0000000")
        im = next(r for r in rows if r["optbits"] == "0010000")
        assert im["dispatches"] < base["dispatches"]
        assert im["bc_words"] < base["bc_words"]

    def test_counters_deterministic(self, tiny_corpus):
        rows1 = run_matrix(tiny_corpus, [OptionSet()], repetitions=3)
        rows2 = run_matrix(tiny_corpus, [OptionSet()], repetitions=1)
        assert rows1[0]["dispatches"] == rows2[0]["dispatches"]

    def test_csv_roundtrip(self, tiny_corpus, tmp_path):
        rows = run_matrix(tiny_corpus, [OptionSet()], repetitions=1)
        path = tmp_path / "bench.csv"
        write_csv(rows, str(path))
        back = read_csv(str(path))
        assert back[0]["dispatches"] == rows[0]["dispatches"]
        assert back[0]["optbits"] == "0000000"


class TestReport:
    def test_geomean(self):
        assert abs(geomean([2.0, 0.5]) - 1.0) < 1e-12

    def test_baseline_speedup_one(self, tiny_corpus, tmp_path):
        variants = [OptionSet.from_bits(b) for b in ("0000000", "0010000")]
        rows = run_matrix(tiny_corpus, variants, repetitions=1)
        s = summarize(rows, "0000000")
        assert s.speedup_time[("0000000", "nrev")] == 1.0
        assert s.speedup_disp[("0000000", "nrev")] == 1.0
        assert s.speedup_disp[("0010000", "nrev")] > 1.0

    def test_report_files(self, tiny_corpus, tmp_path):
        variants = [OptionSet.from_bits(b) for b in ("0000000", "0010000")]
        rows = run_matrix(tiny_corpus, variants, repetitions=1)
        out = tmp_path / "report"
        write_report(rows, str(out), make_figures=True)
        assert (out / "report.md").exists()
        assert (out / "plot_points.csv").exists()
        figs = list((out / "figures").glob("*.png"))
        assert figs
        text = (out / "report.md").read_text()
        assert "best performance" in text.lower()
