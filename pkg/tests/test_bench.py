import csv

import pytest

from kspace_bench.bench import (SUMMARY_COLUMNS, BenchError, bench_parallel, bench_recon, summarize,
                                write_summary_csv)
from kspace_bench.cli import main
from kspace_bench.dataset import iter_cases, worker_count


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench") / "data"
    args = ["--data", str(root), "--pattern", "uniform", "--af", "4"]
    assert main(["phantom", "--cases", "2", "--frames", "3", "--coils", "2", "--matrix", "48x32",
                 "--out", str(root)]) == 0
    assert main(["mask", *args, "--acs", "8"]) == 0
    assert main(["undersample", *args]) == 0
    return root


def test_bench_records(tiny_data):
    cases = list(iter_cases(tiny_data))
    recs = bench_recon("cgsense", cases, repeats=2)
    assert len(recs) == len(cases)
    for r in recs:
        assert r.frames == 3 and r.t_volume > 0
        assert r.t_frame == pytest.approx(r.t_volume / 3)
        assert r.throughput == pytest.approx(3 / r.t_volume)
        assert r.peak_resident_memory > 0


def test_summary_csv(tiny_data, tmp_path):
    cases = list(iter_cases(tiny_data))
    rows = summarize(bench_recon("zf", cases, repeats=1))
    rows.append(bench_parallel("zf", cases, workers=2))
    write_summary_csv(rows, tmp_path / "s.csv")
    with open(tmp_path / "s.csv") as fh:
        got = list(csv.DictReader(fh))
    assert tuple(got[0]) == SUMMARY_COLUMNS
    assert [g["mode"] for g in got] == ["serial", "parallel x2"]


def test_bench_missing_input_raises(tiny_data):
    with pytest.raises(BenchError):
        bench_recon("zf", list(iter_cases(tiny_data)), repeats=1, pattern="radial", af=8)
    with pytest.raises(ValueError):
        bench_recon("zf", [], repeats=0)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("KSPACE_BENCH_THREADS", "1")
    assert worker_count() == 1
    monkeypatch.setenv("KSPACE_BENCH_THREADS", "many")
    with pytest.raises(ValueError):
        worker_count()
