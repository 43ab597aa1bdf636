"""Wall-clock latency and throughput of the reconstructors, file I/O included."""

from __future__ import annotations

import csv
import resource
import statistics
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

from .dataset import CaseDir, kspace_name, mask_name, worker_count
from .operators import estimate_csm
from .recon import ReconConfig, reconstruct
from .sampling import SamplingMask
from .tensor_io import read_cxa, write_cxa

SUMMARY_COLUMNS = ("method", "mode", "n_cases", "runtime_s", "t_vol_s", "t_frame_s",
                   "throughput_slices_per_s")


class BenchError(RuntimeError):
    pass


@dataclass
class BenchRecord:
    method: str
    case_id: str
    frames: int
    t_volume: float
    t_frame: float
    throughput: float
    peak_resident_memory: int
    repeats: int

    def to_dict(self) -> dict:
        return asdict(self)


def peak_rss_bytes() -> int:
    rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    # ru_maxrss is KiB on Linux, bytes on macOS
    return int(rss if sys.platform == "darwin" else rss * 1024)


def run_case_once(case: CaseDir, cfg: ReconConfig, pattern: str, af: int, out_path) -> int:
    """Read inputs, reconstruct and write the output; returns the frame count."""
    y = read_cxa(case.path / kspace_name(pattern, af)).data
    mask = SamplingMask.read(case.path / mask_name(pattern, af))
    csm = None
    if cfg.method != "zf":
        csm = estimate_csm(y, mask.acs_lines).maps
    result = reconstruct(y, mask.operator_mask(), csm, cfg)
    write_cxa(result.image, out_path)
    return result.image.shape[0]


def _timed(case, cfg, pattern, af, scratch):
    t0 = time.perf_counter()
    try:
        frames = run_case_once(case, cfg, pattern, af, scratch)
    except Exception as exc:
        raise BenchError(f"{cfg.method} failed on {case.relative()}: {exc}") from exc
    return frames, time.perf_counter() - t0


def bench_recon(method: str, cases: Sequence[CaseDir], cfg: ReconConfig | None = None,
                repeats: int = 3, pattern: str = "uniform", af: int = 4) -> list[BenchRecord]:
    """Median wall clock per case over ``repeats`` runs after one discarded warm-up."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    cfg = cfg or ReconConfig.for_method(method)
    if cfg.method != method:
        raise ValueError("cfg.method does not match method")
    records = []
    with tempfile.TemporaryDirectory() as tmp:
        scratch = Path(tmp) / "out.cxa"
        for case in cases:
            _timed(case, cfg, pattern, af, scratch)
            times = []
            for _ in range(repeats):
                frames, dt = _timed(case, cfg, pattern, af, scratch)
                times.append(dt)
            t_vol = statistics.median(times)
            records.append(BenchRecord(method, f"{case.split}/{case.case_id}/{case.modality}",
                                       frames, t_vol, t_vol / frames, frames / t_vol,
                                       peak_rss_bytes(), repeats))
    return records


def bench_parallel(method: str, cases: Sequence[CaseDir], cfg: ReconConfig | None = None,
                   pattern: str = "uniform", af: int = 4, workers: int | None = None) -> dict:
    """Aggregate throughput with cases spread over a thread pool (one pass)."""
    cfg = cfg or ReconConfig.for_method(method)
    workers = workers or worker_count()
    with tempfile.TemporaryDirectory() as tmp:
        def job(i_case):
            i, case = i_case
            return _timed(case, cfg, pattern, af, Path(tmp) / f"out{i}.cxa")

        t0 = time.perf_counter()
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, enumerate(cases)))
        wall = time.perf_counter() - t0
    frames = sum(f for f, _ in results)
    return dict(method=method, mode=f"parallel x{workers}", n_cases=len(cases), runtime_s=wall,
                t_vol_s=wall / len(cases), t_frame_s=wall / frames,
                throughput_slices_per_s=frames / wall)


def summarize(records: Sequence[BenchRecord]) -> list[dict]:
    """Per-method medians; runtime is the summed per-case median volume time."""
    rows = []
    for method in sorted({r.method for r in records}):
        rs = [r for r in records if r.method == method]
        rows.append(dict(
            method=method,
            mode="serial",
            n_cases=len(rs),
            runtime_s=sum(r.t_volume for r in rs),
            t_vol_s=statistics.median(r.t_volume for r in rs),
            t_frame_s=statistics.median(r.t_frame for r in rs),
            throughput_slices_per_s=statistics.median(r.throughput for r in rs),
        ))
    return rows


def write_summary_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})
