"""Command-line front end: phantom -> mask -> undersample -> recon -> eval -> rank, plus bench.

Exit status is 0 on success, 1 on harness errors (missing or inconsistent
inputs) and 2 on argument errors. Team failures found by ``eval`` are
recorded as data and do not change the exit status.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (CaseDir, case_name, case_seed, iter_cases, kspace_name, mask_name,
                      recon_name, split_counts, worker_count, write_manifest)
from .phantom import MODALITIES, PhantomSpec, generate_phantom, phantom_to_kspace
from .recon import METHODS, ReconConfig, reconstruct
from .sampling import (DEFAULT_ACS, PATTERNS, TASK_PRESETS, MaskSpec, SamplingMask, apply_mask,
                       check_preset, make_mask)
from .tensor_io import CxaError, read_cxa, read_metrics_jsonl, write_cxa, write_metrics_jsonl


class HarnessFailure(RuntimeError):
    """Missing or inconsistent inputs; reported with exit status 1."""


def _matrix(text: str) -> tuple:
    try:
        ky, kx = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"matrix must look like 192x156, got {text!r}") from None
    return ky, kx


def _csv_list(choices=None):
    def parse(text):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if not items:
            raise argparse.ArgumentTypeError("empty list")
        if choices is not None:
            bad = [t for t in items if t not in choices]
            if bad:
                raise argparse.ArgumentTypeError(
                    f"unknown value(s) {', '.join(bad)}; choose from {', '.join(choices)}")
        return items
    return parse


def _cases(data, split=None) -> list[CaseDir]:
    data = Path(data)
    if not data.is_dir():
        raise HarnessFailure(f"data directory {data} does not exist")
    cases = list(iter_cases(data, split))
    if not cases:
        raise HarnessFailure(f"no cases found under {data}")
    return cases


def _case_index(case: CaseDir) -> int:
    return int(case.case_id.removeprefix("case"))


def _grid(args) -> list[tuple]:
    """(pattern, af) pairs requested, checked against the task preset when given."""
    pairs = [(p, af) for p in args.pattern for af in args.af]
    if getattr(args, "task", None):
        for p, af in pairs:
            try:
                check_preset(args.task, p, af)
            except ValueError as exc:
                args.parser.error(str(exc))
    return pairs


def _tag(pairs) -> str:
    return "_".join(f"{p}{af}" for p, af in pairs)


def _map(fn, items):
    items = list(items)
    workers = min(worker_count(), max(1, len(items)))
    if workers == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --- phantom -----------------------------------------------------------------

def cmd_phantom(args) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise HarnessFailure(f"cannot create {out}: {exc}") from None
    counts = split_counts(args.cases)
    jobs, seeds = [], {}
    index = 0
    for split, n in counts.items():
        for _ in range(n):
            seeds[case_name(index)] = case_seed(args.seed, index)
            for modality in args.modalities:
                jobs.append((CaseDir(out, split, case_name(index), modality), seeds[case_name(index)]))
            index += 1

    def build(job):
        case, seed = job
        spec = PhantomSpec(args.matrix, args.frames, args.coils, case.modality, seed, args.contraction)
        image, csm = generate_phantom(spec)
        case.path.mkdir(parents=True, exist_ok=True)
        write_cxa(image, case.path / "ref_image.cxa")
        write_cxa(phantom_to_kspace(image, csm), case.path / "full_kspace.cxa")
        write_cxa(csm, case.path / "csm.cxa")
        return [case.path / n for n in ("ref_image.cxa", "full_kspace.cxa", "csm.cxa")]

    try:
        PhantomSpec(args.matrix, args.frames, args.coils, args.modalities[0], 0, args.contraction)
    except ValueError as exc:
        args.parser.error(str(exc))
    try:
        outputs = [p for paths in _map(build, jobs) for p in paths]
    except OSError as exc:
        raise HarnessFailure(f"cannot write dataset: {exc}") from None
    params = dict(cases=args.cases, frames=args.frames, coils=args.coils, matrix=list(args.matrix),
                  modalities=args.modalities, seed=args.seed, contraction=args.contraction,
                  splits=counts)
    write_manifest(out, "phantom", params, seeds=dict(run=args.seed, cases=seeds), outputs=outputs,
                   name="manifest_phantom.json")
    print(f"wrote {len(jobs)} case volumes under {out} (splits {counts})")
    return 0


# --- mask / undersample ------------------------------------------------------

def mask_seed(seed: int, case_index: int, pattern: str, af: int) -> int:
    state = np.random.SeedSequence([seed, case_index, PATTERNS.index(pattern), af])
    return int(state.generate_state(1, dtype=np.uint64)[0])


def cmd_mask(args) -> int:
    pairs = _grid(args)
    cases = _cases(args.data, args.split)
    outputs, seeds = [], {}
    for case in cases:
        dims = read_cxa(case.path / "ref_image.cxa").dims
        frames, ky, kx = dims
        for pattern, af in pairs:
            seed = mask_seed(args.seed, _case_index(case), pattern, af)
            seeds[f"{case.relative()}/{pattern}/{af}"] = seed
            try:
                mask = make_mask(MaskSpec(pattern, af, frames, ky, kx, args.acs, seed))
            except ValueError as exc:
                args.parser.error(f"{case.relative()}: {exc}")
            path = case.path / mask_name(pattern, af)
            mask.write(path)
            outputs.append(path)
    params = dict(pattern=args.pattern, af=args.af, acs=args.acs, seed=args.seed, task=args.task,
                  split=args.split)
    write_manifest(args.data, "mask", params, seeds=dict(run=args.seed, masks=seeds),
                   outputs=outputs, name=f"manifest_mask_{_tag(pairs)}.json")
    print(f"wrote {len(outputs)} masks")
    return 0


def cmd_undersample(args) -> int:
    pairs = _grid(args)
    cases = _cases(args.data, args.split)
    inputs, outputs = [], []
    for case in cases:
        full_path = case.path / "full_kspace.cxa"
        try:
            full = read_cxa(full_path).data
        except (OSError, CxaError) as exc:
            raise HarnessFailure(f"{full_path}: {exc}") from None
        inputs.append(full_path)
        for pattern, af in pairs:
            mpath = case.path / mask_name(pattern, af)
            if not mpath.is_file():
                raise HarnessFailure(f"missing mask {mpath}; run the mask subcommand first")
            mask = SamplingMask.read(mpath)
            if mask.data.shape[:2] != full.shape[1:3]:
                raise HarnessFailure(f"{mpath}: mask extents do not match the k-space")
            path = case.path / kspace_name(pattern, af)
            write_cxa(apply_mask(full, mask.operator_mask()), path)
            inputs.append(mpath)
            outputs.append(path)
    params = dict(pattern=args.pattern, af=args.af, task=args.task, split=args.split)
    write_manifest(args.data, "undersample", params, inputs=inputs, outputs=outputs,
                   name=f"manifest_undersample_{_tag(pairs)}.json")
    print(f"wrote {len(outputs)} undersampled k-space files")
    return 0


# --- recon -------------------------------------------------------------------

def cmd_recon(args) -> int:
    from .operators import estimate_csm

    pairs = _grid(args)
    cases = _cases(args.data, args.split)
    cfg = ReconConfig.for_method(args.method, **({"max_iters": args.max_iters} if args.max_iters else {}))
    out = Path(args.out)
    jobs = [(c, p, af) for c in cases for p, af in pairs]
    for case, pattern, af in jobs:
        for need in (kspace_name(pattern, af), mask_name(pattern, af)):
            if not (case.path / need).is_file():
                raise HarnessFailure(f"missing input {case.path / need}")

    def run(job):
        case, pattern, af = job
        y = read_cxa(case.path / kspace_name(pattern, af)).data
        mask = SamplingMask.read(case.path / mask_name(pattern, af))
        csm = None
        if cfg.method != "zf":
            if args.csm == "true":
                csm = read_cxa(case.path / "csm.cxa").data
            else:
                csm = estimate_csm(y, mask.acs_lines).maps
        result = reconstruct(y, mask.operator_mask(), csm, cfg)
        dest = case.under(out) / recon_name(pattern, af)
        dest.parent.mkdir(parents=True, exist_ok=True)
        write_cxa(result.image, dest)
        return dest, dict(case=str(case.relative()), pattern=pattern, af=af, **result.summary())

    t0 = time.perf_counter()
    results = _map(run, jobs)
    wall = time.perf_counter() - t0
    params = dict(data=str(Path(args.data).resolve()), pattern=args.pattern, af=args.af,
                  team=args.team, csm=args.csm, task=args.task, split=args.split,
                  config=cfg.to_dict(), workers=worker_count())
    write_manifest(out, "recon", params, outputs=[d for d, _ in results],
                   extra=dict(runs=[s for _, s in results], wall_time_s=wall),
                   name=f"manifest_recon_{args.method}_{_tag(pairs)}.json")
    print(f"{args.method}: {len(results)} reconstructions in {wall:.1f} s")
    return 0


# --- eval --------------------------------------------------------------------

def cmd_eval(args) -> int:
    from .evaluation import (METRIC_CONVENTION, aggregate_all, aggregate_overall, evaluate_case,
                             feedback_report)
    from .plotting import plot_ssim_by_af

    pairs = _grid(args)
    cases = _cases(args.data, args.split)
    pred = Path(args.pred)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(c, p, af) for c in cases for p, af in pairs]

    def run(job):
        case, pattern, af = job
        return evaluate_case(case.under(pred) / recon_name(pattern, af), case.path / "ref_image.cxa",
                             args.team, case.case_id, case.modality, pattern, af)

    records = _map(run, jobs)
    metrics_path = out / "metrics.jsonl"
    write_metrics_jsonl(records, metrics_path)
    (out / "feedback.txt").write_text(feedback_report(records))
    aggregates = aggregate_all(records)
    overall = aggregate_overall(aggregates, args.team)
    summary = dict(team=args.team, metric_convention=METRIC_CONVENTION,
                   overall=vars(overall), cells=[a.to_dict() for a in aggregates])
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    plot_ssim_by_af(aggregates, out / "ssim_by_af.png", title=args.team)
    params = dict(data=str(Path(args.data).resolve()), pred=str(pred.resolve()),
                  pattern=args.pattern, af=args.af, team=args.team, task=args.task,
                  split=args.split)
    write_manifest(out, "eval", params, outputs=[metrics_path, out / "feedback.txt",
                                                 out / "summary.json"],
                   name="manifest_eval.json")
    failed = sum(not r.valid for r in records)
    print(f"{args.team}: {len(records)} cases, {failed} failed, "
          f"SSIM_adj={overall.ssim_adj:.4f} PSNR_adj={overall.psnr_adj:.2f}")
    return 0


# --- rank --------------------------------------------------------------------

def cmd_rank(args) -> int:
    from .plotting import plot_leaderboard, plot_reader_vs_metric
    from .ranking import (RankingError, build_leaderboard, read_reader_csv,
                          write_leaderboard_csv)

    records = []
    for path in args.metrics:
        try:
            records.extend(read_metrics_jsonl(path))
        except (OSError, ValueError) as exc:
            raise HarnessFailure(f"{path}: {exc}") from None
    readers = None
    if args.readers:
        try:
            readers = read_reader_csv(args.readers)
        except (OSError, RankingError) as exc:
            raise HarnessFailure(str(exc)) from None
    try:
        report = build_leaderboard(records, readers)
    except RankingError as exc:
        raise HarnessFailure(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_leaderboard_csv(report.entries, out / "leaderboard.csv")
    icc = None
    if report.icc is not None:
        icc = dict(icc=report.icc.icc, ms_rows=report.icc.ms_rows, ms_cols=report.icc.ms_cols,
                   ms_error=report.icc.ms_error, undefined=report.icc.undefined)
    fit = None
    if report.fit is not None:
        fit = dict(coefficients_constant_first=[float(c) for c in report.fit.coefficients],
                   residual_norm=report.fit.residual_norm, n_points=len(report.fit_points[0]))
    with open(out / "leaderboard.json", "w") as fh:
        json.dump(dict(entries=[e.to_dict() for e in report.entries], icc=icc, cubic_fit=fit,
                       notes=report.notes), fh, indent=2, sort_keys=True)
    outputs = [out / "leaderboard.csv", out / "leaderboard.json",
               plot_leaderboard(report.entries, out / "leaderboard.png")]
    if report.fit is not None:
        outputs.append(plot_reader_vs_metric(*report.fit_points, report.fit,
                                             out / "reader_vs_ssim.png"))
    write_manifest(out, "rank", dict(metrics=[str(p) for p in args.metrics],
                                     readers=str(args.readers) if args.readers else None),
                   inputs=[Path(p) for p in args.metrics] + ([Path(args.readers)] if args.readers else []),
                   outputs=outputs, name="manifest_rank.json")
    for e in report.entries:
        print(f"{e.final_rank:>3}  {e.team:<20} SSIM_adj={e.ssim_adj_overall:.4f}")
    for note in report.notes:
        print(f"note: {note}")
    return 0


# --- bench -------------------------------------------------------------------

def cmd_bench(args) -> int:
    from .bench import BenchError, bench_parallel, bench_recon, summarize, write_summary_csv
    from .plotting import plot_throughput

    cases = _cases(args.data, args.split)
    if args.limit:
        cases = cases[: args.limit]
    pattern, af = args.pattern, args.af
    for case in cases:
        for need in (kspace_name(pattern, af), mask_name(pattern, af)):
            if not (case.path / need).is_file():
                raise HarnessFailure(f"missing input {case.path / need}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records, rows = [], []
    try:
        for method in args.methods:
            recs = bench_recon(method, cases, repeats=args.repeats, pattern=pattern, af=af)
            records.extend(recs)
            rows.extend(summarize(recs))
            if args.parallel:
                rows.append(bench_parallel(method, cases, pattern=pattern, af=af))
    except BenchError as exc:
        raise HarnessFailure(str(exc)) from None
    write_summary_csv(rows, out / "bench.csv")
    with open(out / "bench_records.json", "w") as fh:
        json.dump([r.to_dict() for r in records], fh, indent=2)
    plot_throughput(records, out / "throughput.png")
    write_manifest(out, "bench", dict(data=str(Path(args.data).resolve()), methods=args.methods,
                                      pattern=pattern, af=af, repeats=args.repeats,
                                      parallel=args.parallel, workers=worker_count(),
                                      n_cases=len(cases)),
                   outputs=[out / "bench.csv", out / "bench_records.json", out / "throughput.png"],
                   name="manifest_bench.json")
    for row in rows:
        print(f"{row['method']:<12} {row['mode']:<12} t_vol={row['t_vol_s']:.3f} s "
              f"throughput={row['throughput_slices_per_s']:.2f} slices/s")
    return 0


# --- parser ------------------------------------------------------------------

def _add_grid(p, pattern_default=("uniform",), af_default=(4,)):
    p.add_argument("--pattern", type=_csv_list(PATTERNS), default=list(pattern_default),
                   help="comma-separated sampling patterns")
    p.add_argument("--af", type=_csv_list(), default=[str(a) for a in af_default],
                   help="comma-separated nominal acceleration factors")
    p.add_argument("--task", choices=sorted(TASK_PRESETS), help="restrict to a task preset")
    p.add_argument("--split", choices=("train", "val", "test"), help="only this split")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kspace-bench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="synthesise a dataset tree")
    p.add_argument("--cases", type=int, default=4)
    p.add_argument("--frames", type=int, default=12)
    p.add_argument("--coils", type=int, default=8)
    p.add_argument("--matrix", type=_matrix, default=(192, 156), help="KYxKX, e.g. 192x156")
    p.add_argument("--modalities", type=_csv_list(MODALITIES), default=["cine_sax"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--contraction", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("mask", help="write k-t sampling masks into each case")
    p.add_argument("--data", required=True)
    _add_grid(p)
    p.add_argument("--acs", type=int, default=DEFAULT_ACS)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("undersample", help="apply masks to the full k-space")
    p.add_argument("--data", required=True)
    _add_grid(p)
    p.set_defaults(func=cmd_undersample)

    p = sub.add_parser("recon", help="reconstruct undersampled k-space")
    p.add_argument("--data", required=True)
    _add_grid(p)
    p.add_argument("--method", choices=METHODS, default="cgsense")
    p.add_argument("--csm", choices=("estimate", "true"), default="estimate")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--team", default=None, help="team label recorded in the manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("eval", help="score a prediction tree against the references")
    p.add_argument("--data", required=True)
    p.add_argument("--pred", required=True)
    _add_grid(p)
    p.add_argument("--team", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rank", help="build the leaderboard from metrics files")
    p.add_argument("--metrics", nargs="+", required=True)
    p.add_argument("--readers", default=None, help="reader-score CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("bench", help="time the reconstructors")
    p.add_argument("--data", required=True)
    p.add_argument("--methods", type=_csv_list(METHODS), default=list(METHODS))
    p.add_argument("--pattern", choices=PATTERNS, default="uniform")
    p.add_argument("--af", type=int, default=4)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--limit", type=int, default=0, help="use at most this many cases")
    p.add_argument("--parallel", action="store_true", help="also time a thread-pool pass")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.parser = parser
    if isinstance(getattr(args, "af", None), list):
        try:
            args.af = [int(a) for a in args.af]
        except ValueError:
            parser.error(f"--af expects integers, got {args.af}")
    if getattr(args, "cases", 1) < 1:
        parser.error("--cases must be >= 1")
    try:
        return args.func(args)
    except HarnessFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
