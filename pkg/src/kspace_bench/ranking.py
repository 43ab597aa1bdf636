"""Reader-score normalisation, paired tests, inter-reader reliability and
leaderboard rank aggregation."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

REFERENCE = "REFERENCE"
READER_COLUMNS = ("reader_id", "entity", "case_id", "modality", "pattern", "af", "score")
EXACT_MAX_N = 20


class RankingError(ValueError):
    pass


@dataclass(frozen=True)
class ReaderScore:
    reader_id: str
    entity: str
    case_id: str
    modality: str
    pattern: str
    af: int
    score: int

    def __post_init__(self):
        if isinstance(self.score, bool) or int(self.score) != self.score or not 1 <= self.score <= 5:
            raise RankingError(f"score must be an integer in 1..5, got {self.score!r}")

    @property
    def group(self) -> tuple:
        return (self.reader_id, self.case_id, self.modality, self.pattern, self.af)


def read_reader_csv(path) -> list[ReaderScore]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != READER_COLUMNS:
            raise RankingError(f"{path}: header must be {','.join(READER_COLUMNS)}")
        rows = []
        for i, row in enumerate(reader, 2):
            try:
                rows.append(ReaderScore(row["reader_id"], row["entity"], row["case_id"],
                                        row["modality"], row["pattern"], int(row["af"]),
                                        int(row["score"])))
            except (ValueError, TypeError) as exc:
                raise RankingError(f"{path}:{i}: {exc}") from None
    return rows


def write_reader_csv(rows: Iterable[ReaderScore], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(READER_COLUMNS)
        for r in rows:
            w.writerow([r.reader_id, r.entity, r.case_id, r.modality, r.pattern, r.af, r.score])


@dataclass(frozen=True)
class DiffScore:
    reader_id: str
    team: str
    case_id: str
    modality: str
    pattern: str
    af: int
    diff: int


def reader_diff(table: Sequence[ReaderScore]) -> list[DiffScore]:
    """Difference between each team's score and the same reader's reference score."""
    refs = {}
    for r in table:
        if r.entity == REFERENCE:
            if r.group in refs:
                raise RankingError(f"duplicate reference row for group {r.group}")
            refs[r.group] = r.score
    out = []
    for r in table:
        if r.entity == REFERENCE:
            continue
        if r.group not in refs:
            reader, case, modality, pattern, af = r.group
            raise RankingError(
                f"missing REFERENCE row for reader={reader} case={case} "
                f"modality={modality} pattern={pattern} af={af}"
            )
        out.append(DiffScore(r.reader_id, r.entity, r.case_id, r.modality, r.pattern,
                             r.af, r.score - refs[r.group]))
    return out


def reader_zscore(diffs: Sequence[DiffScore]) -> list[float]:
    """Z-score each difference with its reader's mean and population std-dev.

    Differences are integers, so z = (n d - S) / sqrt(n Q - S^2) with
    S = sum d and Q = sum d^2 is evaluated in exact integer arithmetic up
    to the final division; a constant per-reader offset leaves it bit-identical.
    """
    by_reader = defaultdict(list)
    for d in diffs:
        by_reader[d.reader_id].append(int(d.diff))
    stats = {}
    for reader, vals in by_reader.items():
        n, s, q = len(vals), sum(vals), sum(v * v for v in vals)
        spread = n * q - s * s
        if spread == 0:
            raise RankingError(f"reader {reader!r} has zero variance in difference scores")
        stats[reader] = (n, s, math.sqrt(spread))
    out = []
    for d in diffs:
        n, s, root = stats[d.reader_id]
        out.append((n * int(d.diff) - s) / root)
    return out


def median_aggregate(values: Sequence[float]) -> float:
    if len(values) == 0:
        raise RankingError("median of an empty group")
    v = sorted(values)
    n = len(v)
    mid = n // 2
    return float(v[mid]) if n % 2 else (v[mid - 1] + v[mid]) / 2.0


def median_by(diffs: Sequence[DiffScore], z: Sequence[float], keys=("team",)) -> dict:
    """Median Z per group, e.g. per team or per (team, modality)."""
    groups = defaultdict(list)
    for d, zz in zip(diffs, z):
        groups[tuple(getattr(d, k) for k in keys)].append(zz)
    return {k[0] if len(k) == 1 else k: median_aggregate(v) for k, v in sorted(groups.items())}


# --- Wilcoxon signed-rank ---------------------------------------------------

@dataclass
class WilcoxonResult:
    statistic: float
    p_value: float
    n: int
    method: str
    degenerate: bool = False

    @property
    def stars(self) -> str:
        return significance_stars(self.p_value)


def significance_stars(p: float) -> str:
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def average_ranks(values) -> np.ndarray:
    """1-based ranks, ties sharing the mean of the positions they occupy."""
    values = np.asarray(values)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def signed_rank_counts(doubled_ranks: Sequence[int]) -> np.ndarray:
    """Number of sign assignments giving each value of 2*W+ (exact null distribution)."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(a, b, method: str = "auto") -> WilcoxonResult:
    """Paired two-sided Wilcoxon signed-rank test.

    Zero differences are dropped and tied |d| get average ranks. ``auto``
    uses the exact null distribution for n <= 20 and otherwise the normal
    approximation with tie and continuity corrections.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 1:
        raise ValueError("need two equal-length 1-D samples")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, "degenerate", degenerate=True)
    ranks = average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if method == "auto":
        method = "exact" if n <= EXACT_MAX_N else "normal"
    if method == "exact":
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = signed_rank_counts(doubled.tolist())
        w2 = int(round(2 * w_plus))
        upper = int(counts[w2:].sum())
        lower = int(counts[:w2 + 1].sum())
        p = min(1.0, 2 * min(upper, lower) / 2**n)
    elif method == "normal":
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - float(((tie_counts**3) - tie_counts).sum()) / 48.0
        diff = w_plus - mean
        diff -= math.copysign(0.5, diff) if diff != 0 else 0.0
        z = diff / math.sqrt(var) if var > 0 else 0.0
        p = min(1.0, math.erfc(abs(z) / math.sqrt(2)))
    else:
        raise ValueError(f"unknown method {method!r}")
    return WilcoxonResult(w_plus, p, n, method)


# --- inter-reader reliability -----------------------------------------------

@dataclass
class IccResult:
    icc: Optional[float]
    ms_rows: float
    ms_cols: float
    ms_error: float
    undefined: bool = False


def icc_3k(matrix) -> IccResult:
    """Two-way mixed, consistency, average-measures ICC(3,k).

    ``matrix`` is cases x readers. ICC = (MS_rows - MS_error) / MS_rows
    from the additive two-way ANOVA (no interaction term).
    """
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError("need at least 2 cases and 2 readers")
    n, k = x.shape
    grand = x.mean()
    row_means = x.mean(axis=1)
    col_means = x.mean(axis=0)
    ss_rows = k * float(((row_means - grand) ** 2).sum())
    ss_cols = n * float(((col_means - grand) ** 2).sum())
    resid = x - row_means[:, None] - col_means[None, :] + grand
    ss_err = float((resid**2).sum())
    ms_rows = ss_rows / (n - 1)
    ms_cols = ss_cols / (k - 1)
    ms_err = ss_err / ((n - 1) * (k - 1))
    if ms_rows == 0:
        return IccResult(None, ms_rows, ms_cols, ms_err, undefined=True)
    return IccResult((ms_rows - ms_err) / ms_rows, ms_rows, ms_cols, ms_err)


def reader_matrix(diffs: Sequence[DiffScore], z: Sequence[float]):
    """Arrange Z scores into an items x readers matrix (items rated by every reader)."""
    readers = sorted({d.reader_id for d in diffs})
    cells = defaultdict(dict)
    for d, zz in zip(diffs, z):
        cells[(d.team, d.case_id, d.modality, d.pattern, d.af)][d.reader_id] = zz
    items = sorted(k for k, v in cells.items() if len(v) == len(readers))
    return np.array([[cells[i][r] for r in readers] for i in items]), items, readers


# --- ranks -------------------------------------------------------------------

def competition_rank(values: Sequence[float], higher_is_better: bool = True) -> list[int]:
    """Standard competition ranking ("1224"): ties share the smallest rank."""
    vals = list(values)
    ranks = []
    for v in vals:
        better = sum(1 for u in vals if (u > v if higher_is_better else u < v))
        ranks.append(better + 1)
    return ranks


@dataclass
class LeaderboardEntry:
    team: str
    ssim_adj_overall: float
    reader_score_mean: Optional[float]
    ssim_rank: int
    reader_rank: Optional[int]
    average_rank: float
    final_rank: int
    reader_z_median: Optional[float] = None
    psnr_adj_overall: Optional[float] = None
    nmse_adj_overall: Optional[float] = None
    p_values: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def aggregate_final_rank(teams: Sequence[str], ssim_values: Sequence[float],
                         reader_values: Optional[Sequence[float]] = None) -> list[LeaderboardEntry]:
    """Average the SSIM rank and the reader rank, then competition-rank the averages.

    Without reader values the final rank is the SSIM rank.
    """
    if len(teams) == 0:
        raise RankingError("need at least one team")
    ssim_rank = competition_rank(ssim_values, higher_is_better=True)
    if reader_values is None:
        reader_rank = [None] * len(teams)
        avg = [float(r) for r in ssim_rank]
    else:
        reader_rank = competition_rank(reader_values, higher_is_better=True)
        avg = [(a + b) / 2.0 for a, b in zip(ssim_rank, reader_rank)]
    final = competition_rank(avg, higher_is_better=False)
    entries = [
        LeaderboardEntry(
            team=t,
            ssim_adj_overall=float(s),
            reader_score_mean=None if reader_values is None else float(reader_values[i]),
            ssim_rank=ssim_rank[i],
            reader_rank=reader_rank[i],
            average_rank=avg[i],
            final_rank=final[i],
        )
        for i, (t, s) in enumerate(zip(teams, ssim_values))
    ]
    return sorted(entries, key=lambda e: (e.final_rank, e.team))


def reader_score_means(table: Sequence[ReaderScore]) -> dict:
    """Mean raw score per team: each reader's scores are averaged per
    (pattern, AF) cell, cells are averaged per reader, then readers are averaged."""
    cells = defaultdict(list)
    for r in table:
        if r.entity != REFERENCE:
            cells[(r.entity, r.reader_id, r.pattern, r.af)].append(r.score)
    per_reader = defaultdict(list)
    for (team, reader, _, _), scores in cells.items():
        per_reader[(team, reader)].append(sum(scores) / len(scores))
    per_team = defaultdict(list)
    for (team, _), means in per_reader.items():
        per_team[team].append(math.fsum(means) / len(means))
    return {t: math.fsum(v) / len(v) for t, v in sorted(per_team.items())}


# --- cubic regression ------------------------------------------------------

@dataclass
class PolyFit:
    coefficients: np.ndarray  # constant first
    residual_norm: float

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=np.float64), self.coefficients)


def polyfit_cubic(x, y) -> PolyFit:
    """Least-squares cubic via an orthogonal (QR/SVD) solve; needs >= 4 distinct x."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be equal-length 1-D arrays")
    if np.unique(x).size < 4:
        raise RankingError("cubic fit needs at least 4 distinct x values")
    design = np.vander(x, 4, increasing=True)
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < 4:
        raise RankingError("rank-deficient design matrix")
    return PolyFit(coef, float(np.linalg.norm(design @ coef - y)))


# --- leaderboard -------------------------------------------------------------

PAIRED_METRICS = ("ssim", "psnr_db", "nmse")


def paired_tests(records, team: str, top: str) -> dict:
    """Wilcoxon p-values of ``team`` against ``top`` per metric, paired by case."""
    def by_key(t):
        return {(r.case_id, r.modality, r.pattern, r.af): r for r in records if r.team == t and r.valid}

    mine, theirs = by_key(team), by_key(top)
    keys = sorted(set(mine) & set(theirs))
    out = {}
    for metric in PAIRED_METRICS:
        if not keys:
            out[metric] = None
            continue
        a = [getattr(mine[k], metric) for k in keys]
        b = [getattr(theirs[k], metric) for k in keys]
        out[metric] = wilcoxon_signed_rank(a, b).p_value
    return out


def _rank_with_missing_readers(teams, ssim, reader):
    """Reader-scored teams are ranked first by averaged rank; the rest follow by SSIM."""
    scored = [i for i, r in enumerate(reader) if r is not None]
    unscored = [i for i, r in enumerate(reader) if r is None]
    ssim_rank = competition_rank(ssim)
    entries = []
    if scored:
        sub = aggregate_final_rank([teams[i] for i in scored], [ssim[i] for i in scored],
                                   [reader[i] for i in scored])
        for e in sub:
            i = teams.index(e.team)
            e.ssim_rank = ssim_rank[i]
            e.average_rank = (e.ssim_rank + e.reader_rank) / 2.0
        final = competition_rank([e.average_rank for e in sub], higher_is_better=False)
        for e, f in zip(sub, final):
            e.final_rank = f
        entries.extend(sub)
    if unscored:
        sub_rank = competition_rank([ssim[i] for i in unscored])
        for i, r in zip(unscored, sub_rank):
            entries.append(LeaderboardEntry(teams[i], float(ssim[i]), None, ssim_rank[i], None,
                                            float(ssim_rank[i]), len(scored) + r))
    return sorted(entries, key=lambda e: (e.final_rank, e.team))


@dataclass
class RankingReport:
    entries: list
    icc: Optional[IccResult] = None
    fit: Optional[PolyFit] = None
    fit_points: tuple = ((), ())
    notes: list = field(default_factory=list)


def build_leaderboard(records, reader_table: Optional[Sequence[ReaderScore]] = None) -> RankingReport:
    """Rank teams from per-case metric records and optional reader scores."""
    from .evaluation import aggregate_all, aggregate_overall

    records = list(records)
    teams = sorted({r.team for r in records})
    if not teams:
        raise RankingError("no metric records")
    summaries = {t: aggregate_overall(aggregate_all(r for r in records if r.team == t), t) for t in teams}
    ssim = [summaries[t].ssim_adj for t in teams]
    notes = []

    reader_means, z_medians, icc, fit, points = {}, {}, None, None, ((), ())
    if reader_table:
        diffs = reader_diff(reader_table)
        z = reader_zscore(diffs)
        reader_means = reader_score_means(reader_table)
        z_medians = median_by(diffs, z, keys=("team",))
        mat, items, readers = reader_matrix(diffs, z)
        if mat.shape[0] >= 2 and mat.shape[1] >= 2:
            icc = icc_3k(mat)
        else:
            notes.append("ICC skipped: need >= 2 items rated by >= 2 readers")
        item_z = median_by(diffs, z, keys=("team", "case_id", "modality", "pattern", "af"))
        lookup = {(r.team, r.case_id, r.modality, r.pattern, r.af): r.ssim for r in records if r.valid}
        keys = [k for k in item_z if k in lookup]
        xs = [lookup[k] for k in keys]
        ys = [item_z[k] for k in keys]
        points = (xs, ys)
        try:
            fit = polyfit_cubic(xs, ys) if xs else None
        except RankingError as exc:
            notes.append(f"cubic fit skipped: {exc}")
    reader = [reader_means.get(t) for t in teams]
    entries = _rank_with_missing_readers(teams, ssim, reader)

    top = entries[0].team
    for e in entries:
        s = summaries[e.team]
        e.psnr_adj_overall = s.psnr_adj
        e.nmse_adj_overall = s.nmse_adj
        e.reader_z_median = z_medians.get(e.team)
        e.p_values = {} if e.team == top else paired_tests(records, e.team, top)
    return RankingReport(entries, icc, fit, points, notes)


LEADERBOARD_COLUMNS = ("final_rank", "team", "ssim_adj", "psnr_adj", "nmse_adj", "reader_score",
                       "reader_z_median", "ssim_rank", "reader_rank", "average_rank",
                       "p_ssim", "p_psnr", "p_nmse")


def _fmt(v, spec=".6g"):
    return "NA" if v is None else format(v, spec)


def _fmt_p(p):
    return "NA" if p is None else f"{p:.4g}{significance_stars(p)}"


def write_leaderboard_csv(entries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LEADERBOARD_COLUMNS)
        for e in entries:
            p = e.p_values or {}
            w.writerow([e.final_rank, e.team, _fmt(e.ssim_adj_overall), _fmt(e.psnr_adj_overall),
                        _fmt(e.nmse_adj_overall), _fmt(e.reader_score_mean),
                        _fmt(e.reader_z_median), e.ssim_rank, _fmt(e.reader_rank, "d"),
                        _fmt(e.average_rank), _fmt_p(p.get("ssim")), _fmt_p(p.get("psnr_db")),
                        _fmt_p(p.get("nmse"))])
