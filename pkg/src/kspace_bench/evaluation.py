"""Case validation, image-quality metrics and success-rate-weighted aggregation."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from .tensor_io import CaseMetrics, CxaError, read_cxa

SSIM_WIN = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PSNR_CAP_DB = 300.0

METRIC_CONVENTION = (
    f"SSIM: {SSIM_WIN}x{SSIM_WIN} uniform window, K1={SSIM_K1}, K2={SSIM_K2}, "
    "data range max(ref)-min(ref) over the volume, averaged over 2-D frames; "
    f"PSNR over the volume with the same range, capped at {PSNR_CAP_DB:g} dB; "
    "NMSE = ||pred-ref||^2 / ||ref||^2"
)


class HarnessError(RuntimeError):
    """Problem with the reference data, as opposed to a team failure."""


def validate_case(pred_path, ref_path) -> Optional[str]:
    """Return ``None`` for a valid prediction, else the failure reason."""
    try:
        ref = read_cxa(ref_path)
    except (OSError, CxaError) as exc:
        raise HarnessError(f"unreadable reference {ref_path}: {exc}") from exc
    if not Path(pred_path).is_file():
        return "missing_file"
    try:
        pred = read_cxa(pred_path)
    except CxaError:
        return "dimension_mismatch"
    if pred.dims != ref.dims:
        return "dimension_mismatch"
    if not pred.finite:
        return "non_finite"
    return None


def _as_volume(a):
    a = np.asarray(a, dtype=np.float64)
    return a[None] if a.ndim == 2 else a


def _data_range(ref) -> float:
    rng = float(ref.max() - ref.min())
    if rng == 0:
        raise ValueError("reference has zero data range")
    return rng


def _check_pair(pred, ref):
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {ref.shape}")
    if not (np.isfinite(pred).all() and np.isfinite(ref).all()):
        raise ValueError("non-finite input")
    if not ref.any():
        raise ValueError("all-zero reference: undefined data range")


def _ssim_frame(x, y, data_range):
    # sample-covariance form with the half-window border cropped
    n = SSIM_WIN * SSIM_WIN
    cov_norm = n / (n - 1)
    ux = uniform_filter(x, SSIM_WIN)
    uy = uniform_filter(y, SSIM_WIN)
    uxx = uniform_filter(x * x, SSIM_WIN)
    uyy = uniform_filter(y * y, SSIM_WIN)
    uxy = uniform_filter(x * y, SSIM_WIN)
    vx = cov_norm * (uxx - ux * ux)
    vy = cov_norm * (uyy - uy * uy)
    vxy = cov_norm * (uxy - ux * uy)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux**2 + uy**2 + c1) * (vx + vy + c2))
    pad = (SSIM_WIN - 1) // 2
    return float(s[pad:-pad, pad:-pad].mean())


def compute_ssim(pred, ref) -> float:
    pred, ref = _as_volume(pred), _as_volume(ref)
    _check_pair(pred, ref)
    rng = _data_range(ref)
    return float(np.mean([_ssim_frame(p, r, rng) for p, r in zip(pred, ref)]))


def compute_psnr(pred, ref) -> float:
    pred, ref = _as_volume(pred), _as_volume(ref)
    _check_pair(pred, ref)
    rng = _data_range(ref)
    mse = float(np.mean((pred - ref) ** 2))
    if mse == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(rng**2 / mse))


def compute_nmse(pred, ref) -> float:
    pred, ref = _as_volume(pred), _as_volume(ref)
    _check_pair(pred, ref)
    return float(np.sum((pred - ref) ** 2) / np.sum(ref**2))


def evaluate_case(pred_path, ref_path, team, case_id, modality, pattern, af) -> CaseMetrics:
    reason = validate_case(pred_path, ref_path)
    if reason is not None:
        return CaseMetrics(team, case_id, modality, pattern, int(af), valid=False, failure_reason=reason)
    pred = read_cxa(pred_path).data
    ref = read_cxa(ref_path).data
    if np.iscomplexobj(pred):
        pred = np.abs(pred)
    if np.iscomplexobj(ref):
        ref = np.abs(ref)
    return CaseMetrics(
        team, case_id, modality, pattern, int(af),
        ssim=compute_ssim(pred, ref),
        psnr_db=compute_psnr(pred, ref),
        nmse=compute_nmse(pred, ref),
    )


@dataclass
class ModalityAggregate:
    modality: str
    pattern: str
    af: int
    n_success: int
    n_total: int
    w: float
    ssim_mean: Optional[float]
    psnr_mean: Optional[float]
    nmse_mean: Optional[float]
    ssim_adj: float
    psnr_adj: float
    nmse_adj: Optional[float]
    nmse_adj_undefined: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _fsum_mean(values):
    return math.fsum(values) / len(values)


def aggregate_modality(records: Sequence[CaseMetrics]) -> ModalityAggregate:
    """Success-rate weighting within one (modality, pattern, AF) cell.

    w = n/N; SSIM and PSNR are scaled by w, NMSE by (2 - w). Means run over
    successful cases only. With no successes, adjusted SSIM/PSNR are 0 and
    adjusted NMSE is flagged undefined.
    """
    records = list(records)
    if not records:
        raise ValueError("need at least one record")
    cells = {r.cell for r in records}
    if len(cells) != 1:
        raise ValueError(f"records span several cells: {sorted(cells)}")
    modality, pattern, af = records[0].cell
    ok = [r for r in records if r.valid]
    n, total = len(ok), len(records)
    w = n / total
    if n == 0:
        return ModalityAggregate(modality, pattern, af, 0, total, 0.0, None, None, None,
                                 0.0, 0.0, None, nmse_adj_undefined=True)
    ssim_mean = _fsum_mean([r.ssim for r in ok])
    psnr_mean = _fsum_mean([r.psnr_db for r in ok])
    nmse_mean = _fsum_mean([r.nmse for r in ok])
    return ModalityAggregate(
        modality, pattern, af, n, total, w,
        ssim_mean, psnr_mean, nmse_mean,
        ssim_adj=w * ssim_mean,
        psnr_adj=w * psnr_mean,
        nmse_adj=(2.0 - w) * nmse_mean,
    )


def group_cells(records: Iterable[CaseMetrics]) -> dict:
    groups = defaultdict(list)
    for r in records:
        groups[r.cell].append(r)
    return dict(sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])))


def aggregate_all(records: Iterable[CaseMetrics]) -> list[ModalityAggregate]:
    return [aggregate_modality(v) for v in group_cells(records).values()]


@dataclass
class TeamSummary:
    team: str
    n_cells: int
    ssim_adj: float
    psnr_adj: float
    nmse_adj: Optional[float]
    success_rate: float


def aggregate_overall(aggregates: Sequence[ModalityAggregate], team: str = "") -> TeamSummary:
    """Unweighted mean over cells, so every (modality, pattern, AF) counts equally."""
    aggregates = list(aggregates)
    if not aggregates:
        raise ValueError("need at least one aggregate")
    nmse_vals = [a.nmse_adj for a in aggregates]
    nmse = None if any(v is None for v in nmse_vals) else _fsum_mean(nmse_vals)
    return TeamSummary(
        team=team,
        n_cells=len(aggregates),
        ssim_adj=_fsum_mean([a.ssim_adj for a in aggregates]),
        psnr_adj=_fsum_mean([a.psnr_adj for a in aggregates]),
        nmse_adj=nmse,
        success_rate=_fsum_mean([a.w for a in aggregates]),
    )


def feedback_report(records: Sequence[CaseMetrics]) -> str:
    """Per-case metrics or failure diagnostics plus per-cell success rates."""
    records = list(records)
    lines = [f"# metric convention: {METRIC_CONVENTION}"]
    if not records:
        lines.append("no cases evaluated (0 records)")
        return "\n".join(lines) + "\n"
    for r in records:
        head = f"{r.team} {r.case_id} {r.modality} {r.pattern} AF{r.af}:"
        if r.valid:
            lines.append(f"{head} SSIM={r.ssim:.4f} PSNR={r.psnr_db:.2f} dB NMSE={r.nmse:.5f}")
        else:
            lines.append(f"{head} FAILED {r.failure_reason}")
    lines.append("")
    for (modality, pattern, af), group in group_cells(records).items():
        agg = aggregate_modality(group)
        lines.append(f"success rate {modality} {pattern} AF{af}: {agg.w:.2f} ({agg.n_success}/{agg.n_total})")
    return "\n".join(lines) + "\n"
