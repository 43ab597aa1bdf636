"""Reference reconstructors: zero-filled RSS, CG-SENSE, unrolled gradient
descent with a fixed TV refinement, and ADMM with a TV prior.

All iterative solvers treat frames as independent problems; the batched
conjugate-gradient routine keeps separate step sizes per frame.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .operators import EncodingOperator, ifft2c

METHODS = ("zf", "cgsense", "unrolled_gd", "admm_tv")


class ReconError(RuntimeError):
    """Solver failure: NaN encountered or divergence detected."""


@dataclass(frozen=True)
class ReconConfig:
    method: str = "cgsense"
    max_iters: int = 50
    tolerance: float = 1e-6
    tikhonov_lambda: float = 0.0
    step_size: float = 1.0
    cascades: int = 8
    rho: float = 0.1
    tv_weight: float = 1e-3
    tv_inner_iters: int = 5
    acs_lines: int = 16

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")
        if self.rho <= 0:
            raise ValueError("rho must be > 0")
        if self.cascades < 1 or self.tv_inner_iters < 1:
            raise ValueError("cascades and tv_inner_iters must be >= 1")
        if self.tikhonov_lambda < 0 or self.tv_weight < 0 or self.step_size <= 0:
            raise ValueError("tikhonov_lambda/tv_weight must be >= 0 and step_size > 0")

    @classmethod
    def for_method(cls, method: str, **overrides) -> "ReconConfig":
        """Declared defaults per method (ADMM runs 10 outer iterations)."""
        base = dict(method=method)
        if method == "admm_tv":
            base["max_iters"] = 10
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ReconResult:
    image: np.ndarray
    iterations_used: int
    final_residual: float
    wall_time_volume: float
    wall_time_frame: float
    converged: bool = True
    residuals: list = field(default_factory=list)
    complex_image: np.ndarray | None = None
    normalization: float = 1.0

    def summary(self) -> dict:
        return dict(
            iterations_used=self.iterations_used,
            final_residual=self.final_residual,
            converged=self.converged,
            residuals=[float(r) for r in self.residuals],
            wall_time_volume=self.wall_time_volume,
            wall_time_frame=self.wall_time_frame,
            normalization=self.normalization,
        )


def _frame_dot(a, b):
    # float64 accumulation; the arrays themselves stay complex64
    a = a.reshape(a.shape[0], -1).astype(np.complex128)
    b = b.reshape(b.shape[0], -1).astype(np.complex128)
    return np.einsum("ti,ti->t", a.conj(), b).real


def _norm(a) -> float:
    return float(np.sqrt(np.sum(np.abs(a.astype(np.complex128)) ** 2)))


def _finish(x, t0, iters, residual, converged=True, residuals=(), normalization=1.0):
    if not np.isfinite(x).all():
        raise ReconError("non-finite values in reconstruction")
    wall = time.perf_counter() - t0
    frames = x.shape[0]
    return ReconResult(
        image=np.abs(x).astype(np.float32),
        iterations_used=int(iters),
        final_residual=float(residual),
        wall_time_volume=wall,
        wall_time_frame=wall / frames,
        converged=bool(converged),
        residuals=list(residuals),
        complex_image=x.astype(np.complex64),
        normalization=float(normalization),
    )


def conjugate_gradient(normal: Callable, b, x0=None, max_iters=50, tol=1e-6):
    """Batched CG on ``normal(x) = b`` with an independent system per frame.

    Returns ``(x, iterations, relative_residuals, history)`` where the
    residual is ``||b - A x|| / ||b||`` per frame and ``history`` holds the
    worst frame's value after every iteration.
    """
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - normal(x) if x0 is not None and np.any(x0) else b.copy()
    bnorm = np.sqrt(_frame_dot(b, b))
    bnorm_safe = np.where(bnorm > 0, bnorm, 1.0)
    p = r.copy()
    rs = _frame_dot(r, r)
    active = np.sqrt(rs) > tol * bnorm
    history = []
    it = 0
    while it < max_iters and active.any():
        ap = normal(p)
        pap = _frame_dot(p, ap)
        alpha = np.where(active & (pap > 0), rs / np.where(pap > 0, pap, 1.0), 0.0)
        step = alpha.astype(np.float32)[:, None, None]
        x += step * p
        r -= step * ap
        rs_new = _frame_dot(r, r)
        if not np.isfinite(rs_new).all():
            raise ReconError("NaN during conjugate-gradient iteration")
        beta = np.where(active, rs_new / np.where(rs > 0, rs, 1.0), 0.0)
        p = r + beta.astype(np.float32)[:, None, None] * p
        rs = np.where(active, rs_new, rs)
        it += 1
        active &= np.sqrt(rs) > tol * bnorm
        history.append(float((np.sqrt(rs) / bnorm_safe).max()))
    return x, it, np.sqrt(rs) / bnorm_safe, history


def recon_zero_fill_rss(y_masked, mask=None) -> ReconResult:
    """Root-sum-of-squares of the per-coil zero-filled inverse transforms."""
    t0 = time.perf_counter()
    y = np.asarray(y_masked)
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        y = y * (m[None] if m.ndim == 3 else m[None, :, :, None])
    rss = np.sqrt((np.abs(ifft2c(y.astype(np.complex64))) ** 2).sum(axis=0))
    return _finish(rss.astype(np.complex64), t0, 0, 0.0)


def recon_cg_sense(y_masked, mask, csm, cfg: ReconConfig | None = None) -> ReconResult:
    """Solve (E*E + lambda I) x = E* y from x0 = 0 by conjugate gradients."""
    cfg = cfg or ReconConfig.for_method("cgsense")
    t0 = time.perf_counter()
    op = EncodingOperator(np.asarray(csm), mask)
    lam = cfg.tikhonov_lambda
    normal = op.normal if lam == 0 else (lambda v: op.normal(v) + lam * v)
    b = op.adjoint(np.asarray(y_masked, dtype=np.complex64))
    x, it, res, hist = conjugate_gradient(normal, b, max_iters=cfg.max_iters, tol=cfg.tolerance)
    final = float(res.max())
    return _finish(x, t0, it, final, final <= cfg.tolerance, hist)


# --- finite differences with Neumann boundary -------------------------------

def grad2d(x):
    g = np.zeros((2,) + x.shape, dtype=x.dtype)
    g[0, ..., :-1, :] = x[..., 1:, :] - x[..., :-1, :]
    g[1, ..., :, :-1] = x[..., :, 1:] - x[..., :, :-1]
    return g


def div2d(g):
    """Negative adjoint of :func:`grad2d`."""
    gy, gx = g[0], g[1]
    d = np.zeros_like(gy)
    d[..., 0, :] = gy[..., 0, :]
    d[..., 1:-1, :] = gy[..., 1:-1, :] - gy[..., :-2, :]
    d[..., -1, :] = -gy[..., -2, :]
    d[..., :, 0] += gx[..., :, 0]
    d[..., :, 1:-1] += gx[..., :, 1:-1] - gx[..., :, :-2]
    d[..., :, -1] += -gx[..., :, -2]
    return d


def _grad_norm(g):
    return np.sqrt((np.abs(g) ** 2).sum(axis=0))


def tv_shrink_step(x, threshold: float):
    """Fixed refinement: isotropic soft-thresholding of the finite differences.

    Takes one 1/8-step along ``grad^T (g - shrink(g))``, i.e. a gradient step
    on the Huber-smoothed TV, so constant images and ``threshold=0`` are
    left untouched.
    """
    if threshold <= 0:
        return x
    g = grad2d(x)
    mag = _grad_norm(g)
    keep = np.maximum(0.0, 1.0 - threshold / np.maximum(mag, 1e-30))
    excess = g * (1.0 - keep)[None]
    return x + div2d(excess) / 8.0


def tv_prox(f, weight: float, iters: int, p=None):
    """argmin_z 0.5||z - f||^2 + weight * TV(z) by Chambolle's dual projection.

    Complex images are treated as two channels under a joint gradient norm.
    Returns ``(z, p)`` so callers can warm-start the dual variable.
    """
    if weight <= 0:
        return f.copy(), p
    tau = 0.125
    if p is None:
        p = np.zeros((2,) + f.shape, dtype=f.dtype)
    for _ in range(iters):
        g = grad2d(div2d(p) - f / weight)
        p = (p + tau * g) / (1.0 + tau * _grad_norm(g))[None]
    return f - weight * div2d(p), p


def recon_unrolled_gd(y_masked, mask, csm, cfg: ReconConfig | None = None) -> ReconResult:
    """Cascades of x <- x - eta E*(Ex - y) followed by a TV shrinkage step.

    E is spectrally normalised by 20 power iterations first, so eta = 1 is a
    safe step. Residuals are reported in the unnormalised data units.
    """
    cfg = cfg or ReconConfig.for_method("unrolled_gd")
    t0 = time.perf_counter()
    raw = EncodingOperator(np.asarray(csm), mask)
    op = raw.normalized(iters=20)
    s = op.scale
    y = np.asarray(y_masked, dtype=np.complex64) * s
    eta = cfg.step_size
    x = op.adjoint(y)
    r0 = _norm(op.forward(x) - y)
    history = []
    for _ in range(cfg.cascades):
        x = x - eta * op.adjoint(op.forward(x) - y)
        x = tv_shrink_step(x, cfg.tv_weight * eta)
        res = _norm(op.forward(x) - y)
        if not np.isfinite(res):
            raise ReconError("NaN during unrolled gradient descent")
        if r0 > 0 and res > 10 * r0:
            raise ReconError(f"unrolled gradient descent diverged (residual {res:.3g} > 10x {r0:.3g})")
        history.append(res / s)
    final = history[-1] if history else 0.0
    ynorm = _norm(y) / s
    rel = final / ynorm if ynorm > 0 else 0.0
    return _finish(x, t0, cfg.cascades, rel, True, history, normalization=s)


def recon_admm_tv(y_masked, mask, csm, cfg: ReconConfig | None = None) -> ReconResult:
    """ADMM for 0.5||Ex - y||^2 + tv_weight * TV(x) with splitting x = z.

    x-update: ``tv_inner_iters`` warm-started CG steps on
    (E*E + rho I) x = E*y + rho (z - u); z-update: TV prox of x + u;
    u-update: u + x - z. Stops early once ||x - z|| <= tolerance ||x||.
    """
    cfg = cfg or ReconConfig.for_method("admm_tv")
    t0 = time.perf_counter()
    op = EncodingOperator(np.asarray(csm), mask)
    rho = cfg.rho
    ety = op.adjoint(np.asarray(y_masked, dtype=np.complex64))
    normal = lambda v: op.normal(v) + rho * v
    x = np.zeros_like(ety)
    z = np.zeros_like(ety)
    u = np.zeros_like(ety)
    p = None
    history = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        x, _, _, _ = conjugate_gradient(normal, ety + rho * (z - u), x0=x,
                                        max_iters=cfg.tv_inner_iters, tol=1e-12)
        z, p = tv_prox(x + u, cfg.tv_weight / rho, cfg.tv_inner_iters, p)
        u = u + x - z
        xn = _norm(x)
        primal = _norm(x - z) / xn if xn > 0 else 0.0
        if not np.isfinite(primal):
            raise ReconError("NaN during ADMM iteration")
        history.append(primal)
        if primal <= cfg.tolerance and cfg.tv_weight > 0:
            converged = True
            break
    if cfg.tv_weight == 0:
        converged = True
    return _finish(x, t0, it, history[-1] if history else 0.0, converged, history)


def reconstruct(y_masked, mask, csm, cfg: ReconConfig) -> ReconResult:
    """Dispatch on ``cfg.method``."""
    if cfg.method == "zf":
        return recon_zero_fill_rss(y_masked, mask)
    fn = {"cgsense": recon_cg_sense, "unrolled_gd": recon_unrolled_gd,
          "admm_tv": recon_admm_tv}[cfg.method]
    return fn(y_masked, mask, csm, cfg)


def data_consistency_error(result: ReconResult, y_masked, mask, csm) -> float:
    """||M F S x - y|| / ||y|| for the complex reconstruction."""
    op = EncodingOperator(np.asarray(csm), mask)
    y = np.asarray(y_masked)
    return _norm(op.forward(result.complex_image) - y) / _norm(y)


def with_overrides(cfg: ReconConfig, **kw) -> ReconConfig:
    return replace(cfg, **kw)
