"""k-t undersampling masks: Cartesian uniform, Cartesian Gaussian, pseudo-radial."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .operators import acs_slice

PATTERNS = ("uniform", "gaussian", "radial")
GOLDEN_ANGLE_DEG = 111.246117975
DEFAULT_ACS = 16

TASK_PRESETS = {
    "task1": dict(patterns=("uniform",), afs=(4, 8, 10)),
    "task2": dict(patterns=PATTERNS, afs=tuple(range(4, 25))),
}


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class MaskSpec:
    pattern: str
    af_nominal: int
    frames: int
    ky: int
    kx: int
    acs_lines: int = DEFAULT_ACS
    seed: int = 0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}")
        if not 1 <= self.af_nominal <= 24:
            raise ValueError(f"af_nominal must lie in 1..24, got {self.af_nominal}")
        if self.frames < 1 or self.ky < 1 or self.kx < 1:
            raise ValueError("mask extents must be positive")
        if self.acs_lines < 0:
            raise ValueError("acs_lines must be >= 0")
        if self.ky < self.acs_lines:
            raise ValueError(f"ky={self.ky} is smaller than acs_lines={self.acs_lines}")


def check_preset(task: str, pattern: str, af: int) -> None:
    """Raise ValueError if (pattern, af) is outside the task preset."""
    preset = TASK_PRESETS[task]
    if pattern not in preset["patterns"]:
        raise ValueError(f"{task} allows patterns {preset['patterns']}, got {pattern!r}")
    if af not in preset["afs"]:
        raise ValueError(f"{task} allows AF {preset['afs'][0]}..{preset['afs'][-1]}" if task == "task2"
                         else f"{task} allows AF {preset['afs']}, got {af}")


@dataclass(frozen=True)
class SamplingMask:
    """Binary k-t mask.

    ``data`` is ``(frames, ky)`` for line patterns (broadcast along kx) and
    ``(frames, ky, kx)`` for radial.
    """

    data: np.ndarray
    pattern: str
    af_nominal: int
    acs_lines: int
    seed: int
    kx: int

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def ky(self) -> int:
        return self.data.shape[1]

    @property
    def af_realized_per_frame(self) -> np.ndarray:
        per = self.data.reshape(self.frames, -1)
        return per.shape[1] / per.sum(axis=1)

    @property
    def af_realized(self) -> float:
        return self.data.size / int(self.data.sum())

    def full(self) -> np.ndarray:
        """Boolean ``(frames, ky, kx)`` view of the mask."""
        if self.data.ndim == 3:
            return self.data.astype(bool)
        return np.broadcast_to(self.data.astype(bool)[:, :, None], (self.frames, self.ky, self.kx))

    def operator_mask(self) -> np.ndarray:
        """Smallest array that broadcasts against ``(frames, ky, kx)``."""
        if self.data.ndim == 3:
            return self.data.astype(bool)
        return self.data.astype(bool)[:, :, None]

    def sidecar(self) -> dict:
        return dict(
            pattern=self.pattern,
            af_nominal=self.af_nominal,
            af_realized=self.af_realized,
            acs_lines=self.acs_lines,
            seed=self.seed,
            frames=self.frames,
            ky=self.ky,
            kx=self.kx,
        )

    def write(self, path) -> None:
        from .tensor_io import write_cxa

        write_cxa(self.data.astype(np.uint8), path)
        with open(_sidecar_path(path), "w") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)

    @classmethod
    def read(cls, path) -> "SamplingMask":
        from .tensor_io import MASK_U8, read_cxa

        arr = read_cxa(path)
        if arr.code != MASK_U8:
            raise ValueError(f"{path} is not a mask file")
        with open(_sidecar_path(path)) as fh:
            meta = json.load(fh)
        return cls(arr.data.astype(bool), meta["pattern"], meta["af_nominal"],
                   meta["acs_lines"], meta["seed"], meta["kx"])


def _sidecar_path(path):
    path = str(path)
    return (path[:-4] if path.endswith(".cxa") else path) + ".json"


def _acs_rows(spec: MaskSpec) -> np.ndarray:
    rows = np.zeros(spec.ky, dtype=bool)
    rows[acs_slice(spec.ky, spec.acs_lines)] = True
    return rows


def make_uniform_kt(spec: MaskSpec) -> SamplingMask:
    """Every af-th ky line plus ACS; the line offset advances by one per frame."""
    acs = _acs_rows(spec)
    k = np.arange(spec.ky)
    data = np.empty((spec.frames, spec.ky), dtype=bool)
    for t in range(spec.frames):
        data[t] = (k % spec.af_nominal == t % spec.af_nominal) | acs
    return SamplingMask(data, "uniform", spec.af_nominal, spec.acs_lines, spec.seed, spec.kx)


def uniform_line_count(ky: int, acs_lines: int, af: int, frame: int = 0) -> int:
    """Closed-form sampled-line count of :func:`make_uniform_kt` for one frame."""
    start = ky // 2 - acs_lines // 2
    off = frame % af
    total = len(range(off, ky, af))
    inside = sum(1 for k in range(start, start + acs_lines) if k % af == off)
    return acs_lines + total - inside


def gaussian_line_weights(ky: int, acs_lines: int) -> np.ndarray:
    """Unnormalised Gaussian density over ky (sigma = ky/6), zero on ACS lines."""
    k = np.arange(ky)
    sigma = ky / 6.0
    w = np.exp(-((k - ky // 2) ** 2) / (2 * sigma**2))
    w[acs_slice(ky, acs_lines)] = 0.0
    return w


def _systematic_pps(rng, inclusion: np.ndarray) -> np.ndarray:
    """Fixed-size draw without replacement; P(select k) == inclusion[k] exactly.

    Systematic sampling over a random permutation (Madow's method).
    Requires every inclusion probability <= 1 and an integral total.
    """
    n = round_half_up(inclusion.sum())
    order = rng.permutation(len(inclusion))
    cum = np.cumsum(inclusion[order])
    cum[-1] = n  # absorb float drift so the last point always lands
    points = rng.random() + np.arange(n)
    picks = np.searchsorted(cum, points, side="right")
    return order[picks]


def make_gaussian_kt(spec: MaskSpec) -> SamplingMask:
    """Variable-density Cartesian lines, redrawn per frame.

    Each frame keeps the ACS block and draws exactly
    ``round(ky/af) - acs_lines`` further lines, line k being included with
    probability proportional to a Gaussian centred on k-space.
    """
    budget = round_half_up(spec.ky / spec.af_nominal)
    if budget < spec.acs_lines:
        raise ValueError(
            f"round(ky/af) = {budget} < acs_lines = {spec.acs_lines}; "
            "use a smaller AF or fewer ACS lines"
        )
    extra = budget - spec.acs_lines
    acs = _acs_rows(spec)
    w = gaussian_line_weights(spec.ky, spec.acs_lines)
    inclusion = _inclusion_probabilities(w, extra)
    rng = np.random.default_rng(spec.seed)
    data = np.zeros((spec.frames, spec.ky), dtype=bool)
    data[:] = acs
    for t in range(spec.frames):
        if extra:
            data[t, _systematic_pps(rng, inclusion)] = True
    return SamplingMask(data, "gaussian", spec.af_nominal, spec.acs_lines, spec.seed, spec.kx)


def _inclusion_probabilities(w: np.ndarray, n: int) -> np.ndarray:
    """Scale weights to sum to ``n``, capping at 1 and redistributing the excess."""
    pi = np.zeros_like(w)
    if n == 0:
        return pi
    if np.count_nonzero(w) < n:
        raise ValueError("not enough candidate lines for the requested budget")
    free = w > 0
    remaining = float(n)
    while True:
        pi[free] = w[free] * remaining / w[free].sum()
        over = free & (pi > 1.0)
        if not over.any():
            return pi
        pi[over] = 1.0
        free &= ~over
        remaining = n - pi[~free & (w > 0)].sum()


def spoke_count(ky: int, af: int) -> int:
    return round_half_up(ky * math.pi / 2 / af)


def spoke_angles(frame: int, n_spokes: int) -> np.ndarray:
    """Spoke angles (degrees) for one frame: golden-angle increments from frame * golden angle."""
    return (frame + np.arange(n_spokes)) * GOLDEN_ANGLE_DEG


def rasterize_spoke(ky: int, kx: int, angle_deg: float) -> tuple:
    """Nearest-grid indices of a full spoke through the k-space centre.

    The spoke runs from -R to +R in half-grid-unit steps, R = max(ky, kx)/2,
    and is clipped to the grid.
    """
    radius = max(ky, kx) / 2
    r = np.arange(-2 * int(math.ceil(radius)), 2 * int(math.ceil(radius)) + 1) * 0.5
    r = r[np.abs(r) <= radius]
    th = math.radians(angle_deg)
    rows = np.floor(ky // 2 + r * math.sin(th) + 0.5).astype(int)
    cols = np.floor(kx // 2 + r * math.cos(th) + 0.5).astype(int)
    ok = (rows >= 0) & (rows < ky) & (cols >= 0) & (cols < kx)
    return rows[ok], cols[ok]


def make_radial_kt(spec: MaskSpec) -> SamplingMask:
    """Golden-angle pseudo-radial spokes on the Cartesian grid, unioned with the ACS block."""
    n_spokes = spoke_count(spec.ky, spec.af_nominal)
    if n_spokes < 1:
        raise ValueError("AF too high for a single spoke")
    acs = _acs_rows(spec)
    data = np.zeros((spec.frames, spec.ky, spec.kx), dtype=bool)
    for t in range(spec.frames):
        for angle in spoke_angles(t, n_spokes):
            rows, cols = rasterize_spoke(spec.ky, spec.kx, angle)
            data[t, rows, cols] = True
        data[t, acs, :] = True
    return SamplingMask(data, "radial", spec.af_nominal, spec.acs_lines, spec.seed, spec.kx)


_MAKERS = {"uniform": make_uniform_kt, "gaussian": make_gaussian_kt, "radial": make_radial_kt}


def make_mask(spec: MaskSpec) -> SamplingMask:
    return _MAKERS[spec.pattern](spec)


def apply_mask(y, mask) -> np.ndarray:
    """Zero unsampled entries of ``y`` (``(..., frames, ky, kx)``)."""
    y = np.asarray(y)
    m = mask.operator_mask() if isinstance(mask, SamplingMask) else np.asarray(mask, dtype=bool)
    if m.ndim == 2:
        m = m[:, :, None]
    frames, ky, kx = y.shape[-3:]
    if m.shape[0] != frames or m.shape[1] != ky or m.shape[2] not in (1, kx):
        raise ValueError(f"mask {m.shape} incompatible with k-space {y.shape}")
    return np.where(m, y, 0).astype(y.dtype)
