"""Synthetic multi-coil dynamic cardiac-like phantom.

Nested ellipses (body wall, lungs, left-ventricle myocardium and blood
pool, right-ventricle blood, papillary muscles) with sinusoidal
contraction over frames. Each modality tag only re-weights tissue
intensities; geometry depends on the seed alone.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .operators import fft2c

GENERATOR = "numpy.random.Generator(PCG64)"

MODALITIES = (
    "cine_sax", "cine_lax", "tagging", "t1_map", "t2_map",
    "flow2d", "blackblood", "aorta_sag", "aorta_tra",
)

TISSUES = ("wall", "lung", "myocardium", "blood", "rv_blood", "papillary")

# intensity per tissue class; tagging additionally multiplies a stripe grid
CONTRAST = {
    "cine_sax":   dict(wall=0.45, lung=0.20, myocardium=0.35, blood=1.00, rv_blood=0.90, papillary=0.35),
    "cine_lax":   dict(wall=0.50, lung=0.22, myocardium=0.38, blood=0.95, rv_blood=0.85, papillary=0.38),
    "tagging":    dict(wall=0.55, lung=0.25, myocardium=0.60, blood=0.90, rv_blood=0.85, papillary=0.60),
    "t1_map":     dict(wall=0.60, lung=0.30, myocardium=0.80, blood=1.00, rv_blood=0.95, papillary=0.80),
    "t2_map":     dict(wall=0.40, lung=0.25, myocardium=0.50, blood=1.00, rv_blood=0.95, papillary=0.50),
    "flow2d":     dict(wall=0.35, lung=0.20, myocardium=0.40, blood=0.85, rv_blood=0.80, papillary=0.40),
    "blackblood": dict(wall=0.80, lung=0.30, myocardium=1.00, blood=0.22, rv_blood=0.20, papillary=1.00),
    "aorta_sag":  dict(wall=0.45, lung=0.20, myocardium=0.45, blood=1.00, rv_blood=0.70, papillary=0.45),
    "aorta_tra":  dict(wall=0.50, lung=0.22, myocardium=0.40, blood=1.00, rv_blood=0.75, papillary=0.40),
}


@dataclass(frozen=True)
class PhantomSpec:
    matrix: tuple = (192, 156)
    frames: int = 12
    coils: int = 8
    modality_tag: str = "cine_sax"
    seed: int = 0
    contraction_amplitude: float = 0.2

    def __post_init__(self):
        ky, kx = self.matrix
        if ky % 2 or kx % 2 or ky < 32 or kx < 32:
            raise ValueError(f"matrix extents must be even and >= 32, got {self.matrix}")
        if self.frames < 1 or self.coils < 1:
            raise ValueError("frames and coils must be >= 1")
        if self.modality_tag not in CONTRAST:
            raise ValueError(f"unknown modality tag {self.modality_tag!r}")
        if not 0.0 <= self.contraction_amplitude <= 0.3:
            raise ValueError("contraction_amplitude must lie in [0, 0.3]")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["matrix"] = list(self.matrix)
        return d


def _grid(ky, kx):
    # normalised coordinates in [-1, 1), y along ky (rows)
    y = (np.arange(ky) - ky / 2) / (ky / 2)
    x = (np.arange(kx) - kx / 2) / (kx / 2)
    return np.meshgrid(y, x, indexing="ij")


def _ellipse(yy, xx, cy, cx, ry, rx, angle=0.0):
    c, s = np.cos(angle), np.sin(angle)
    dy, dx = yy - cy, xx - cx
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _geometry(rng):
    """Seed-dependent shape parameters (drawn once per case)."""
    jitter = lambda scale: rng.uniform(-scale, scale)
    return dict(
        body=(jitter(0.02), jitter(0.02), 0.86 + jitter(0.03), 0.90 + jitter(0.03), jitter(0.05)),
        lung_l=(jitter(0.03) - 0.05, 0.42 + jitter(0.03), 0.50 + jitter(0.04), 0.30 + jitter(0.03)),
        lung_r=(jitter(0.03) - 0.05, -0.45 + jitter(0.03), 0.52 + jitter(0.04), 0.30 + jitter(0.03)),
        heart=(0.08 + jitter(0.03), 0.02 + jitter(0.03)),
        epi=0.30 + jitter(0.02),
        endo=0.20 + jitter(0.015),
        lv_angle=jitter(0.3),
        rv=(0.06 + jitter(0.02), -0.24 + jitter(0.02), 0.24 + jitter(0.02), 0.11 + jitter(0.01)),
        pap_angle=rng.uniform(0, 2 * np.pi),
        phase=rng.uniform(0, 2 * np.pi),
        tag_period=rng.uniform(0.10, 0.14),
        tag_angle=jitter(0.4),
    )


def _labels(geo, yy, xx, t, frames, amplitude):
    """Integer tissue label map for frame ``t`` (0 = air)."""
    lab = np.zeros(yy.shape, dtype=np.int8)
    cy, cx, ry, rx, ang = geo["body"]
    lab[_ellipse(yy, xx, cy, cx, ry, rx, ang)] = 1
    for key in ("lung_l", "lung_r"):
        ly, lx, lry, lrx = geo[key]
        lab[_ellipse(yy, xx, ly, lx, lry, lrx)] = 2

    squeeze = amplitude * 0.5 * (1.0 - np.cos(2 * np.pi * t / frames)) if frames > 1 else 0.0
    hy, hx = geo["heart"]
    epi = geo["epi"] * (1.0 - 0.5 * squeeze)
    endo = geo["endo"] * (1.0 - squeeze)
    ang = geo["lv_angle"]
    rvy, rvx, rvry, rvrx = geo["rv"]
    lab[_ellipse(yy, xx, hy + rvy, hx + rvx, rvry * (1 - 0.5 * squeeze), rvrx, ang)] = 5
    lab[_ellipse(yy, xx, hy, hx, epi, epi * 0.92, ang)] = 3
    lab[_ellipse(yy, xx, hy, hx, endo, endo * 0.92, ang)] = 4
    for k in range(2):
        a = geo["pap_angle"] + k * 2.2
        py = hy + 0.6 * endo * np.sin(a)
        px = hx + 0.6 * endo * np.cos(a)
        lab[_ellipse(yy, xx, py, px, 0.045, 0.045)] = 6
    return lab


def _tag_grid(geo, yy, xx):
    c, s = np.cos(geo["tag_angle"]), np.sin(geo["tag_angle"])
    u = c * xx + s * yy
    v = -s * xx + c * yy
    k = 2 * np.pi / geo["tag_period"]
    # stays >= 0.4 so tagging never changes the support
    return 1.0 - 0.3 * (np.cos(k * u) ** 2 + np.cos(k * v) ** 2)


def coil_profiles(matrix, coils: int, rng) -> np.ndarray:
    """Smooth complex Gaussian receive fields on a ring, sum-of-squares normalised to 1."""
    ky, kx = matrix
    yy, xx = _grid(ky, kx)
    offset = rng.uniform(0, 2 * np.pi)
    raw = np.empty((coils, ky, kx), dtype=np.complex128)
    for c in range(coils):
        a = offset + 2 * np.pi * c / coils
        py, px = 1.25 * np.sin(a), 1.25 * np.cos(a)
        width = 0.85 + rng.uniform(-0.05, 0.05)
        mag = np.exp(-((yy - py) ** 2 + (xx - px) ** 2) / (2 * width**2))
        phase = rng.uniform(-np.pi, np.pi) + 0.4 * np.pi * (xx * np.cos(a) + yy * np.sin(a))
        raw[c] = mag * np.exp(1j * phase)
    rss = np.sqrt((np.abs(raw) ** 2).sum(axis=0))
    return (raw / rss).astype(np.complex64)


def generate_phantom(spec: PhantomSpec):
    """Return ``(image, csm)``: float32 ``(frames, ky, kx)`` and complex64 ``(coils, ky, kx)``."""
    ky, kx = spec.matrix
    rng = np.random.default_rng(spec.seed)
    geo = _geometry(rng)
    csm = coil_profiles(spec.matrix, spec.coils, rng)

    yy, xx = _grid(ky, kx)
    table = CONTRAST[spec.modality_tag]
    values = np.array([0.0] + [table[name] for name in TISSUES])
    image = np.empty((spec.frames, ky, kx), dtype=np.float32)
    for t in range(spec.frames):
        image[t] = values[_labels(geo, yy, xx, t, spec.frames, spec.contraction_amplitude)]
    if spec.modality_tag == "tagging":
        image *= _tag_grid(geo, yy, xx).astype(np.float32)
    return image, csm


def support_mask(spec: PhantomSpec) -> np.ndarray:
    """Body support of frame 0; identical for every modality at a fixed seed."""
    image, _ = generate_phantom(spec)
    return image[0] > 0


def phantom_to_kspace(image, csm) -> np.ndarray:
    """Fully sampled multi-coil k-space ``(coils, frames, ky, kx)`` as complex64."""
    image = np.asarray(image)
    csm = np.asarray(csm)
    if image.ndim != 3 or csm.ndim != 3 or image.shape[1:] != csm.shape[1:]:
        raise ValueError(f"extent mismatch: image {image.shape}, coil maps {csm.shape}")
    coil_images = csm[:, None].astype(np.complex128) * image[None]
    return fft2c(coil_images).astype(np.complex64)
