"""Multi-coil Cartesian encoding operator and ACS coil-sensitivity estimation.

Array conventions used throughout the package:

* image     ``(frames, ky, kx)`` complex
* k-space   ``(coils, frames, ky, kx)`` complex
* coil maps ``(coils, ky, kx)`` complex
* mask      anything broadcastable to ``(frames, ky, kx)``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

CSM_THRESHOLD = 0.05

_AXES = (-2, -1)


def _modulation(ky: int, kx: int, dtype=np.float32):
    """Checkerboard C with the sign s folded in, for even extents.

    For even ky, kx: fft2c(x) == s C fft2(C x) and likewise for the inverse,
    with C[i, j] = (-1)^(i+j) and s = (-1)^((ky+kx)/2). Returns None for odd
    extents, where the explicit shifts are used instead.
    """
    if ky % 2 or kx % 2:
        return None
    c = 1 - 2 * (np.add.outer(np.arange(ky), np.arange(kx)) % 2)
    return c.astype(dtype), (-1) ** ((ky + kx) // 2)


def fft2c(x):
    """Centered orthonormal 2-D DFT over the last two axes."""
    mod = _modulation(*np.shape(x)[-2:])
    if mod is None:
        x = sfft.ifftshift(x, axes=_AXES)
        x = sfft.fft2(x, axes=_AXES, norm="ortho")
        return sfft.fftshift(x, axes=_AXES)
    c, s = mod
    y = sfft.fft2(x * c, axes=_AXES, norm="ortho", overwrite_x=True)
    y *= c if s == 1 else -c
    return y


def ifft2c(y):
    """Inverse of :func:`fft2c`."""
    mod = _modulation(*np.shape(y)[-2:])
    if mod is None:
        y = sfft.ifftshift(y, axes=_AXES)
        y = sfft.ifft2(y, axes=_AXES, norm="ortho")
        return sfft.fftshift(y, axes=_AXES)
    c, s = mod
    x = sfft.ifft2(y * c, axes=_AXES, norm="ortho", overwrite_x=True)
    x *= c if s == 1 else -c
    return x


def _check_extent(name, got, want):
    if tuple(got) != tuple(want):
        raise ValueError(f"{name} extent mismatch: {tuple(got)} != {tuple(want)}")


@dataclass(frozen=True)
class EncodingOperator:
    """E = M F S for a dynamic series sharing one set of coil maps.

    ``scale`` multiplies the operator; it is 1 unless the operator has been
    spectrally normalised with :meth:`normalized`. Applications run in
    single precision (complex64).
    """

    csm: np.ndarray
    mask: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        csm = np.asarray(self.csm)
        if csm.ndim != 3:
            raise ValueError("coil maps must be (coils, ky, kx)")
        mask = np.asarray(self.mask)
        if mask.ndim == 2:
            mask = mask[:, :, None]
        if mask.ndim != 3:
            raise ValueError("mask must be (frames, ky) or (frames, ky, kx)")
        ky, kx = csm.shape[1:]
        if mask.shape[1] != ky or mask.shape[2] not in (1, kx):
            raise ValueError(f"mask {mask.shape} incompatible with coil maps {csm.shape}")
        mask = mask.astype(bool)
        object.__setattr__(self, "csm", csm.astype(np.complex64))
        object.__setattr__(self, "mask", mask)

        # fold the centring checkerboard into S and M so applications are bare FFTs
        weight = np.broadcast_to(mask, (mask.shape[0], ky, kx)).astype(np.float32) * np.float32(self.scale)
        mod = _modulation(ky, kx)
        if mod is None:
            maps = self.csm
        else:
            c, sign = mod
            maps = self.csm * c
            weight = weight * (c if sign == 1 else -c)
        object.__setattr__(self, "_maps", maps)
        object.__setattr__(self, "_maps_conj", maps.conj())
        object.__setattr__(self, "_weight", weight)
        object.__setattr__(self, "_centred", mod is not None)

    @property
    def coils(self) -> int:
        return self.csm.shape[0]

    @property
    def frames(self) -> int:
        return self.mask.shape[0]

    @property
    def image_shape(self) -> tuple:
        return (self.frames,) + self.csm.shape[1:]

    @property
    def kspace_shape(self) -> tuple:
        return (self.coils,) + self.image_shape

    def forward(self, x):
        return apply_E(self, x)

    def adjoint(self, y):
        return apply_E_adjoint(self, y)

    def normal(self, x):
        _check_extent("image", np.shape(x), self.image_shape)
        return self._adjoint(self._forward(np.asarray(x, dtype=np.complex64)))

    def _forward(self, x):
        coil_images = self._maps[:, None] * x[None]
        if self._centred:
            y = sfft.fft2(coil_images, axes=_AXES, norm="ortho", overwrite_x=True)
        else:
            y = fft2c(coil_images)
        y *= self._weight[None]
        return y

    def _adjoint(self, y):
        y = y * self._weight[None]
        if self._centred:
            coil_images = sfft.ifft2(y, axes=_AXES, norm="ortho", overwrite_x=True)
        else:
            coil_images = ifft2c(y)
        coil_images *= self._maps_conj[:, None]
        return coil_images.sum(axis=0)

    def normalized(self, iters: int = 20, seed: int = 0) -> "EncodingOperator":
        """Copy scaled so that the largest eigenvalue of E*E is ~1."""
        lam = power_iteration(self, iters=iters, seed=seed)
        if lam <= 0:
            return self
        return EncodingOperator(self.csm, self.mask, self.scale / np.sqrt(lam))


def apply_E(op: EncodingOperator, x):
    """Per frame t and coil c: M_t * F(S_c * x_t)."""
    x = np.asarray(x)
    _check_extent("image", x.shape, op.image_shape)
    return op._forward(x.astype(np.complex64))


def apply_E_adjoint(op: EncodingOperator, y):
    """Per frame t: sum_c conj(S_c) * F^-1(M_t * y_c,t)."""
    y = np.asarray(y)
    _check_extent("k-space", y.shape, op.kspace_shape)
    return op._adjoint(y.astype(np.complex64))


def power_iteration(op: EncodingOperator, iters: int = 20, seed: int = 0) -> float:
    """Estimate the largest eigenvalue of E*E."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.image_shape) + 1j * rng.standard_normal(op.image_shape)
    x = (x / np.linalg.norm(x)).astype(np.complex64)
    lam = 0.0
    for _ in range(iters):
        z = op.normal(x)
        lam = float(np.vdot(x.astype(np.complex128), z).real)
        nz = np.linalg.norm(z.astype(np.complex128))
        if nz == 0:
            return 0.0
        x = z / nz
    return lam


@dataclass(frozen=True)
class CsmEstimate:
    maps: np.ndarray
    acs_lines: int
    support: np.ndarray
    threshold: float = CSM_THRESHOLD


def acs_slice(ky: int, acs_lines: int) -> slice:
    start = ky // 2 - acs_lines // 2
    return slice(start, start + acs_lines)


def estimate_csm(y, acs_lines: int, threshold: float = CSM_THRESHOLD) -> CsmEstimate:
    """Low-resolution coil maps from the fully sampled central ky lines.

    The ACS block is zero-padded, transformed per coil, averaged over frames
    and divided by its root-sum-of-squares where that exceeds
    ``threshold * max(RSS)``; maps are zero elsewhere.
    """
    y = np.asarray(y)
    if y.ndim != 4:
        raise ValueError("k-space must be (coils, frames, ky, kx)")
    if acs_lines < 8:
        raise ValueError("need at least 8 ACS lines")
    coils, frames, ky, kx = y.shape
    if acs_lines > ky:
        raise ValueError("more ACS lines than ky lines")
    rows = acs_slice(ky, acs_lines)
    block = y[:, :, rows, :]
    if not block.any():
        zeros = np.zeros((coils, ky, kx), dtype=np.complex64)
        return CsmEstimate(zeros, acs_lines, np.zeros((ky, kx), bool), threshold)
    line_energy = (np.abs(block) ** 2).sum(axis=(0, 3))
    if (line_energy == 0).any():
        t, k = np.argwhere(line_energy == 0)[0]
        raise ValueError(f"ACS region not fully sampled (frame {t}, ACS line {k} is empty)")

    padded = np.zeros_like(y)
    padded[:, :, rows, :] = block
    low = ifft2c(padded).mean(axis=1)
    rss = np.sqrt((np.abs(low) ** 2).sum(axis=0))
    support = rss > threshold * rss.max()
    maps = np.zeros_like(low)
    maps[:, support] = low[:, support] / rss[support]
    return CsmEstimate(maps.astype(np.complex64), acs_lines, support, threshold)
