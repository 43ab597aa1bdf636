"""Binary array container (CXA) and JSON-lines metric records.

Layout of a ``.cxa`` file, all little-endian::

    b"CXA1" | dtype code (u8) | ndim (u8) | ndim x u64 extents | payload

Dtype codes: 1 = complex64 (interleaved re, im), 2 = float32, 3 = uint8 mask.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

MAGIC = b"CXA1"
COMPLEX64 = 1
FLOAT32 = 2
MASK_U8 = 3

_DTYPES = {
    COMPLEX64: np.dtype("<c8"),
    FLOAT32: np.dtype("<f4"),
    MASK_U8: np.dtype("u1"),
}
KIND_NAMES = {COMPLEX64: "complex64", FLOAT32: "float32", MASK_U8: "mask"}

FAILURE_REASONS = ("missing_file", "dimension_mismatch", "non_finite")


class CxaError(ValueError):
    """Malformed CXA file or array that violates the container invariants."""


@dataclass(frozen=True)
class CxaArray:
    """Array read back from disk, with the header dtype and a finiteness flag."""

    data: np.ndarray
    code: int
    finite: bool

    @property
    def dims(self) -> tuple:
        return tuple(self.data.shape)

    @property
    def kind(self) -> str:
        return KIND_NAMES[self.code]


def _dtype_code(array: np.ndarray) -> int:
    if np.iscomplexobj(array):
        return COMPLEX64
    if array.dtype == np.bool_ or array.dtype == np.uint8:
        return MASK_U8
    if np.issubdtype(array.dtype, np.floating):
        return FLOAT32
    raise CxaError(f"unsupported dtype {array.dtype}")


def write_cxa(array, path, code: Optional[int] = None) -> None:
    """Write ``array`` to ``path`` in CXA1 format.

    Complex input is stored as complex64, real floats as float32, and
    bool/uint8 input as a 0/1 mask. ``code`` forces the stored type
    (e.g. ``MASK_U8`` for an integer array holding 0/1 values).
    """
    array = np.asarray(array)
    if array.ndim == 0:
        raise CxaError("zero-dimensional arrays are not storable")
    if array.ndim > 255:
        raise CxaError("too many dimensions")
    if code is None:
        code = _dtype_code(array)
    if code not in _DTYPES:
        raise CxaError(f"unknown dtype code {code}")

    if code == MASK_U8:
        if array.dtype != np.bool_ and not np.isin(array, (0, 1)).all():
            raise CxaError("mask values must be exactly 0 or 1")
        payload = np.ascontiguousarray(array, dtype=np.uint8)
    else:
        payload = np.ascontiguousarray(array, dtype=_DTYPES[code])
        if not np.isfinite(payload).all():
            raise CxaError("refusing to write non-finite samples")

    header = MAGIC + struct.pack("<BB", code, array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes(order="C"))


def read_cxa(path) -> CxaArray:
    """Read a CXA1 file. Non-finite samples are flagged, not rejected."""
    raw = Path(path).read_bytes()
    if len(raw) < 6 or raw[:4] != MAGIC:
        raise CxaError(f"{path}: bad magic {raw[:4]!r}")
    code, ndim = raw[4], raw[5]
    if code not in _DTYPES:
        raise CxaError(f"{path}: unknown dtype code {code}")
    head = 6 + 8 * ndim
    if len(raw) < head:
        raise CxaError(f"{path}: truncated header")
    dims = struct.unpack(f"<{ndim}Q", raw[6:head])
    dtype = _DTYPES[code]
    expected = int(np.prod(dims, dtype=np.uint64)) * dtype.itemsize
    if len(raw) - head < expected:
        raise CxaError(f"{path}: truncated payload ({len(raw) - head} < {expected} bytes)")
    if len(raw) - head > expected:
        raise CxaError(f"{path}: trailing bytes after payload")
    data = np.frombuffer(raw, dtype=dtype, offset=head, count=expected // dtype.itemsize)
    data = data.reshape(dims).copy()
    if code == MASK_U8:
        if not np.isin(data, (0, 1)).all():
            raise CxaError(f"{path}: mask values must be exactly 0 or 1")
        finite = True
    else:
        finite = bool(np.isfinite(data).all())
    return CxaArray(data=data, code=code, finite=finite)


@dataclass
class CaseMetrics:
    team: str
    case_id: str
    modality: str
    pattern: str
    af: int
    ssim: Optional[float] = None
    psnr_db: Optional[float] = None
    nmse: Optional[float] = None
    valid: bool = True
    failure_reason: Optional[str] = None

    def __post_init__(self):
        if self.valid:
            if self.failure_reason is not None:
                raise ValueError("valid record cannot carry a failure_reason")
        else:
            if self.failure_reason not in FAILURE_REASONS:
                raise ValueError(f"invalid failure_reason {self.failure_reason!r}")
            if any(v is not None for v in (self.ssim, self.psnr_db, self.nmse)):
                raise ValueError("invalid record must not carry metrics")

    @property
    def cell(self) -> tuple:
        return (self.modality, self.pattern, self.af)


_METRIC_KEYS = [f.name for f in fields(CaseMetrics)]


def write_metrics_jsonl(records: Iterable[CaseMetrics], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec), allow_nan=False) + "\n")


def read_metrics_jsonl(path) -> list[CaseMetrics]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed line ({exc})") from None
            if not isinstance(obj, dict) or set(obj) != set(_METRIC_KEYS):
                raise ValueError(f"{path}:{lineno}: expected keys {_METRIC_KEYS}")
            out.append(CaseMetrics(**obj))
    return out
