import json
import struct

import numpy as np
import pytest

from kspace_bench.tensor_io import (COMPLEX64, FLOAT32, MAGIC, MASK_U8, CaseMetrics, CxaError,
                                    read_cxa, read_metrics_jsonl, write_cxa, write_metrics_jsonl)


def _header(code, dims):
    return MAGIC + struct.pack("<BB", code, len(dims)) + struct.pack(f"<{len(dims)}Q", *dims)


@pytest.mark.parametrize("dtype,code", [(np.complex64, COMPLEX64), (np.float32, FLOAT32),
                                        (np.bool_, MASK_U8)])
def test_roundtrip(tmp_path, rng, dtype, code):
    shape = (3, 5, 7)
    if dtype is np.bool_:
        a = rng.random(shape) > 0.5
    elif dtype is np.complex64:
        a = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)).astype(dtype)
    else:
        a = rng.standard_normal(shape).astype(dtype)
    write_cxa(a, tmp_path / "a.cxa")
    back = read_cxa(tmp_path / "a.cxa")
    assert back.code == code and back.dims == shape and back.finite
    assert back.data.tobytes() == np.asarray(a, dtype=back.data.dtype).tobytes()


def test_byte_layout(tmp_path):
    # independently assembled file: magic, code, ndim, u64 dims, row-major payload
    a = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_cxa(a, tmp_path / "a.cxa")
    raw = (tmp_path / "a.cxa").read_bytes()
    assert raw == _header(FLOAT32, (2, 3)) + a.tobytes()


def test_complex_layout_interleaved(tmp_path):
    a = np.array([1 + 2j, 3 - 4j], dtype=np.complex64)
    write_cxa(a, tmp_path / "c.cxa")
    payload = (tmp_path / "c.cxa").read_bytes()[6 + 8:]
    assert struct.unpack("<4f", payload) == (1.0, 2.0, 3.0, -4.0)


def test_float64_is_downcast(tmp_path):
    write_cxa(np.array([1.5, 2.25]), tmp_path / "f.cxa")
    assert read_cxa(tmp_path / "f.cxa").data.dtype == np.float32


@pytest.mark.parametrize("raw,msg", [
    (b"XXXX\x02\x01" + struct.pack("<Q", 1) + b"\0" * 4, "magic"),
    (_header(9, (1,)) + b"\0" * 4, "dtype code"),
    (MAGIC + b"\x02\x02" + struct.pack("<Q", 1), "truncated header"),
    (_header(FLOAT32, (4,)) + b"\0" * 12, "truncated payload"),
    (_header(FLOAT32, (1,)) + b"\0" * 8, "trailing"),
    (_header(MASK_U8, (2,)) + b"\x01\x02", "0 or 1"),
])
def test_malformed(tmp_path, raw, msg):
    (tmp_path / "bad.cxa").write_bytes(raw)
    with pytest.raises(CxaError, match=msg):
        read_cxa(tmp_path / "bad.cxa")


def test_nonfinite_flagged_on_read_refused_on_write(tmp_path):
    a = np.array([1.0, np.nan], dtype=np.float32)
    with pytest.raises(CxaError):
        write_cxa(a, tmp_path / "n.cxa")
    (tmp_path / "n.cxa").write_bytes(_header(FLOAT32, (2,)) + a.tobytes())
    assert read_cxa(tmp_path / "n.cxa").finite is False


def test_mask_values_checked_on_write(tmp_path):
    with pytest.raises(CxaError):
        write_cxa(np.array([0, 2], dtype=np.uint8), tmp_path / "m.cxa")
    write_cxa(np.array([0, 1]), tmp_path / "m.cxa", code=MASK_U8)
    assert read_cxa(tmp_path / "m.cxa").kind == "mask"


def test_metrics_jsonl_roundtrip(tmp_path):
    recs = [CaseMetrics("t", "case0000", "cine_sax", "uniform", 4, 0.9, 30.0, 0.01),
            CaseMetrics("t", "case0001", "cine_sax", "uniform", 4, valid=False,
                        failure_reason="missing_file")]
    write_metrics_jsonl(recs, tmp_path / "m.jsonl")
    assert read_metrics_jsonl(tmp_path / "m.jsonl") == recs


def test_metrics_jsonl_rejects_bad_lines(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text("{not json}\n")
    with pytest.raises(ValueError, match="malformed"):
        read_metrics_jsonl(p)
    p.write_text(json.dumps({"team": "t"}) + "\n")
    with pytest.raises(ValueError):
        read_metrics_jsonl(p)


def test_case_metrics_invariants():
    with pytest.raises(ValueError):
        CaseMetrics("t", "c", "m", "uniform", 4, valid=False, failure_reason="crashed")
    with pytest.raises(ValueError):
        CaseMetrics("t", "c", "m", "uniform", 4, ssim=0.5, valid=False, failure_reason="non_finite")
