import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from kspace_bench.evaluation import (PSNR_CAP_DB, HarnessError, aggregate_all, aggregate_modality,
                                     aggregate_overall, compute_nmse, compute_psnr, compute_ssim,
                                     evaluate_case, feedback_report, validate_case)
from kspace_bench.tensor_io import CaseMetrics, write_cxa


def skimage_ssim(pred, ref):
    rng = float(ref.max() - ref.min())
    return np.mean([structural_similarity(p, r, win_size=7, data_range=rng, use_sample_covariance=True,
                                          gaussian_weights=False) for p, r in zip(pred, ref)])


@pytest.mark.parametrize("noise", [0.0, 0.05, 0.3])
def test_ssim_matches_skimage(rng, noise):
    ref = rng.random((3, 40, 32))
    pred = ref + noise * rng.standard_normal(ref.shape)
    assert compute_ssim(pred, ref) == pytest.approx(skimage_ssim(pred, ref), abs=1e-10)


def test_ssim_identity_and_bounds(rng):
    ref = rng.random((2, 20, 20))
    assert compute_ssim(ref, ref) == pytest.approx(1.0)
    assert -1 <= compute_ssim(rng.random((2, 20, 20)), ref) <= 1


def test_psnr_definition(rng):
    ref = rng.random((2, 10, 10))
    pred = ref + 0.1
    want = 10 * math.log10((ref.max() - ref.min()) ** 2 / 0.01)
    assert compute_psnr(pred, ref) == pytest.approx(want)
    assert compute_psnr(ref, ref) == PSNR_CAP_DB


def test_nmse_definition(rng):
    ref = rng.random((2, 6, 6))
    assert compute_nmse(np.zeros_like(ref), ref) == pytest.approx(1.0)
    assert compute_nmse(2 * ref, ref) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        compute_nmse(ref, np.zeros_like(ref))


def test_metric_input_errors(rng):
    with pytest.raises(ValueError):
        compute_ssim(rng.random((2, 8, 8)), rng.random((2, 8, 9)))
    bad = rng.random((1, 8, 8))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        compute_psnr(bad, rng.random((1, 8, 8)))


def test_validate_case_taxonomy(tmp_path, rng):
    ref = rng.random((2, 8, 8)).astype(np.float32)
    write_cxa(ref, tmp_path / "ref.cxa")
    assert validate_case(tmp_path / "none.cxa", tmp_path / "ref.cxa") == "missing_file"
    write_cxa(ref[:, :4], tmp_path / "small.cxa")
    assert validate_case(tmp_path / "small.cxa", tmp_path / "ref.cxa") == "dimension_mismatch"
    (tmp_path / "junk.cxa").write_bytes(b"junk")
    assert validate_case(tmp_path / "junk.cxa", tmp_path / "ref.cxa") == "dimension_mismatch"
    raw = (tmp_path / "ref.cxa").read_bytes()
    nan = np.float32(np.nan).tobytes()
    (tmp_path / "nan.cxa").write_bytes(raw[:-4] + nan)
    assert validate_case(tmp_path / "nan.cxa", tmp_path / "ref.cxa") == "non_finite"
    assert validate_case(tmp_path / "ref.cxa", tmp_path / "ref.cxa") is None
    with pytest.raises(HarnessError):
        validate_case(tmp_path / "ref.cxa", tmp_path / "missing_ref.cxa")


def test_evaluate_case_records(tmp_path, rng):
    ref = rng.random((2, 16, 16)).astype(np.float32)
    write_cxa(ref, tmp_path / "ref.cxa")
    write_cxa(ref, tmp_path / "pred.cxa")
    ok = evaluate_case(tmp_path / "pred.cxa", tmp_path / "ref.cxa", "t", "c", "m", "uniform", 4)
    assert ok.valid and ok.ssim == pytest.approx(1.0) and ok.nmse == 0.0
    miss = evaluate_case(tmp_path / "x.cxa", tmp_path / "ref.cxa", "t", "c", "m", "uniform", 4)
    assert not miss.valid and miss.failure_reason == "missing_file" and miss.ssim is None


def _records(n_ok, n_fail, ssim=0.8, psnr=30.0, nmse=0.02, cell=("m", "uniform", 4)):
    recs = [CaseMetrics("t", f"c{i}", *cell, ssim=ssim, psnr_db=psnr, nmse=nmse) for i in range(n_ok)]
    recs += [CaseMetrics("t", f"f{i}", *cell, valid=False, failure_reason="non_finite")
             for i in range(n_fail)]
    return recs


def test_success_weighting_worked_example():
    # 9 of 10 succeed: SSIM 0.8 -> 0.72, NMSE 0.02 -> 0.022
    agg = aggregate_modality(_records(9, 1))
    assert agg.w == 0.9
    assert agg.ssim_adj == pytest.approx(0.72) and agg.psnr_adj == pytest.approx(27.0)
    assert agg.nmse_adj == pytest.approx(0.022)


def test_all_failed_cell():
    agg = aggregate_modality(_records(0, 3))
    assert agg.w == 0 and agg.ssim_adj == 0 and agg.nmse_adj is None and agg.nmse_adj_undefined


def test_aggregate_rejects_mixed_cells():
    with pytest.raises(ValueError):
        aggregate_modality(_records(1, 0) + _records(1, 0, cell=("m", "uniform", 8)))


@settings(max_examples=200, deadline=None)
@given(n_ok=st.integers(1, 30), n_fail=st.integers(0, 30),
       vals=st.lists(st.floats(1e-4, 1.0), min_size=30, max_size=30))
def test_nmse_adj_bounds(n_ok, n_fail, vals):
    recs = [CaseMetrics("t", f"c{i}", "m", "uniform", 4, ssim=v, psnr_db=20.0, nmse=v)
            for i, v in enumerate(vals[:n_ok])]
    recs += _records(0, n_fail)
    agg = aggregate_modality(recs)
    assert agg.nmse_mean <= agg.nmse_adj <= 2 * agg.nmse_mean
    assert agg.ssim_adj <= agg.ssim_mean


def test_overall_is_unweighted_cell_mean():
    recs = _records(2, 0, ssim=0.9) + _records(1, 1, ssim=0.6, cell=("m", "uniform", 8))
    s = aggregate_overall(aggregate_all(recs), "t")
    assert s.ssim_adj == pytest.approx((0.9 + 0.5 * 0.6) / 2) and s.n_cells == 2


def test_feedback_report():
    text = feedback_report(_records(9, 1))
    assert "success rate m uniform AF4: 0.90 (9/10)" in text
    assert "FAILED non_finite" in text
    assert "no cases evaluated (0 records)" in feedback_report([])
