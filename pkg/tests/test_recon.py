import numpy as np
import pytest

from kspace_bench.evaluation import compute_nmse, compute_ssim
from kspace_bench.operators import EncodingOperator
from kspace_bench.recon import (ReconConfig, ReconError, conjugate_gradient, data_consistency_error,
                                div2d, grad2d, reconstruct, tv_prox, tv_shrink_step)
from kspace_bench.sampling import MaskSpec, apply_mask, make_mask


def _undersample(small_case, pattern="uniform", af=4):
    spec, image, csm, y = small_case
    mask = make_mask(MaskSpec(pattern, af, image.shape[0], *image.shape[1:], acs_lines=8, seed=1))
    return image, csm, apply_mask(y, mask), mask.operator_mask()


def test_cg_solves_spd_system(rng):
    # dense oracle: batched CG against numpy.linalg.solve per frame
    n = 12
    mats = []
    for _ in range(3):
        q = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        mats.append(q.conj().T @ q + n * np.eye(n))
    normal = lambda v: np.stack([m @ v[t, :, 0] for t, m in enumerate(mats)])[:, :, None]
    b = (rng.standard_normal((3, n, 1)) + 1j * rng.standard_normal((3, n, 1))).astype(np.complex64)
    x, it, res, hist = conjugate_gradient(lambda v: normal(v).astype(np.complex64), b,
                                          max_iters=50, tol=1e-6)
    for t, m in enumerate(mats):
        np.testing.assert_allclose(x[t, :, 0], np.linalg.solve(m, b[t, :, 0]), rtol=1e-4, atol=1e-5)
    assert res.max() <= 1e-6 and it <= n + 2


def test_zero_fill_full_mask_equals_magnitude(small_case):
    _, image, csm, y = small_case
    res = reconstruct(y, None, None, ReconConfig.for_method("zf"))
    # RSS of coil images with sum |S|^2 == 1 is the magnitude image
    np.testing.assert_allclose(res.image, image, atol=1e-4)


def test_cgsense_exact_with_full_sampling(small_case):
    _, image, csm, y = small_case
    mask = np.ones((image.shape[0], image.shape[1]), bool)
    res = reconstruct(y, mask, csm, ReconConfig.for_method("cgsense"))
    assert compute_nmse(res.image, image) < 1e-6
    assert res.converged and res.iterations_used <= 50


def test_cgsense_feasible_with_true_maps(small_case):
    image, csm, y, mask = _undersample(small_case)
    res = reconstruct(y, mask, csm, ReconConfig.for_method("cgsense", max_iters=100))
    assert data_consistency_error(res, y, mask, csm) < 1e-2


def test_cgsense_tikhonov_shrinks(small_case):
    image, csm, y, mask = _undersample(small_case)
    plain = reconstruct(y, mask, csm, ReconConfig.for_method("cgsense"))
    reg = reconstruct(y, mask, csm, ReconConfig.for_method("cgsense", tikhonov_lambda=1.0))
    assert np.linalg.norm(reg.image) < np.linalg.norm(plain.image)


def test_unrolled_gd_residual_monotone(small_case):
    image, csm, y, mask = _undersample(small_case)
    res = reconstruct(y, mask, csm, ReconConfig.for_method("unrolled_gd", tv_weight=0.0))
    assert len(res.residuals) == 8
    assert all(b <= a * (1 + 1e-6) for a, b in zip(res.residuals, res.residuals[1:]))


def test_unrolled_gd_diverges_with_large_step(small_case):
    image, csm, y, mask = _undersample(small_case)
    with pytest.raises(ReconError, match="diverged"):
        reconstruct(y, mask, csm, ReconConfig.for_method("unrolled_gd", step_size=5.0,
                                                         cascades=30, tv_weight=0.0))


def test_admm_without_tv_matches_cgsense(small_case):
    image, csm, y, mask = _undersample(small_case)
    # with no TV term ADMM is a proximal-point least-squares solver; compare converged solutions
    cg = reconstruct(y, mask, csm, ReconConfig.for_method("cgsense", max_iters=500))
    admm = reconstruct(y, mask, csm, ReconConfig.for_method(
        "admm_tv", tv_weight=0.0, rho=1e-3, max_iters=100, tv_inner_iters=20))
    assert compute_nmse(admm.image, cg.image) < 1e-3


def test_admm_tv_improves_on_zero_fill(small_case):
    image, csm, y, mask = _undersample(small_case, "uniform", 4)
    zf = reconstruct(y, mask, None, ReconConfig.for_method("zf"))
    admm = reconstruct(y, mask, csm, ReconConfig.for_method("admm_tv"))
    assert compute_ssim(admm.image, image) > compute_ssim(zf.image, image)


def test_div_is_negative_adjoint_of_grad(rng):
    x = rng.standard_normal((2, 9, 7))
    g = rng.standard_normal((2, 2, 9, 7))
    assert np.isclose(np.sum(grad2d(x) * g), -np.sum(x * div2d(g)))


def test_tv_prox_properties(rng):
    const = np.full((1, 8, 8), 3.0)
    np.testing.assert_allclose(tv_prox(const, 0.5, 20)[0], const, atol=1e-12)
    f = rng.standard_normal((1, 16, 16))
    z, _ = tv_prox(f, 0.3, 50)
    tv = lambda v: np.sqrt((grad2d(v) ** 2).sum(axis=0)).sum()
    obj = lambda v: 0.5 * ((v - f) ** 2).sum() + 0.3 * tv(v)
    assert obj(z) < obj(f)
    assert np.isclose(z.mean(), f.mean())


def test_tv_shrink_step_identity_cases(rng):
    x = rng.standard_normal((1, 8, 8))
    assert tv_shrink_step(x, 0.0) is x
    const = np.ones((1, 8, 8))
    np.testing.assert_array_equal(tv_shrink_step(const, 0.1), const)


def test_result_fields(small_case):
    image, csm, y, mask = _undersample(small_case)
    res = reconstruct(y, mask, csm, ReconConfig.for_method("cgsense", max_iters=3))
    assert res.image.dtype == np.float32 and res.image.shape == image.shape
    assert res.iterations_used == 3 and not res.converged
    assert res.wall_time_frame == pytest.approx(res.wall_time_volume / image.shape[0])
    assert set(res.summary()) >= {"iterations_used", "final_residual", "wall_time_volume"}


@pytest.mark.parametrize("kw", [dict(method="deep"), dict(max_iters=0), dict(rho=0),
                                dict(tolerance=0), dict(tv_weight=-1)])
def test_config_validation(kw):
    base = dict(method="cgsense")
    base.update(kw)
    with pytest.raises(ValueError):
        ReconConfig(**base)


def test_admm_default_iterations():
    assert ReconConfig.for_method("admm_tv").max_iters == 10
    assert ReconConfig.for_method("cgsense").max_iters == 50
