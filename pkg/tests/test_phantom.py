import numpy as np
import pytest

from kspace_bench.operators import ifft2c
from kspace_bench.phantom import (MODALITIES, PhantomSpec, coil_profiles, generate_phantom,
                                  phantom_to_kspace, support_mask)


def test_shapes_and_dtypes():
    spec = PhantomSpec(matrix=(64, 48), frames=3, coils=5, seed=1)
    image, csm = generate_phantom(spec)
    assert image.shape == (3, 64, 48) and image.dtype == np.float32
    assert csm.shape == (5, 64, 48) and csm.dtype == np.complex64
    assert (image >= 0).all() and image.max() <= 1.0


def test_coil_sum_of_squares_is_one():
    csm = coil_profiles((64, 48), 8, np.random.default_rng(0))
    np.testing.assert_allclose((np.abs(csm) ** 2).sum(axis=0), 1.0, atol=1e-5)


def test_deterministic_per_seed():
    a = generate_phantom(PhantomSpec(matrix=(64, 48), frames=2, coils=2, seed=7))
    b = generate_phantom(PhantomSpec(matrix=(64, 48), frames=2, coils=2, seed=7))
    c = generate_phantom(PhantomSpec(matrix=(64, 48), frames=2, coils=2, seed=8))
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()
    assert a[0].tobytes() != c[0].tobytes()


def test_support_shared_across_modalities():
    masks = [support_mask(PhantomSpec(matrix=(64, 48), frames=1, coils=1, modality_tag=m, seed=4))
             for m in MODALITIES]
    for m in masks[1:]:
        np.testing.assert_array_equal(m, masks[0])


def test_contrast_differs_between_modalities():
    imgs = {m: generate_phantom(PhantomSpec(matrix=(64, 48), frames=1, coils=1,
                                            modality_tag=m, seed=4))[0] for m in MODALITIES}
    assert len({v.tobytes() for v in imgs.values()}) == len(MODALITIES)


def test_contraction_moves_frames():
    image, _ = generate_phantom(PhantomSpec(matrix=(64, 48), frames=6, coils=1, seed=2))
    assert not np.array_equal(image[0], image[3])
    still, _ = generate_phantom(PhantomSpec(matrix=(64, 48), frames=6, coils=1, seed=2,
                                            contraction_amplitude=0.0))
    np.testing.assert_array_equal(still[0], still[3])


def test_kspace_inverts_to_coil_images(small_case):
    _, image, csm, y = small_case
    assert y.shape == (csm.shape[0],) + image.shape
    back = ifft2c(y)
    np.testing.assert_allclose(back, csm[:, None] * image[None], atol=1e-5)


def test_kspace_extent_mismatch():
    with pytest.raises(ValueError):
        phantom_to_kspace(np.zeros((2, 32, 32)), np.zeros((2, 32, 34)))


@pytest.mark.parametrize("kw", [dict(matrix=(63, 48)), dict(matrix=(16, 16)),
                                dict(modality_tag="pet"), dict(contraction_amplitude=0.5),
                                dict(seed=-1), dict(frames=0)])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        PhantomSpec(**kw)
