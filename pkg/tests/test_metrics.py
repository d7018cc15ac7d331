import numpy as np
import pytest
from skimage.metrics import structural_similarity

from oitlab.metrics import PSNR_CAP, abs_error_image, luminance, psnr, ssim


@pytest.fixture
def image():
    rng = np.random.default_rng(0)
    y, x = np.mgrid[0:48, 0:64] / 64.0
    base = np.stack([np.sin(6 * x) * 0.4 + 0.5, y, 0.5 * (x + y)], axis=-1)
    return np.clip(base + 0.05 * rng.normal(size=base.shape), 0, 1)


def test_psnr_identical_is_capped(image):
    assert psnr(image, image) == PSNR_CAP


def test_psnr_gray_vs_black():
    assert psnr(np.full((16, 16, 3), 0.5), np.zeros((16, 16, 3))) == pytest.approx(6.0206, abs=1e-4)


def test_psnr_symmetric_and_monotone(image):
    rng = np.random.default_rng(1)
    noise = rng.normal(size=image.shape)
    values = [psnr(image + a * noise, image) for a in (0.01, 0.05, 0.1)]
    assert values[0] > values[1] > values[2]
    assert psnr(image, image + 0.05 * noise) == psnr(image + 0.05 * noise, image)


def test_ssim_identical(image):
    mean, smap = ssim(image, image)
    assert mean == pytest.approx(1.0)
    assert smap.shape == image.shape[:2]


def test_ssim_inverted_pattern_low(image):
    mean, smap = ssim(1.0 - image, image)
    assert mean < 0.5
    assert smap.min() >= -1.0 and smap.max() <= 1.0


def test_ssim_matches_skimage_on_interior(image):
    rng = np.random.default_rng(2)
    other = np.clip(image + 0.08 * rng.normal(size=image.shape), 0, 1)
    _, ours = ssim(other, image)
    _, ref = structural_similarity(luminance(other), luminance(image), gaussian_weights=True,
                                   sigma=1.5, use_sample_covariance=False, data_range=1.0,
                                   full=True)
    np.testing.assert_allclose(ours[5:-5, 5:-5], ref[5:-5, 5:-5], atol=1e-10)


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 40)), np.zeros((10, 40)))


def test_abs_error_image():
    a = np.zeros((4, 4, 3))
    b = a.copy()
    np.testing.assert_array_equal(abs_error_image(a, b), np.ones((4, 4)))
    b[1, 2] = 0.6
    b[3, 3] = 0.3
    err = abs_error_image(a, b)
    assert err[1, 2] == 0.0 and err[3, 3] == pytest.approx(0.5) and err[0, 0] == 1.0


@pytest.mark.parametrize("fn", [psnr, ssim, abs_error_image])
def test_shape_mismatch(fn):
    with pytest.raises(ValueError):
        fn(np.zeros((16, 16, 3)), np.zeros((16, 17, 3)))
