import numpy as np
import pytest

from videoprnu.wavelet import (
    _REC_HI,
    _REC_LO,
    dwt2,
    idwt2,
    noise_residual,
    wavedec2,
    waverec2,
)


def test_filter_bank_orthonormal():
    assert abs(_REC_LO.sum() - np.sqrt(2)) < 1e-12
    assert abs((_REC_LO**2).sum() - 1.0) < 1e-12
    assert abs((_REC_HI**2).sum() - 1.0) < 1e-12
    assert abs(np.dot(_REC_LO, _REC_HI)) < 1e-12
    for k in (1, 2, 3):
        assert abs(np.dot(_REC_LO[2 * k :], _REC_LO[: -2 * k])) < 1e-12
        assert abs(np.dot(_REC_HI[2 * k :], _REC_HI[: -2 * k])) < 1e-12


@pytest.mark.parametrize("shape", [(16, 16), (64, 48), (128, 96)])
def test_single_level_perfect_reconstruction(shape):
    x = np.random.default_rng(0).standard_normal(shape)
    ll, det = dwt2(x)
    assert ll.shape == (shape[0] // 2, shape[1] // 2)
    xr = idwt2(ll, det)
    np.testing.assert_allclose(xr, x, atol=1e-12)


@pytest.mark.parametrize("levels", [1, 2, 4])
def test_multilevel_perfect_reconstruction(levels):
    x = np.random.default_rng(1).standard_normal((96, 64))
    xr = waverec2(wavedec2(x, levels))
    np.testing.assert_allclose(xr, x, atol=1e-12)


def test_energy_preserved():
    x = np.random.default_rng(2).standard_normal((64, 64))
    coeffs = wavedec2(x, 3)
    total = np.sum(coeffs[0] ** 2) + sum(np.sum(b**2) for det in coeffs[1:] for b in det)
    assert abs(total - np.sum(x**2)) < 1e-8


def test_odd_sizes_handled_by_padding():
    img = 128 + 11 * np.random.default_rng(3).standard_normal((101, 77))
    w = noise_residual(img, 3.0)
    assert w.shape == img.shape
    assert np.all(np.isfinite(w))


def test_constant_image_gives_zero_residual():
    w = noise_residual(np.full((64, 64), 117.0), 3.0)
    assert np.abs(w).max() < 1e-10


def test_smooth_content_mostly_removed():
    # residual of a smooth ramp plus noise keeps the noise, drops the ramp
    rng = np.random.default_rng(4)
    yy, xx = np.mgrid[0:128, 0:128]
    ramp = 0.5 * xx + 0.25 * yy
    noise = 2.0 * rng.standard_normal((128, 128))
    w = noise_residual(ramp + noise, 2.0)
    leak = noise_residual(ramp, 2.0)
    assert np.abs(leak).std() < 0.1 * noise.std()
    assert np.corrcoef(w.ravel(), noise.ravel())[0, 1] > 0.5


def test_invalid_inputs():
    with pytest.raises(ValueError):
        noise_residual(np.zeros((8, 8)), 0.0)
    with pytest.raises(ValueError):
        noise_residual(np.zeros(8), 1.0)
    with pytest.raises(ValueError):
        wavedec2(np.zeros((8, 8)), 0)
