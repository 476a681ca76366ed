import numpy as np
import pytest

from privsemcom import kernels


def test_numba_and_numpy_paths_agree():
    rng = np.random.default_rng(0)
    a, b = rng.random((20, 24)), rng.random((20, 24))
    fast = kernels.ssim_map(a, b, use_numba=True)
    slow = kernels.ssim_map(a, b, use_numba=False)
    assert fast.shape == (10, 14)
    np.testing.assert_allclose(fast, slow, atol=1e-12)
    mags = rng.rayleigh(np.sqrt(0.5), 5000)
    assert kernels.ks_rayleigh(mags, use_numba=True) == pytest.approx(
        kernels.ks_rayleigh(mags, use_numba=False), abs=1e-12)


def test_ssim_map_identity_and_constant():
    x = np.random.default_rng(1).random((16, 16))
    np.testing.assert_allclose(kernels.ssim_map(x, x), 1.0, atol=1e-12)
    c1 = kernels.SSIM_C1
    val = kernels.ssim_map(np.full((12, 12), 0.5), np.zeros((12, 12)))
    np.testing.assert_allclose(val, c1 / (0.25 + c1), rtol=1e-12)


def test_ks_detects_wrong_distribution():
    rng = np.random.default_rng(2)
    assert kernels.ks_rayleigh(rng.rayleigh(np.sqrt(0.5), 20000)) < 0.015
    assert kernels.ks_rayleigh(rng.rayleigh(1.0, 20000)) > 0.1


def test_small_image_rejected():
    with pytest.raises(ValueError):
        kernels.ssim_map(np.zeros((8, 8)), np.zeros((8, 8)))
