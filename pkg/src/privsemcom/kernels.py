"""Non-differentiable numeric kernels: windowed SSIM, Rayleigh KS statistic.

The loops are compiled with numba when it is importable.  Set
``PRIVSEMCOM_DISABLE_NUMBA=1`` to force the pure-numpy path; both paths are
tested against each other.
"""

from __future__ import annotations

import math
import os

import numpy as np

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _numba_requested() -> bool:
    return os.environ.get("PRIVSEMCOM_DISABLE_NUMBA", "").lower() not in ("1", "true", "yes")


try:
    if not _numba_requested():
        raise ImportError
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2-D Gaussian window, float64 [size, size]."""
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(coords**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


# --- windowed SSIM ----------------------------------------------------------

def _ssim_map_py(a, b, win, c1, c2):
    # a, b: [H, W] float64.  'valid' placement: the window never leaves the image.
    k = win.shape[0]
    H, W = a.shape
    out = np.empty((H - k + 1, W - k + 1))
    for r in range(H - k + 1):
        for c in range(W - k + 1):
            mu_a = 0.0
            mu_b = 0.0
            for i in range(k):
                for j in range(k):
                    w = win[i, j]
                    mu_a += w * a[r + i, c + j]
                    mu_b += w * b[r + i, c + j]
            var_a = 0.0
            var_b = 0.0
            cov = 0.0
            for i in range(k):
                for j in range(k):
                    w = win[i, j]
                    da = a[r + i, c + j] - mu_a
                    db = b[r + i, c + j] - mu_b
                    var_a += w * da * da
                    var_b += w * db * db
                    cov += w * da * db
            out[r, c] = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
                (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    return out


def _ssim_map_np(a, b, win, c1, c2):
    k = win.shape[0]
    pa = np.lib.stride_tricks.sliding_window_view(a, (k, k))
    pb = np.lib.stride_tricks.sliding_window_view(b, (k, k))
    mu_a = np.einsum("rcij,ij->rc", pa, win)
    mu_b = np.einsum("rcij,ij->rc", pb, win)
    da = pa - mu_a[..., None, None]
    db = pb - mu_b[..., None, None]
    var_a = np.einsum("rcij,ij->rc", da * da, win)
    var_b = np.einsum("rcij,ij->rc", db * db, win)
    cov = np.einsum("rcij,ij->rc", da * db, win)
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))


if HAVE_NUMBA:
    _ssim_map_fast = njit(cache=True)(_ssim_map_py)
else:
    _ssim_map_fast = _ssim_map_np


def ssim_map(a: np.ndarray, b: np.ndarray, *, use_numba: bool | None = None) -> np.ndarray:
    """Per-window SSIM of two single-channel images (dynamic range 1)."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"expected two equal 2-D images, got {a.shape} and {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    fast = HAVE_NUMBA if use_numba is None else (use_numba and HAVE_NUMBA)
    fn = _ssim_map_fast if fast else _ssim_map_np
    return fn(a, b, gaussian_window(), SSIM_C1, SSIM_C2)


def ssim_reference(a: np.ndarray, b: np.ndarray, *, use_numba: bool | None = None) -> float:
    """Mean SSIM of image batches laid out [N, H, W, C] or [H, W, C].

    Computed window by window, per channel, then averaged.  Slow; meant as
    an independent check on the convolutional implementation in ``metrics``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = a[None], b[None]
    vals = [ssim_map(a[n, :, :, ch], b[n, :, :, ch], use_numba=use_numba).mean()
            for n in range(a.shape[0]) for ch in range(a.shape[3])]
    return float(np.mean(vals))


# --- Rayleigh KS statistic --------------------------------------------------

def _ks_rayleigh_py(sorted_mag):
    n = sorted_mag.shape[0]
    d = 0.0
    for i in range(n):
        x = sorted_mag[i]
        cdf = 1.0 - math.exp(-x * x)
        lo = cdf - i / n
        hi = (i + 1) / n - cdf
        if lo > d:
            d = lo
        if hi > d:
            d = hi
    return d


def _ks_rayleigh_np(sorted_mag):
    n = sorted_mag.shape[0]
    cdf = 1.0 - np.exp(-(sorted_mag**2))
    i = np.arange(n)
    return float(max((cdf - i / n).max(), ((i + 1) / n - cdf).max()))


if HAVE_NUMBA:
    _ks_rayleigh_fast = njit(cache=True)(_ks_rayleigh_py)
else:
    _ks_rayleigh_fast = _ks_rayleigh_np


def ks_rayleigh(magnitudes: np.ndarray, *, use_numba: bool | None = None) -> float:
    """KS distance between samples of |h| and the CDF 1 - exp(-x^2)."""
    mag = np.sort(np.asarray(magnitudes, dtype=np.float64).ravel())
    if mag.size == 0:
        raise ValueError("need at least one sample")
    fast = HAVE_NUMBA if use_numba is None else (use_numba and HAVE_NUMBA)
    return float((_ks_rayleigh_fast if fast else _ks_rayleigh_np)(mag))
