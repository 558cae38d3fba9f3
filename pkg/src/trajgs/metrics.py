"""Image quality metrics. SSIM here is the same code the photometric loss uses."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import autodiff as ad

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PSNR_CAP = 99.0


@lru_cache(maxsize=32)
def _window_matrix(n: int, size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Row-normalized banded Gaussian filter; borders truncate and renormalize."""
    half = size // 2
    taps = np.exp(-((np.arange(size) - half) ** 2) / (2 * sigma * sigma))
    M = np.zeros((n, n))
    for r in range(n):
        lo, hi = max(0, r - half), min(n, r + half + 1)
        M[r, lo:hi] = taps[lo - r + half:hi - r + half]
    M /= M.sum(axis=1, keepdims=True)
    M.setflags(write=False)
    return M


def _blur(x, H, W):
    return ad.einsum("ij,jkc,lk->ilc", _window_matrix(H), x, _window_matrix(W))


def ssim(a, b):
    """Mean SSIM of two ``(H, W, C)`` images in [0, 1] (11x11 Gaussian window, sigma 1.5)."""
    av, bv = ad.value(a), ad.value(b)
    if av.shape != bv.shape:
        raise ValueError(f"image shapes differ: {av.shape} vs {bv.shape}")
    if av.ndim == 2:
        a, b = ad.reshape(a, av.shape + (1,)), ad.reshape(b, bv.shape + (1,))
        av = ad.value(a)
    H, W = av.shape[:2]
    mu_a, mu_b = _blur(a, H, W), _blur(b, H, W)
    var_a = _blur(a * a, H, W) - mu_a * mu_a
    var_b = _blur(b * b, H, W) - mu_b * mu_b
    cov = _blur(a * b, H, W) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return ad.mean(num / den)


def mse(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """``10 log10(1 / MSE)`` for images in [0, 1], capped at 99 dB."""
    err = mse(a, b)
    if err == 0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(1.0 / err), PSNR_CAP))


def image_metrics(a, b) -> dict:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return {"psnr": psnr(a, b), "ssim": float(ssim(a, b)), "l1": float(np.abs(a - b).mean())}
