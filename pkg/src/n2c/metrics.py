"""PSNR and SSIM image quality metrics.

PSNR uses 10*log10(data_range^2 / MSE) and reports +inf when the images
are identical.  SSIM follows the standard Gaussian-weighted formulation
with C1 = (k1*L)^2, C2 = (k2*L)^2; only windows fully inside the image are
averaged (no padding), which avoids border bias on small desk-scale
images.  The 7-pixel default window suits 64 px slices; all constants are
echoed into reports so scores stay comparable across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError


@dataclass(frozen=True)
class MetricConfig:
    data_range: float = 1.0
    ssim_window: int = 7
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    ssim_gaussian_sigma: float = 1.5

    def __post_init__(self) -> None:
        if self.data_range <= 0:
            raise ContractError(f"data_range must be > 0, got {self.data_range}")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise ContractError(f"ssim_window must be odd and >= 3, got {self.ssim_window}")


def _as_array(img) -> np.ndarray:
    return np.asarray(getattr(img, "data", img), dtype=np.float64)


def psnr(pred, ref, cfg: MetricConfig) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical images."""
    p, r = _as_array(pred), _as_array(ref)
    if p.shape != r.shape:
        raise ContractError(f"shape mismatch {p.shape} vs {r.shape}")
    mse = float(np.mean((p - r) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(cfg.data_range**2 / mse)


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma**2))
    return k / k.sum()


def ssim(pred, ref, cfg: MetricConfig) -> float:
    """Mean structural similarity over all fully interior window positions."""
    p, r = _as_array(pred), _as_array(ref)
    if p.shape != r.shape:
        raise ContractError(f"shape mismatch {p.shape} vs {r.shape}")
    w = cfg.ssim_window
    if p.shape[0] < w or p.shape[1] < w:
        raise ContractError(f"image {p.shape} smaller than ssim window {w}")
    kernel = gaussian_window(w, cfg.ssim_gaussian_sigma)

    def wmean(x: np.ndarray) -> np.ndarray:
        return np.tensordot(sliding_window_view(x, (w, w)), kernel, axes=((2, 3), (0, 1)))

    mu_p = wmean(p)
    mu_r = wmean(r)
    var_p = wmean(p * p) - mu_p**2
    var_r = wmean(r * r) - mu_r**2
    cov = wmean(p * r) - mu_p * mu_r

    c1 = (cfg.ssim_k1 * cfg.data_range) ** 2
    c2 = (cfg.ssim_k2 * cfg.data_range) ** 2
    ssim_map = ((2 * mu_p * mu_r + c1) * (2 * cov + c2)) / (
        (mu_p**2 + mu_r**2 + c1) * (var_p + var_r + c2)
    )
    return float(ssim_map.mean())
