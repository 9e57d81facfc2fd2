"""PSNR, SSIM and MS-SSIM."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..imagecore import ContractError, ImageGrid

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


class ImageTooSmallError(ValueError):
    pass


def _arr(x) -> np.ndarray:
    data = x.data if isinstance(x, ImageGrid) else np.asarray(x, dtype=np.float64)
    return data[:, :, None] if data.ndim == 2 else data


def psnr_arrays(a, b, peak: float = 1.0, mask=None) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    diff = (a - b) ** 2
    if mask is not None:
        diff = diff[np.asarray(mask, bool)]
    mse = float(diff.mean())
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse)))


def psnr(a, b, peak: float = 1.0, mask=None) -> float:
    """PSNR in dB, capped at 99 for identical inputs; ``mask`` selects pixels."""
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ContractError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    return psnr_arrays(a, b, peak, mask)


def _gaussian_window() -> np.ndarray:
    r = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2
    g = np.exp(-(r ** 2) / (2 * SSIM_SIGMA ** 2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid'-mode Gaussian filtering of a 2D array."""
    h = SSIM_WINDOW // 2
    y = ndimage.correlate1d(x, g, axis=0, mode="constant")[h:-h]
    return ndimage.correlate1d(y, g, axis=1, mode="constant")[:, h:-h]


def _ssim_terms(a: np.ndarray, b: np.ndarray, peak: float) -> tuple[float, float]:
    """Mean SSIM and mean contrast-structure term over one 2D channel."""
    g = _gaussian_window()
    c1, c2 = (SSIM_K1 * peak) ** 2, (SSIM_K2 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a ** 2
    sbb = _filter_valid(b * b, g) - mu_b ** 2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    cs = (2 * sab + c2) / (saa + sbb + c2)
    lum = (2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
    return float((lum * cs).mean()), float(cs.mean())


def ssim(a, b, peak: float = 1.0) -> float:
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ContractError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ImageTooSmallError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    return float(np.mean([_ssim_terms(a[..., c], b[..., c], peak)[0] for c in range(a.shape[2])]))


def _halve(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim(a, b, peak: float = 1.0, weights=MS_SSIM_WEIGHTS) -> float:
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ContractError(f"ms_ssim: shape mismatch {a.shape} vs {b.shape}")
    need = SSIM_WINDOW * 2 ** (len(weights) - 1)
    if min(a.shape[:2]) < need:
        raise ImageTooSmallError(f"ms_ssim with {len(weights)} scales needs images of at least {need}x{need}")
    scores = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        total = 1.0
        for k, wgt in enumerate(weights):
            s, cs = _ssim_terms(x, y, peak)
            term = s if k == len(weights) - 1 else cs
            total *= max(term, 0.0) ** wgt
            x, y = _halve(x), _halve(y)
        scores.append(total)
    return float(np.clip(np.mean(scores), 0.0, 1.0))
