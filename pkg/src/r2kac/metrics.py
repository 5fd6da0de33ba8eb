"""Full-reference image quality metrics: PSNR, SSIM and MAE (peak value 1.0)."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imagekernel import ParameterError

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
# Rec.601 luma
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ssim: float
    mae: float

    def to_dict(self) -> dict:
        return asdict(self)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB for peak 1.0; ``inf`` when the inputs are identical."""
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def mae(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def to_luma(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    if img.shape[-1] == 1:
        return img[..., 0]
    if img.shape[-1] == 3:
        return img @ LUMA
    raise ParameterError(f"cannot convert shape {img.shape} to luma")


def ssim_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - size // 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b) -> float:
    """Single-scale SSIM averaged over all fully-inside window positions.

    Color inputs are compared on their Rec.601 luma.
    """
    a, b = _pair(a, b)
    x, y = to_luma(a), to_luma(b)
    if x.shape[0] < SSIM_WIN or x.shape[1] < SSIM_WIN:
        raise ParameterError(f"image {x.shape} smaller than the {SSIM_WIN}x{SSIM_WIN} window")
    w = ssim_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2

    def filt(z):
        return np.einsum("ijkl,kl->ij", sliding_window_view(z, w.shape), w)

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def report(restored, reference) -> MetricReport:
    return MetricReport(psnr(restored, reference), ssim(restored, reference), mae(restored, reference))
