"""Content (MSE) plus frequency-reconstruction training loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..imagekernel import ParameterError


@dataclass(frozen=True)
class LossWeights:
    content: float = 1.0
    frequency: float = 0.2

    def __post_init__(self):
        if self.content < 0 or self.frequency < 0:
            raise ParameterError("loss weights must be non-negative")


def frequency_loss(restored: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean complex modulus of the per-channel 2D DFT difference, and its gradient.

    The DFT is unnormalized.  Bins where the difference vanishes get a zero
    subgradient.
    """
    d = restored - target
    z = np.fft.fft2(d, axes=(-2, -1))
    mag = np.abs(z)
    m = z.size
    value = float(mag.sum() / m)
    unit = np.divide(z, mag, out=np.zeros_like(z), where=mag > 0)
    # adjoint of the unnormalized forward DFT is H*W times the inverse DFT
    hw = d.shape[-1] * d.shape[-2]
    grad = (np.fft.ifft2(unit, axes=(-2, -1)).real * hw / m).astype(restored.dtype, copy=False)
    return value, grad


def loss_total(restored, target, lw: LossWeights = LossWeights()) -> tuple[float, np.ndarray, dict]:
    """Weighted content + frequency loss.

    Returns ``(total, d total / d restored, {"content": .., "frequency": ..})``.
    """
    r = np.asarray(restored)
    t = np.asarray(target)
    if r.shape != t.shape:
        raise ParameterError(f"shape mismatch {r.shape} vs {t.shape}")
    d = r - t
    content = float(np.mean(d * d))
    g_content = 2.0 * d / d.size
    freq, g_freq = frequency_loss(r, t)
    total = lw.content * content + lw.frequency * freq
    grad = lw.content * g_content + lw.frequency * g_freq
    return total, grad, {"content": content, "frequency": freq}
