"""Fourier transforms, FFT convolution and Wiener-regularized inverse kernels."""

from __future__ import annotations

import enum

import numpy as np

from .imagekernel import (
    Kernel,
    KernelRole,
    ParameterError,
    as_image,
    center_crop,
    center_pad,
    lanczos_rescale,
)

DEFAULT_NSR = 1e-3


class SingularityError(ArithmeticError):
    """Unregularized inversion hit a (near-)zero spectral bin."""


class Boundary(enum.Enum):
    CIRCULAR = "circular"
    ZERO_PAD = "zero_pad"


def dft2(x: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2D DFT over the two leading axes."""
    return np.fft.fft2(np.asarray(x), axes=(0, 1))


def idft2(sp: np.ndarray, real: bool = True) -> np.ndarray:
    out = np.fft.ifft2(sp, axes=(0, 1))
    return out.real if real else out


def kernel_spectrum(k: Kernel | np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """DFT of ``k`` embedded centered-at-origin in a circular grid of ``shape``.

    Taps that fall outside the grid wrap around, so kernels larger than the
    grid are folded rather than truncated.
    """
    data = k.data if isinstance(k, Kernel) else np.asarray(k, dtype=np.float64)
    h, w = shape
    n = data.shape[0]
    c = n // 2
    offs = np.arange(n) - c
    grid = np.zeros((h, w))
    if n <= h and n <= w:
        grid[np.ix_(offs % h, offs % w)] = data
    else:
        rows = np.repeat(offs % h, n)
        cols = np.tile(offs % w, n)
        np.add.at(grid, (rows, cols), data.ravel())
    return np.fft.fft2(grid)


def fft_convolve(img, k: Kernel, boundary: Boundary | str = Boundary.CIRCULAR) -> np.ndarray:
    """Convolve every channel of ``img`` with the centered kernel ``k``.

    Circular boundaries give exact cyclic convolution.  Zero padding gives the
    linear convolution cropped back to the input size.
    """
    boundary = Boundary(boundary)
    a = as_image(img)
    h, w, _ = a.shape
    if boundary is Boundary.CIRCULAR:
        ks = kernel_spectrum(k, (h, w))
        return np.fft.ifft2(np.fft.fft2(a, axes=(0, 1)) * ks[:, :, None], axes=(0, 1)).real

    if k.size > h or k.size > w:
        raise ParameterError(f"kernel side {k.size} exceeds image {h}x{w} under zero padding")
    c = k.center
    ph, pw = h + k.size - 1, w + k.size - 1
    fa = np.fft.rfft2(a, s=(ph, pw), axes=(0, 1))
    fk = np.fft.rfft2(k.data, s=(ph, pw))
    full = np.fft.irfft2(fa * fk[:, :, None], s=(ph, pw), axes=(0, 1))
    return full[c : c + h, c : c + w]


def working_side(kernel_side: int) -> int:
    """Odd inversion grid side at least four times the kernel side."""
    n = 4 * kernel_side
    return n + 1 if n % 2 == 0 else n


def pseudo_inverse_kernel(
    k: Kernel,
    nsr: float = DEFAULT_NSR,
    support: int | None = None,
) -> Kernel:
    """Spatial inverse of a blur kernel via its regularized reciprocal spectrum.

    ``conj(K) / (|K|^2 + nsr)`` is evaluated on a zero-padded grid and
    transformed back; ``nsr = 0`` gives the plain reciprocal.  ``support``
    center-crops the result (default: the whole working grid).
    """
    if k.role is not KernelRole.BLUR:
        raise ParameterError("pseudo-inverse expects a blur kernel")
    if nsr < 0:
        raise ParameterError(f"nsr must be non-negative, got {nsr}")
    n = working_side(k.size)
    if support is None:
        support = n
    if support < 1 or support % 2 == 0:
        raise ParameterError(f"support must be a positive odd integer, got {support}")
    if support > n:
        raise ParameterError(f"support {support} exceeds the working grid {n}")

    padded = center_pad(k.data, n)
    spec = np.fft.fft2(np.fft.ifftshift(padded))
    mag2 = spec.real**2 + spec.imag**2
    if nsr == 0:
        mag = np.sqrt(mag2)
        if mag.min() < 1e-12:
            bin_ = np.unravel_index(np.argmin(mag), mag.shape)
            raise SingularityError(
                f"blur spectrum vanishes at bin {tuple(int(b) for b in bin_)} "
                f"(|K| = {mag[bin_]:.3e}); use nsr > 0"
            )
    inv = np.conj(spec) / (mag2 + nsr)
    taps = np.fft.fftshift(np.fft.ifft2(inv).real)
    if not np.all(np.isfinite(taps)):
        raise SingularityError("inverse kernel has non-finite taps")
    return Kernel(center_crop(taps, support), KernelRole.INVERSE)


def scale_property_check(k: Kernel, s: float, nsr: float = DEFAULT_NSR, lobes: int = 3) -> float:
    """Relative L2 gap between inverting-then-rescaling and rescaling-then-inverting ``k``.

    Both kernels are compared on their common centered support, relative to
    the inverse of the rescaled blur.
    """
    if k.role is not KernelRole.BLUR:
        raise ParameterError("scale property check expects a blur kernel")
    a = pseudo_inverse_kernel(lanczos_rescale(k, s, lobes), nsr).data
    b = lanczos_rescale(pseudo_inverse_kernel(k, nsr), s, lobes).data
    side = min(a.shape[0], b.shape[0])
    a, b = center_crop(a, side), center_crop(b, side)
    return float(np.linalg.norm(a - b) / np.linalg.norm(a))
