"""Blur kernels, kernel rescaling, synthetic test images and PNM I/O.

Images are plain float64 numpy arrays shaped ``(H, W, C)`` with ``C`` in
{1, 3} and nominal range [0, 1].  Kernels carry a role because blur kernels
and inverse kernels are normalized differently when rescaled.
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass

import numpy as np


class ParameterError(ValueError):
    """An argument violates an operation's precondition."""


class PNMFormatError(ValueError):
    """Malformed or truncated portable-map file."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class KernelRole(enum.Enum):
    BLUR = "blur"
    INVERSE = "inverse"


@dataclass(frozen=True, eq=False)
class Kernel:
    data: np.ndarray
    role: KernelRole = KernelRole.BLUR

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise ParameterError(f"kernel must be square, got shape {data.shape}")
        if data.shape[0] % 2 == 0:
            raise ParameterError(f"kernel side must be odd, got {data.shape[0]}")
        if not np.all(np.isfinite(data)):
            raise ParameterError("kernel taps must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def size(self) -> int:
        return self.data.shape[0]

    @property
    def center(self) -> int:
        return self.size // 2

    @classmethod
    def delta(cls, size: int = 1, role: KernelRole = KernelRole.BLUR) -> "Kernel":
        d = np.zeros((size, size))
        d[size // 2, size // 2] = 1.0
        return cls(d, role)


def as_image(img) -> np.ndarray:
    """Coerce to a float64 ``(H, W, C)`` array and check the grid invariants."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ParameterError(f"image must be (H, W) or (H, W, 1|3), got {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ParameterError("image dimensions must be >= 1")
    if not np.all(np.isfinite(a)):
        raise ParameterError("image values must be finite")
    return a


def gaussian_kernel(sigma: float, truncation: float = 4.0) -> Kernel:
    """Sampled isotropic Gaussian of side ``2*ceil(truncation*sigma) + 1``, summing to 1."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if not truncation > 0:
        raise ParameterError(f"truncation must be positive, got {truncation}")
    r = int(math.ceil(truncation * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    g1 = np.exp(-(x**2) / (2.0 * sigma**2))
    k = np.outer(g1, g1)
    return Kernel(k / k.sum(), KernelRole.BLUR)


def disc_kernel(radius: float, oversample: int = 16) -> Kernel:
    """Uniform disc with an area-sampled rim, summing to 1."""
    if not radius > 0:
        raise ParameterError(f"radius must be positive, got {radius}")
    r = max(0, int(math.ceil(radius - 0.5)))
    side = 2 * r + 1
    # subpixel sample centers inside each pixel
    sub = (np.arange(oversample) + 0.5) / oversample - 0.5
    px = np.arange(-r, r + 1, dtype=np.float64)
    coords = (px[:, None] + sub[None, :]).ravel()
    inside = (coords[:, None] ** 2 + coords[None, :] ** 2) <= radius**2
    cover = inside.reshape(side, oversample, side, oversample).mean(axis=(1, 3))
    if cover.sum() == 0:
        # disc smaller than the sampling pitch
        cover[r, r] = 1.0
    return Kernel(cover / cover.sum(), KernelRole.BLUR)


def _lanczos(t: np.ndarray, lobes: int) -> np.ndarray:
    out = np.sinc(t) * np.sinc(t / lobes)
    out[np.abs(t) >= lobes] = 0.0
    return out


def _resample_matrix(n_in: int, n_out: int, s: float, lobes: int) -> np.ndarray:
    # rows: output taps; columns: input taps; both indexed about their centers
    c_in, c_out = n_in // 2, n_out // 2
    x = np.arange(n_in) - c_in
    u = np.arange(n_out) - c_out
    return _lanczos(x[None, :] - u[:, None] / s, lobes)


def lanczos_rescale(k: Kernel, s: float, lobes: int = 3) -> Kernel:
    """Resample ``k`` about its center by factor ``s`` with a Lanczos window.

    The output side is ``round(s * size)``, bumped up to the next odd number.
    Blur kernels are renormalized to sum 1; inverse kernels are divided by
    ``s**2`` so their DC gain is preserved.
    """
    if not s > 0:
        raise ParameterError(f"scale must be positive, got {s}")
    if lobes < 2:
        raise ParameterError(f"lobes must be >= 2, got {lobes}")
    n_out = int(round(s * k.size))
    if n_out < 1:
        raise ParameterError(f"scale {s} leaves no taps for a kernel of side {k.size}")
    if n_out % 2 == 0:
        n_out += 1
    m = _resample_matrix(k.size, n_out, s, lobes)
    out = m @ k.data @ m.T
    if k.role is KernelRole.BLUR:
        total = out.sum()
        if total == 0:
            raise ParameterError("rescaled blur kernel has zero mass")
        out = out / total
    else:
        out = out / (s * s)
    return Kernel(out, k.role)


def center_pad(a: np.ndarray, side: int) -> np.ndarray:
    """Zero-pad a square odd array about its center to ``side``."""
    n = a.shape[0]
    if side < n:
        raise ParameterError(f"cannot pad side {n} down to {side}")
    off = (side - n) // 2
    out = np.zeros((side, side), dtype=a.dtype)
    out[off : off + n, off : off + n] = a
    return out


def center_crop(a: np.ndarray, side: int) -> np.ndarray:
    n = a.shape[0]
    if side > n:
        raise ParameterError(f"cannot crop side {n} up to {side}")
    off = (n - side) // 2
    return a[off : off + side, off : off + side]


SYNTH_KINDS = ("checkerboard", "smooth_noise", "impulse", "bars")


def synth_image(
    kind: str,
    height: int,
    width: int,
    seed: int = 0,
    channels: int = 1,
    cell: int = 8,
) -> np.ndarray:
    """Deterministic synthetic test image in [0, 1].

    ``smooth_noise`` is uniform noise passed through an ideal low-pass at
    1/8 of the Nyquist radius, then stretched to span [0, 1].  Each channel
    draws its own noise field.
    """
    if kind not in SYNTH_KINDS:
        raise ParameterError(f"unknown image kind {kind!r}; expected one of {SYNTH_KINDS}")
    if height < 16 or width < 16:
        raise ParameterError("synthetic images need height and width >= 16")
    if channels not in (1, 3):
        raise ParameterError("channels must be 1 or 3")

    if kind == "impulse":
        img = np.zeros((height, width))
        img[height // 2, width // 2] = 1.0
        planes = [img] * channels
    elif kind == "checkerboard":
        yy, xx = np.indices((height, width))
        img = (((yy // cell) + (xx // cell)) % 2).astype(np.float64)
        planes = [img] * channels
    elif kind == "bars":
        xx = np.indices((height, width))[1]
        img = ((xx // cell) % 2).astype(np.float64)
        planes = [img] * channels
    else:
        rng = np.random.default_rng(seed)
        fy = np.fft.fftfreq(height)[:, None]
        fx = np.fft.fftfreq(width)[None, :]
        mask = np.hypot(fy, fx) <= 0.5 / 8
        planes = []
        for _ in range(channels):
            noise = rng.uniform(0.0, 1.0, size=(height, width))
            smooth = np.fft.ifft2(np.fft.fft2(noise) * mask).real
            lo, hi = smooth.min(), smooth.max()
            planes.append((smooth - lo) / (hi - lo) if hi > lo else np.full_like(smooth, 0.5))
    return np.stack(planes, axis=-1)


# ---------------------------------------------------------------- PNM I/O

_WHITESPACE = b" \t\r\n\v\f"


def _header_tokens(buf: bytes, pos: int, count: int) -> tuple[list[tuple[bytes, int]], int]:
    tokens: list[tuple[bytes, int]] = []
    while len(tokens) < count:
        if pos >= len(buf):
            raise PNMFormatError("unexpected end of header", pos)
        c = buf[pos : pos + 1]
        if c in _WHITESPACE and c:
            pos += 1
        elif c == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            start = pos
            while pos < len(buf) and buf[pos : pos + 1] not in _WHITESPACE and buf[pos : pos + 1] != b"#":
                pos += 1
            tokens.append((buf[start:pos], start))
    # exactly one whitespace byte separates maxval from the raster
    if pos >= len(buf) or buf[pos : pos + 1] not in _WHITESPACE:
        raise PNMFormatError("missing whitespace after maxval", pos)
    return tokens, pos + 1


def parse_pnm(buf: bytes) -> np.ndarray:
    if len(buf) < 2 or buf[:1] != b"P":
        raise PNMFormatError("missing P magic", 0)
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise PNMFormatError(f"unsupported magic {magic!r}", 0)
    channels = 1 if magic == b"P5" else 3
    tokens, data_start = _header_tokens(buf, 2, 3)
    values = []
    for tok, off in tokens:
        if not tok.isdigit():
            raise PNMFormatError(f"expected decimal integer, got {tok!r}", off)
        values.append(int(tok))
    width, height, maxval = values
    if width < 1 or height < 1:
        raise PNMFormatError("width and height must be >= 1", tokens[0][1])
    if not 1 <= maxval <= 65535:
        raise PNMFormatError(f"maxval {maxval} outside 1..65535", tokens[2][1])
    bytes_per = 1 if maxval < 256 else 2
    need = width * height * channels * bytes_per
    payload = buf[data_start : data_start + need]
    if len(payload) < need:
        raise PNMFormatError(f"truncated raster: need {need} bytes, have {len(payload)}", len(buf))
    dtype = np.uint8 if bytes_per == 1 else np.dtype(">u2")
    raw = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    return raw.reshape(height, width, channels) / maxval


def read_pnm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_pnm(fh.read())


def encode_pnm(img, depth: int = 8) -> bytes:
    if depth not in (8, 16):
        raise ParameterError(f"depth must be 8 or 16, got {depth}")
    a = as_image(img)
    h, w, c = a.shape
    maxval = 255 if depth == 8 else 65535
    # round half up
    q = np.floor(np.clip(a, 0.0, 1.0) * maxval + 0.5)
    raw = q.astype(np.uint8 if depth == 8 else ">u2").tobytes()
    magic = b"P5" if c == 1 else b"P6"
    return magic + f"\n{w} {h}\n{maxval}\n".encode("ascii") + raw


def write_pnm(img, path: str | os.PathLike, depth: int = 8) -> None:
    data = encode_pnm(img, depth)
    with open(path, "wb") as fh:
        fh.write(data)
