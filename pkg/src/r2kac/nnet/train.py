"""Toy training loop, synthetic pairs, checkpoints and feature-map summaries."""

from __future__ import annotations

import io
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..imagekernel import ParameterError, as_image, gaussian_kernel, synth_image
from ..spectral import fft_convolve
from .loss import LossWeights, loss_total
from .model import NetConfig, SRR2KACNet, forward_multiscale, param_shapes
from .optim import AdamState, adam_step
from .tensor import Tensor

log = logging.getLogger(__name__)

CKPT_MAGIC = b"R2KC"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def to_batch(images: Sequence[np.ndarray], dtype=np.float64) -> np.ndarray:
    """Stack (H, W, C) images into an (N, 3, H, W) array; grayscale is replicated."""
    out = []
    for img in images:
        a = as_image(img)
        if a.shape[2] == 1:
            a = np.repeat(a, 3, axis=2)
        out.append(a.transpose(2, 0, 1))
    return np.stack(out).astype(dtype)


def from_batch(x: np.ndarray) -> list[np.ndarray]:
    return [np.ascontiguousarray(img.transpose(1, 2, 0)) for img in np.asarray(x)]


def synthetic_pairs(
    n: int = 8,
    side: int = 64,
    seed: int = 0,
    sigma_range: tuple[float, float] = (1.0, 3.0),
) -> list[tuple[np.ndarray, np.ndarray]]:
    """(blurred, sharp) RGB pairs with a random Gaussian blur per image.

    Sharp images cycle through checkerboard, bars and smooth-noise content;
    blur is circular.
    """
    rng = np.random.default_rng(seed)
    kinds = ("checkerboard", "bars", "smooth_noise")
    pairs = []
    for i in range(n):
        kind = kinds[i % len(kinds)]
        cell = int(rng.integers(4, 13))
        sharp = synth_image(kind, side, side, seed=int(rng.integers(2**31)), channels=3, cell=cell)
        if kind != "smooth_noise":
            # tint binary patterns so the channels differ
            tint = rng.uniform(0.2, 1.0, size=3)
            base = rng.uniform(0.0, 0.2, size=3)
            sharp = base + sharp * (tint - base)
        sigma = float(rng.uniform(*sigma_range))
        blurred = fft_convolve(sharp, gaussian_kernel(sigma))
        pairs.append((blurred, sharp))
    return pairs


@dataclass
class TrainResult:
    net: SRR2KACNet
    losses: list[float]
    initial_loss: float
    final_loss: float
    history: list[float] = field(default_factory=list)


def evaluate_loss(net: SRR2KACNet, blurred: np.ndarray, sharp: np.ndarray, lw: LossWeights) -> float:
    out = forward_multiscale(net, Tensor(blurred))
    return loss_total(out.data, sharp, lw)[0]


def train_toy(
    pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    epochs: int,
    lr: float = 1e-4,
    seed: int = 0,
    batch_size: int = 4,
    cfg: NetConfig | None = None,
    lw: LossWeights = LossWeights(),
    dtype=np.float64,
    net: SRR2KACNet | None = None,
) -> TrainResult:
    """Train with Adam on ``pairs`` and return the net plus per-epoch mean loss.

    Batch order is a seeded permutation per epoch, so runs are reproducible.
    ``initial_loss``/``final_loss`` are full-set losses before and after
    training.  ``history`` holds the per-step batch loss.
    """
    if not pairs:
        raise ParameterError("need at least one training pair")
    if epochs < 0 or batch_size < 1:
        raise ParameterError("epochs must be >= 0 and batch_size >= 1")
    blurred = to_batch([b for b, _ in pairs], dtype)
    sharp = to_batch([s for _, s in pairs], dtype)
    net = net or SRR2KACNet.init(cfg, seed=seed, dtype=dtype)
    rng = np.random.default_rng(seed + 1)
    state = AdamState(lr=lr)

    initial = evaluate_loss(net, blurred, sharp, lw)
    losses, history = [], []
    n = len(pairs)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            net.zero_grad()
            out = forward_multiscale(net, Tensor(blurred[idx]))
            value, grad, _ = loss_total(out.data, sharp[idx], lw)
            out.backward(grad)
            adam_step(net.params, {k: t.grad for k, t in net.params.items()}, state)
            total += value * len(idx)
            history.append(value)
        losses.append(total / n)
        log.debug("epoch %d loss %.6f", epoch, losses[-1])
    final = evaluate_loss(net, blurred, sharp, lw)
    return TrainResult(net, losses, initial, final, history)


def restore(net: SRR2KACNet, images: Sequence[np.ndarray]) -> list[np.ndarray]:
    dtype = next(iter(net.params.values())).data.dtype
    out = forward_multiscale(net, Tensor(to_batch(images, dtype)))
    return from_batch(out.data)


# ------------------------------------------------------------ checkpoints


def encode_checkpoint(net: SRR2KACNet) -> bytes:
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", CKPT_VERSION))
    for name in sorted(net.params):
        arr = np.ascontiguousarray(net.params[name].data, dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def decode_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != CKPT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    if len(data) < 8:
        raise CheckpointError("truncated checkpoint header")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 8
    out: dict[str, np.ndarray] = {}
    try:
        while pos < len(data):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            if pos + 8 * count > len(data):
                raise CheckpointError(f"truncated payload for {name!r}")
            out[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
            pos += 8 * count
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint at byte {pos}") from exc
    return out


def save_checkpoint(net: SRR2KACNet, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(net))


def load_checkpoint(path: str | os.PathLike, cfg: NetConfig | None = None) -> SRR2KACNet:
    with open(path, "rb") as fh:
        arrays = decode_checkpoint(fh.read())
    if cfg is None:
        if "extract.in.w" not in arrays:
            raise CheckpointError("checkpoint lacks extract.in.w")
        n_blocks = sum(1 for k in arrays if k.startswith("r2k") and k.endswith(".atrous.w"))
        n_res = sum(1 for k in arrays if k.startswith("extract.res") and k.endswith(".c1.w"))
        c = arrays["extract.in.w"].shape[0]
        n_dil = arrays["r2k0.fuse.w"].shape[1] // c
        cfg = NetConfig(channels=c, n_blocks=n_blocks, n_resblocks=n_res, dilations=tuple(range(1, n_dil + 1)))
    expected = param_shapes(cfg)
    if set(expected) != set(arrays):
        raise CheckpointError("checkpoint parameter names do not match the network layout")
    params = {}
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise CheckpointError(f"{name}: shape {arrays[name].shape} != {shape}")
        params[name] = Tensor(arrays[name], requires_grad=True, name=name)
    return SRR2KACNet(cfg, params)


def write_loss_csv(losses: Sequence[float], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("step,loss\n")
        for i, v in enumerate(losses):
            fh.write(f"{i},{v:.9g}\n")


# ------------------------------------------------------------ feature maps


def feature_map_summary(t) -> tuple[np.ndarray, bool]:
    """Channel-summed feature map affinely mapped to [0, 1].

    Returns ``(image, degenerate)``; a constant map comes back as all 0.5
    with ``degenerate=True``.
    """
    a = t.data if isinstance(t, Tensor) else np.asarray(t)
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise ParameterError("feature map summary expects a single-item batch")
        a = a[0]
    if a.ndim != 3:
        raise ParameterError(f"expected (C, H, W) or (1, C, H, W), got {a.shape}")
    s = a.sum(axis=0)
    lo, hi = s.min(), s.max()
    if not hi - lo > 1e-12 * max(1.0, abs(hi)):
        return np.full(s.shape + (1,), 0.5), True
    return ((s - lo) / (hi - lo))[:, :, None], False
