"""Command-line entry point: kernel inspection, deblurring, sweeps and the toy network.

Exit codes: 0 ok, 2 usage or parameter error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from collections import defaultdict
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .composition import (
    DEFAULT_SUPPORT,
    DeconvConfig,
    Method,
    WeightMode,
    approximation_accuracy,
    deconvolve,
    sweep_fig1,
)
from .imagekernel import (
    Kernel,
    ParameterError,
    PNMFormatError,
    gaussian_kernel,
    lanczos_rescale,
    read_pnm,
    write_pnm,
)
from .metrics import report
from .nnet.loss import LossWeights
from .nnet.model import SIZE_MULTIPLE, NetConfig, SRR2KACNet, forward_multiscale
from .nnet.tensor import Tensor
from .nnet.train import (
    CheckpointError,
    feature_map_summary,
    load_checkpoint,
    restore,
    save_checkpoint,
    synthetic_pairs,
    to_batch,
    train_toy,
    write_loss_csv,
)
from .spectral import DEFAULT_NSR, fft_convolve, pseudo_inverse_kernel, scale_property_check, working_side

log = logging.getLogger("r2kac")

EXIT_OK, EXIT_PARAM, EXIT_IO = 0, 2, 3

SAVED_SUPPORT = 63
DEFAULT_TARGETS = (1.7, 2.4, 3.5, 4.2, 3.7, 6.5, 6.8, 7.4, 7.5, 8.0)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ------------------------------------------------------------------ config


@dataclass
class RunConfig:
    """One JSON document shared by sweep, train, eval and fmap."""

    # deconvolution
    scale_set: list = field(default_factory=lambda: [1.0, 2.0, 3.0, 4.0, 5.0])
    base_sigma: float = 1.0
    nsr: float = DEFAULT_NSR
    support: int | None = DEFAULT_SUPPORT
    weight_mode: str = "oracle_lsq"
    weights: list | None = None
    lobes: int = 3
    # sweep
    targets: list = field(default_factory=lambda: list(DEFAULT_TARGETS))
    seeds: list = field(default_factory=lambda: list(range(10)))
    image_side: int = 128
    save_images: bool = True
    # network and training
    channels: int = 16
    n_blocks: int = 2
    n_resblocks: int = 2
    n_pairs: int = 8
    side: int = 64
    sigma_range: list = field(default_factory=lambda: [1.0, 3.0])
    steps: int = 500
    batch_size: int = 4
    lr: float = 1e-4
    content_weight: float = 1.0
    frequency_weight: float = 0.2
    seed: int = 0
    out_dir: str | None = None

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ParameterError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**d)
        try:
            cfg.validate()
        except TypeError as exc:
            raise ParameterError(f"bad config value: {exc}") from exc
        return cfg

    def deconv(self) -> DeconvConfig:
        return DeconvConfig(
            scale_set=tuple(self.scale_set),
            base_sigma=self.base_sigma,
            nsr=self.nsr,
            support=self.support,
            weight_mode=WeightMode(self.weight_mode),
            weights=None if self.weights is None else tuple(self.weights),
            lobes=self.lobes,
        )

    def net(self) -> NetConfig:
        return NetConfig(channels=self.channels, n_blocks=self.n_blocks, n_resblocks=self.n_resblocks)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.content_weight, self.frequency_weight)

    def validate(self) -> None:
        try:
            self.deconv()
            self.net()
            self.loss_weights()
        except ValueError as exc:
            raise ParameterError(str(exc)) from exc
        if not self.targets or any(not _positive(t) for t in self.targets):
            raise ParameterError("targets must be a non-empty list of positive scales")
        if not self.seeds or any(not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ParameterError("seeds must be a non-empty list of non-negative integers")
        if self.image_side < 16:
            raise ParameterError("image_side must be >= 16")
        if self.n_pairs < 1 or self.steps < 1 or self.batch_size < 1:
            raise ParameterError("n_pairs, steps and batch_size must be >= 1")
        if self.side < SIZE_MULTIPLE or self.side % SIZE_MULTIPLE:
            raise ParameterError(f"side must be a positive multiple of {SIZE_MULTIPLE}")
        if len(self.sigma_range) != 2 or not 0 < self.sigma_range[0] <= self.sigma_range[1]:
            raise ParameterError("sigma_range must be [lo, hi] with 0 < lo <= hi")
        if not _positive(self.lr):
            raise ParameterError("lr must be positive")


def _positive(x) -> bool:
    return isinstance(x, (int, float)) and math.isfinite(x) and x > 0


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig.from_dict({})
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ParameterError("config must be a JSON object")
    return RunConfig.from_dict(data)


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


def _out_dir(args, cfg: RunConfig, default: str) -> Path:
    return Path(args.out or cfg.out_dir or default)


# ------------------------------------------------------------------ kernel


def _write_kernel(k: Kernel, path: Path) -> dict:
    # map taps affinely to [0, 1]; the sidecar records how to undo it
    lo, hi = float(k.data.min()), float(k.data.max())
    span = hi - lo
    img = (k.data - lo) / span if span > 0 else np.full(k.data.shape, 0.5)
    write_pnm(img, path, depth=16)
    return {"min": lo, "max": hi}


def cmd_kernel(args) -> int:
    if not _positive(args.sigma) or not _positive(args.scale):
        raise ParameterError("sigma and scale must be positive")
    if args.nsr < 0:
        raise ParameterError("nsr must be non-negative")
    blur = gaussian_kernel(args.sigma)
    scaled = lanczos_rescale(blur, args.scale)
    support = args.support
    if support is None:
        # saved kernels default to 63 taps, or the whole grid when it is smaller
        support = SAVED_SUPPORT if SAVED_SUPPORT <= working_side(scaled.size) else None
    inv = pseudo_inverse_kernel(scaled, args.nsr, support)
    err = scale_property_check(blur, args.scale, args.nsr)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_kernel(scaled, out / "blur.pgm")
    meta = _write_kernel(inv, out / "inverse.pgm")
    with open(out / "inverse.json", "w") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")
    _emit(
        {
            "sigma": args.sigma,
            "scale": args.scale,
            "nsr": args.nsr,
            "blur_side": scaled.size,
            "inverse_side": inv.size,
            "scale_check_error": err,
        }
    )
    return EXIT_OK


# ------------------------------------------------------------------ deblur


def single_from_sigma(img: np.ndarray, sigma: float, cfg: DeconvConfig) -> np.ndarray:
    """Deblur with the pseudo-inverse of the declared blur computed directly."""
    blur = gaussian_kernel(sigma)
    support = cfg.support
    if support is not None and support > working_side(blur.size):
        support = None
    return fft_convolve(img, pseudo_inverse_kernel(blur, cfg.nsr, support))


def deblur_image(img, method: Method, cfg: DeconvConfig, sharp=None, blur_sigma: float | None = None) -> np.ndarray:
    if method is Method.SINGLE:
        if blur_sigma is None:
            raise ParameterError("method single needs --blur-sigma")
        return single_from_sigma(img, blur_sigma, cfg)
    return deconvolve(img, cfg, method, sharp).image


def cmd_deblur(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.nsr is not None:
        overrides["nsr"] = args.nsr
    if args.weight_mode is not None:
        overrides["weight_mode"] = args.weight_mode
    if args.support is not None:
        overrides["support"] = args.support or None
    if overrides:
        cfg = RunConfig.from_dict({**cfg.__dict__, **overrides})
    dcfg = cfg.deconv()
    method = Method(args.method)
    if args.blur_sigma is not None and not _positive(args.blur_sigma):
        raise ParameterError("--blur-sigma must be positive")
    if method is not Method.SINGLE and dcfg.weight_mode is WeightMode.ORACLE_LSQ and args.sharp is None:
        raise ParameterError("oracle_lsq weights need --sharp")
    if method is Method.SINGLE and args.blur_sigma is None:
        raise ParameterError("method single needs --blur-sigma")

    img = read_pnm(args.input)
    sharp = read_pnm(args.sharp) if args.sharp else None
    if sharp is not None and sharp.shape != img.shape:
        raise ParameterError(f"sharp image shape {sharp.shape} differs from input {img.shape}")
    out = deblur_image(img, method, dcfg, sharp, args.blur_sigma)
    write_pnm(out, args.out, depth=args.depth)

    rep: dict[str, Any] = {"method": method.value, "output": str(args.out)}
    if sharp is not None:
        rep["accuracy"] = approximation_accuracy(out, sharp)
        rep.update(report(np.clip(out, 0, 1), sharp).to_dict())
    _emit(rep)
    return EXIT_OK


# ------------------------------------------------------------------ sweep


def summary_table(records) -> str:
    acc = defaultdict(list)
    for r in records:
        acc[(r.s_t, r.method)].append(r.accuracy)
    methods = list(Method)
    lines = ["s_t    " + " ".join(f"{m.value:>8}" for m in methods)]
    for s_t in sorted({r.s_t for r in records}):
        row = " ".join(f"{np.mean(acc[(s_t, m)]):8.4f}" for m in methods)
        lines.append(f"{s_t:<6g} {row}")
    return "\n".join(lines)


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.threads < 1:
        raise ParameterError("--threads must be >= 1")
    out = _out_dir(args, cfg, "sweep_out")
    records = sweep_fig1(
        cfg.deconv(),
        cfg.targets,
        cfg.seeds,
        out,
        threads=args.threads,
        image_side=cfg.image_side,
        save_images=cfg.save_images,
    )
    print(summary_table(records))
    return EXIT_OK


# ------------------------------------------------------------------ network


def _pairs(cfg: RunConfig):
    return synthetic_pairs(cfg.n_pairs, cfg.side, cfg.seed, tuple(cfg.sigma_range))


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg, "train_out")
    pairs = _pairs(cfg)
    steps_per_epoch = math.ceil(len(pairs) / cfg.batch_size)
    epochs = math.ceil(cfg.steps / steps_per_epoch)
    res = train_toy(pairs, epochs, lr=cfg.lr, seed=cfg.seed, batch_size=cfg.batch_size, cfg=cfg.net(), lw=cfg.loss_weights())
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(res.net, out / "model.ckpt")
    write_loss_csv(res.history, out / "loss.csv")
    _emit(
        {
            "steps": len(res.history),
            "initial_loss": res.initial_loss,
            "final_loss": res.final_loss,
            "checkpoint": str(out / "model.ckpt"),
        }
    )
    return EXIT_OK


def _eval_pairs(args, cfg: RunConfig):
    if args.input:
        if not args.sharp:
            raise ParameterError("--input needs --sharp for evaluation")
        return [(read_pnm(args.input), read_pnm(args.sharp))]
    return _pairs(cfg)


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    pairs = _eval_pairs(args, cfg)
    net = load_checkpoint(args.checkpoint)
    outs = restore(net, [b for b, _ in pairs])
    for i, ((blurred, sharp), restored) in enumerate(zip(pairs, outs)):
        sharp3 = to_batch([sharp])[0].transpose(1, 2, 0)
        blurred3 = to_batch([blurred])[0].transpose(1, 2, 0)
        rep = report(restored, sharp3).to_dict()
        rep["index"] = i
        rep["input_psnr_db"] = report(blurred3, sharp3).psnr_db
        _emit(rep)
    return EXIT_OK


def cmd_fmap(args) -> int:
    cfg = load_config(args.config)
    net = load_checkpoint(args.checkpoint) if args.checkpoint else SRR2KACNet.init(cfg.net(), seed=cfg.seed)
    img = read_pnm(args.input) if args.input else _pairs(cfg)[0][0]
    dtype = next(iter(net.params.values())).data.dtype
    _, feats = forward_multiscale(net, Tensor(to_batch([img], dtype)), return_all=True)
    out = _out_dir(args, cfg, "fmap_out")
    out.mkdir(parents=True, exist_ok=True)
    for name, f in zip(("quarter", "half", "full"), feats):
        summary, degenerate = feature_map_summary(f)
        path = out / f"fmap_{name}.pgm"
        write_pnm(summary, path)
        _emit({"scale": name, "path": str(path), "degenerate": degenerate, "shape": list(summary.shape[:2])})
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="r2kac", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    k = sub.add_parser("kernel", help="write a blur kernel, its inverse and the scale check")
    k.add_argument("--sigma", type=float, required=True)
    k.add_argument("--scale", type=float, default=1.0)
    k.add_argument("--nsr", type=float, default=DEFAULT_NSR)
    k.add_argument("--support", type=int, default=None, help=f"odd crop side for the inverse (default {SAVED_SUPPORT})")
    k.add_argument("--out", default="kernel_out")
    k.set_defaults(func=cmd_kernel)

    d = sub.add_parser("deblur", help="restore one PNM image")
    d.add_argument("--input", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--method", required=True, choices=[m.value for m in Method])
    d.add_argument("--sharp")
    d.add_argument("--blur-sigma", type=float, help="declared Gaussian blur for method single")
    d.add_argument("--config")
    d.add_argument("--nsr", type=float)
    d.add_argument("--support", type=int, help="odd crop side; 0 for the full grid")
    d.add_argument("--weight-mode", choices=[m.value for m in WeightMode])
    d.add_argument("--depth", type=int, choices=(8, 16), default=16)
    d.set_defaults(func=cmd_deblur)

    s = sub.add_parser("sweep", help="synthetic-blur accuracy sweep over methods and scales")
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("train", help="train the toy network on synthetic pairs")
    t.add_argument("--config")
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="report metrics of a trained checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config")
    e.add_argument("--input")
    e.add_argument("--sharp")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("fmap", help="write channel-summed feature maps per scale")
    f.add_argument("--checkpoint")
    f.add_argument("--config")
    f.add_argument("--input")
    f.add_argument("--out")
    f.set_defaults(func=cmd_fmap)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"r2kac: error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (PNMFormatError, CheckpointError, OSError) as exc:
        print(f"r2kac: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ParameterError, ValueError, ArithmeticError) as exc:
        print(f"r2kac: error: {exc}", file=sys.stderr)
        return EXIT_PARAM


if __name__ == "__main__":
    sys.exit(main())
