"""Toy SR-R2KAC network: R2KAC blocks, gated scale-recurrent fusion and the
three-scale coarse-to-fine forward pass.

Parameters live in one flat ``{name: Tensor}`` dict.  Every scale pass looks
its weights up in that dict, so all passes share storage by construction, and
each R2KAC block holds a single shared atrous kernel for all dilation rates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..imagekernel import ParameterError
from . import tensor as T
from .tensor import Tensor

DILATIONS = (1, 2, 3, 4, 5)
ATROUS_K = 5
FUSE_K = 3


@dataclass
class NetConfig:
    channels: int = 16
    n_blocks: int = 2
    dilations: tuple[int, ...] = DILATIONS
    n_resblocks: int = 2
    residual: bool = True
    zero_final: bool = True
    block_skip: bool = False
    input_skip: bool = False

    def __post_init__(self):
        self.dilations = tuple(int(d) for d in self.dilations)
        if self.channels < 1 or self.n_blocks < 1 or not self.dilations:
            raise ParameterError("channels, n_blocks and dilations must be positive/non-empty")


@dataclass
class SharedAtrousConv:
    weight: Tensor
    bias: Tensor
    dilations: tuple[int, ...]

    def __post_init__(self):
        k = self.weight.shape[2]
        if k % 2 == 0:
            raise ParameterError("atrous kernel side must be odd")


@dataclass
class R2KACBlock:
    shared: SharedAtrousConv
    fuse_w: Tensor
    fuse_b: Tensor
    residual: bool = True

    def __post_init__(self):
        c = self.shared.weight.shape[0]
        if self.fuse_w.shape[1] != c * len(self.shared.dilations):
            raise ParameterError("fuse input channels must equal N*C")

    @property
    def n_stages(self) -> int:
        return len(self.shared.dilations)


def r2kac_block_fwd(F1: Tensor, blk: R2KACBlock, return_stages: bool = False):
    """Recursive shared-kernel atrous stages fused by a 3x3 convolution.

    ``Y_1 = relu(conv(F1, s_1))`` and ``Y_i = relu(conv(Y_{i-1}, s_i) + Y_{i-1})``;
    the block returns ``fuse(concat(Y_1..Y_N))``.  With ``residual=False`` the
    identity shortcut is dropped (the RKAC variant).
    """
    c = blk.shared.weight.shape[0]
    if F1.shape[1] != c:
        raise ParameterError(f"block expects {c} channels, got {F1.shape[1]}")
    w, b = blk.shared.weight, blk.shared.bias
    stages = []
    prev = None
    for i, rate in enumerate(blk.shared.dilations):
        if i == 0:
            y = T.relu(T.conv2d(F1, w, b, dilation=rate))
        else:
            z = T.conv2d(prev, w, b, dilation=rate)
            y = T.relu(T.add(z, prev) if blk.residual else z)
        stages.append(y)
        prev = y
    out = T.conv2d(T.concat(stages), blk.fuse_w, blk.fuse_b)
    return (out, stages) if return_stages else out


def srm_step(coarse_feat: Tensor, fine_feat: Tensor, gate_w: Tensor, gate_b: Tensor) -> Tensor:
    """Fuse coarse features into the next finer scale with a learned gate.

    ``g = sigmoid(conv1x1(concat(up(coarse), fine)))``, output
    ``g*fine + (1-g)*up(coarse)``.
    """
    n, c, h, w = fine_feat.shape
    if coarse_feat.shape != (n, c, h // 2, w // 2) or h % 2 or w % 2:
        raise ParameterError(
            f"coarse features {coarse_feat.shape} must be half the size of fine features {fine_feat.shape}"
        )
    up = T.upsample2x(coarse_feat)
    g = T.sigmoid(T.conv2d(T.concat([up, fine_feat]), gate_w, gate_b))
    return T.add(up, T.mul(g, T.sub(fine_feat, up)))


def _he_uniform(rng: np.random.Generator, shape: tuple[int, ...], dtype) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass
class SRR2KACNet:
    cfg: NetConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def init(cls, cfg: NetConfig | None = None, seed: int = 0, dtype=np.float64) -> "SRR2KACNet":
        """He-uniform weights and zero biases from a seeded generator.

        Shapes are enumerated in sorted name order so initialization does not
        depend on construction order.
        """
        cfg = cfg or NetConfig()
        rng = np.random.default_rng(seed)
        shapes = param_shapes(cfg)
        params = {}
        for name in sorted(shapes):
            shape = shapes[name]
            if name.endswith(".b"):
                data = np.zeros(shape, dtype=dtype)
            elif name == "recon.out.w" and cfg.zero_final:
                data = np.zeros(shape, dtype=dtype)
            elif name == "srm.gate.w":
                data = np.zeros(shape, dtype=dtype)
            else:
                data = _he_uniform(rng, shape, dtype)
            params[name] = Tensor(data, requires_grad=True, name=name)
        return cls(cfg, params)

    # ---------------------------------------------------------- pieces
    def p(self, name: str) -> Tensor:
        return self.params[name]

    def block(self, i: int) -> R2KACBlock:
        pre = f"r2k{i}"
        shared = SharedAtrousConv(self.p(f"{pre}.atrous.w"), self.p(f"{pre}.atrous.b"), self.cfg.dilations)
        return R2KACBlock(shared, self.p(f"{pre}.fuse.w"), self.p(f"{pre}.fuse.b"), self.cfg.residual)

    def _conv(self, x: Tensor, name: str, stride: int = 1, act: bool = True) -> Tensor:
        y = T.conv2d(x, self.p(f"{name}.w"), self.p(f"{name}.b"), stride=stride, padding=1 if stride > 1 else None)
        return T.relu(y) if act else y

    def _resblock(self, x: Tensor, name: str) -> Tensor:
        h = self._conv(x, f"{name}.c1")
        return T.add(x, self._conv(h, f"{name}.c2", act=False))

    def extract(self, img: Tensor) -> tuple[Tensor, list[Tensor]]:
        f0 = self._conv(img, "extract.in")
        f1 = self._conv(f0, "extract.down1", stride=2)
        f2 = self._conv(f1, "extract.down2", stride=2)
        for r in range(self.cfg.n_resblocks):
            f2 = self._resblock(f2, f"extract.res{r}")
        return f2, [f0, f1]

    def deblur_features(self, feat: Tensor) -> Tensor:
        for i in range(self.cfg.n_blocks):
            out = r2kac_block_fwd(feat, self.block(i))
            feat = T.add(feat, out) if self.cfg.block_skip else out
        return feat

    def reconstruct(self, feat: Tensor, skips: list[Tensor], img: Tensor) -> Tensor:
        f0, f1 = skips
        x = feat
        for r in range(self.cfg.n_resblocks):
            x = self._resblock(x, f"recon.res{r}")
        x = T.add(self._conv(T.upsample2x(x), "recon.up1"), f1)
        x = T.add(self._conv(T.upsample2x(x), "recon.up2"), f0)
        if self.cfg.input_skip:
            x = T.concat([x, img])
        return T.sigmoid(self._conv(x, "recon.out", act=False))

    def forward(self, x, return_all: bool = False):
        return forward_multiscale(self, x, return_all)

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def n_params(self) -> int:
        return sum(t.data.size for t in self.params.values())


def param_shapes(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
    c = cfg.channels
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, cin, cout, k):
        shapes[f"{name}.w"] = (cout, cin, k, k)
        shapes[f"{name}.b"] = (cout,)

    conv("extract.in", 3, c, 3)
    conv("extract.down1", c, c, 3)
    conv("extract.down2", c, c, 3)
    for r in range(cfg.n_resblocks):
        conv(f"extract.res{r}.c1", c, c, 3)
        conv(f"extract.res{r}.c2", c, c, 3)
        conv(f"recon.res{r}.c1", c, c, 3)
        conv(f"recon.res{r}.c2", c, c, 3)
    for i in range(cfg.n_blocks):
        conv(f"r2k{i}.atrous", c, c, ATROUS_K)
        conv(f"r2k{i}.fuse", c * len(cfg.dilations), c, FUSE_K)
    conv("srm.gate", 2 * c, c, 1)
    conv("recon.up1", c, c, 3)
    conv("recon.up2", c, c, 3)
    conv("recon.out", c + 3 if cfg.input_skip else c, 3, 3)
    return shapes


# Input images go through two x2 pyramid levels and then two stride-2 encoder
# stages, so the coarsest features are 1/16 of the input side.
SIZE_MULTIPLE = 16


def forward_multiscale(net: SRR2KACNet, x, return_all: bool = False):
    """Restore a (N, 3, H, W) batch coarse-to-fine over 1/4, 1/2 and full resolution.

    Each pass extracts features, fuses in the previous pass's deblurred
    features via :func:`srm_step`, and runs the stacked R2KAC blocks; the
    full-resolution pass is decoded to the restored image.  With
    ``return_all`` the per-scale deblurred features are returned as well.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim != 4 or x.shape[1] != 3:
        raise ParameterError(f"expected an (N, 3, H, W) batch, got {x.shape}")
    h, w = x.shape[2:]
    if h % SIZE_MULTIPLE or w % SIZE_MULTIPLE:
        raise ParameterError(f"height and width must be divisible by {SIZE_MULTIPLE}, got {h}x{w}")

    x2 = T.avgpool2x(x)
    x4 = T.avgpool2x(x2)
    gate_w, gate_b = net.p("srm.gate.w"), net.p("srm.gate.b")

    feats = []
    prev = None
    skips = None
    for img in (x4, x2, x):
        f, skips = net.extract(img)
        if prev is not None:
            f = srm_step(prev, f, gate_w, gate_b)
        prev = net.deblur_features(f)
        feats.append(prev)
    out = net.reconstruct(prev, skips, x)
    return (out, feats) if return_all else out
