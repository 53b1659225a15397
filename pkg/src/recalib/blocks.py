"""Channel re-calibration block zoo.

Every block maps a feature tensor (N,C,H,W) to a re-calibrated tensor of
the same shape plus the re-calibration weights it produced: a vector
p in (0,1)^C per sample for channel-wise kinds, or a full (N,C,H,W) weight
map for the fine-grained kinds.

Kinds (stable names used in configs and CLI flags):

  AB                GAP -> 1x1 depthwise conv -> BN -> sigmoid -> scale
  AB_PLUS           GAP -> full CxC transform -> BN -> sigmoid -> scale
  SE                GAP -> FC(C->C/r) -> ReLU -> FC(C/r->C) -> sigmoid
  ONLY_GAP          sigmoid(GAP)                               (design E)
  GAP_BN            sigmoid(BN(GAP))                           (design F)
  GLOBAL_DW_WAVG    learned per-channel spatial average        (design G)
  GLOBAL_WAVG       learned full map of all points to C        (design H)
  FINE_CONV         kxk conv -> sigmoid, pointwise scale       (designs I/K)
  FINE_DWCONV       kxk depthwise -> sigmoid, pointwise scale  (designs J/L)
  COMBINED_GAP      fine 7x7 DW recalibration, then GAP gate   (design M)
  COMBINED_AB       7x7 DW conv -> GAP -> AB tail              (design N)
  COMBINED_AB_PLUS  7x7 DW conv -> GAP -> AB_PLUS tail         (design O)
  GROUPED           GAP -> grouped 1x1 conv -> BN -> sigmoid

GROUPED with G=C computes the same family as AB, with G=1 the same as
AB_PLUS.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .engine import BatchNorm, Conv2d, DepthwiseConv2d, Linear, Module, ops
from .engine.tensor import Parameter, Tensor

KINDS = (
    "AB",
    "AB_PLUS",
    "SE",
    "ONLY_GAP",
    "GAP_BN",
    "GLOBAL_DW_WAVG",
    "GLOBAL_WAVG",
    "FINE_CONV",
    "FINE_DWCONV",
    "COMBINED_GAP",
    "COMBINED_AB",
    "COMBINED_AB_PLUS",
    "GROUPED",
)

# channel-wise kinds emit p of shape (N,C); fine kinds a map (N,C,H,W)
FINE_KINDS = ("FINE_CONV", "FINE_DWCONV")
# kinds whose parameters or contract are bound to one spatial size
SPATIAL_KINDS = FINE_KINDS + (
    "GLOBAL_DW_WAVG",
    "GLOBAL_WAVG",
    "COMBINED_GAP",
    "COMBINED_AB",
    "COMBINED_AB_PLUS",
)
_BN_DEFAULT_ON = ("AB", "AB_PLUS", "GROUPED", "COMBINED_AB", "COMBINED_AB_PLUS", "GAP_BN")

# single-letter aliases following the ablation design lettering
DESIGN_ALIASES = {
    "A": ("SE", {}),
    "C": ("AB_PLUS", {}),
    "D": ("AB", {}),
    "E": ("ONLY_GAP", {}),
    "F": ("GAP_BN", {}),
    "G": ("GLOBAL_DW_WAVG", {}),
    "H": ("GLOBAL_WAVG", {}),
    "I": ("FINE_CONV", {"k": 3}),
    "J": ("FINE_DWCONV", {"k": 3}),
    "K": ("FINE_CONV", {"k": 7}),
    "L": ("FINE_DWCONV", {"k": 7}),
    "M": ("COMBINED_GAP", {}),
    "N": ("COMBINED_AB", {}),
    "O": ("COMBINED_AB_PLUS", {}),
}


class BlockError(ValueError):
    pass


def parse_kind(text: str) -> tuple[str, dict]:
    """Resolve a kind name or single-letter design alias (case-insensitive)."""
    s = text.strip().upper().replace("-", "_")
    if s in KINDS:
        return s, {}
    if s in DESIGN_ALIASES:
        return DESIGN_ALIASES[s]
    raise BlockError(f"unknown block kind {text!r}; valid: {', '.join(KINDS)} or designs A-O")


@dataclass(frozen=True)
class BlockSpec:
    """Declarative description of one re-calibration block variant.

    channels may be left as None for a template that is bound per insertion
    point; every constraint that involves C is then re-checked at binding.
    """

    kind: str
    channels: int | None = None
    r: int = 16
    groups: int = 1
    k: int = 7
    use_bn: bool | None = None
    se_relu: bool = True
    dw_init: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise BlockError(f"unknown block kind {self.kind!r}")
        if self.channels is not None and self.channels < 1:
            raise BlockError(f"channels must be positive, got {self.channels}")
        if self.kind == "SE":
            if self.r < 1:
                raise BlockError(f"reduction r must be positive, got {self.r}")
            if self.channels is not None and self.channels % self.r:
                raise BlockError(
                    f"SE requires channels divisible by r: C={self.channels}, r={self.r}"
                )
        if self.kind == "GROUPED":
            if self.groups < 1:
                raise BlockError(f"groups must be positive, got {self.groups}")
            if self.channels is not None:
                if self.groups > self.channels or self.channels % self.groups:
                    raise BlockError(
                        f"GROUPED requires 1 <= G <= C with C divisible by G: "
                        f"C={self.channels}, G={self.groups}"
                    )
        if self.kind in SPATIAL_KINDS and self.kind not in ("GLOBAL_DW_WAVG", "GLOBAL_WAVG"):
            if self.k % 2 == 0 or self.k not in (3, 7, 9):
                raise BlockError(f"kernel size must be odd, one of 3/7/9, got {self.k}")

    @property
    def bn_enabled(self) -> bool:
        if self.kind == "GAP_BN":
            return True
        if self.use_bn is None:
            return self.kind in _BN_DEFAULT_ON
        return self.use_bn

    def bound(self, channels: int) -> "BlockSpec":
        """Bind the template to a concrete channel count (re-validates)."""
        if self.channels is not None and self.channels != channels:
            raise BlockError(
                f"block is specified for C={self.channels} but the insertion "
                f"point has {channels} channels"
            )
        return replace(self, channels=channels)


def _as_tensor_mask(mask: np.ndarray, dtype, fine: bool) -> Tensor:
    m = mask.astype(dtype)
    shape = (1, m.size, 1, 1) if fine else (1, m.size)
    return Tensor(np.broadcast_to(m.reshape(shape), shape).copy())


class RecalibBlock(Module):
    """Base class: holds the spec, an optional channel mask used by the
    zero-out relevance experiments, and the shared scale plumbing."""

    fine = False

    def __init__(self, spec: BlockSpec, h: int | None = None, w: int | None = None):
        super().__init__()
        if spec.channels is None:
            raise BlockError("cannot materialize an unbound block template")
        self.spec = spec
        self.channels = spec.channels
        self.expected_hw = (h, w)
        self.channel_mask: np.ndarray | None = None

    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 4:
            raise BlockError(f"block input must be (N,C,H,W), got {x.shape}")
        if x.shape[1] != self.channels:
            raise BlockError(
                f"block expects C={self.channels} channels, input has {x.shape[1]}"
            )
        if self.spec.kind in SPATIAL_KINDS:
            h, w = self.expected_hw
            if h is not None and (x.shape[2] != h or x.shape[3] != w):
                raise BlockError(
                    f"{self.spec.kind} block is bound to spatial size {h}x{w}, "
                    f"input is {x.shape[2]}x{x.shape[3]}"
                )

    def _mask_p(self, p: Tensor) -> Tensor:
        if self.channel_mask is None:
            return p
        m = _as_tensor_mask(self.channel_mask, p.dtype, fine=p.ndim == 4)
        if p.ndim == 4:
            n, c, h, w = p.shape
            mt = Tensor(np.broadcast_to(m.data.reshape(1, c, 1, 1), p.shape).copy())
        else:
            mt = Tensor(np.broadcast_to(m.data.reshape(1, p.shape[1]), p.shape).copy())
        return ops.mul(p, mt)

    def forward(self, x: Tensor):
        raise NotImplementedError


def _gap2d(x: Tensor) -> Tensor:
    return ops.global_avg_pool(x)


class ABBlock(RecalibBlock):
    """GAP -> 1x1 depthwise conv (one weight per channel) -> BN -> sigmoid."""

    def __init__(self, spec, rng, dtype=np.float32, h=None, w=None):
        super().__init__(spec, h, w)
        c = self.channels
        init = np.full((c, 1, 1, 1), spec.dw_init, dtype=dtype)
        self.dw = DepthwiseConv2d(c, 1, dtype=dtype, init="kaiming", rng=rng)
        self.dw.weight = Parameter(init, role="conv-weight", decay=False)
        self.bn = BatchNorm(c, dtype=dtype) if spec.bn_enabled else None

    def forward(self, x):
        self._check_input(x)
        y = _gap2d(x)
        z = self.dw(ops.reshape(y, (*y.shape, 1, 1)))
        z = ops.reshape(z, y.shape)
        if self.bn is not None:
            z = self.bn(z)
        p = self._mask_p(ops.sigmoid(z))
        return ops.channel_scale(x, p), p


class ABPlusBlock(RecalibBlock):
    """GAP -> full CxC descriptor transform -> BN -> sigmoid."""

    def __init__(self, spec, rng, dtype=np.float32, h=None, w=None):
        super().__init__(spec, h, w)
        c = self.channels
        self.fc = Linear(c, c, bias=False, rng=rng, dtype=dtype)
        self.bn = BatchNorm(c, dtype=dtype) if spec.bn_enabled else None

    def forward(self, x):
        self._check_input(x)
        z = self.fc(_gap2d(x))
        if self.bn is not None:
            z = self.bn(z)
        p = self._mask_p(ops.sigmoid(z))
        return ops.channel_scale(x, p), p


class SEBlock(RecalibBlock):
    """GAP -> bottleneck FC pair with reduction r -> sigmoid."""

    def __init__(self, spec, rng, dtype=np.float32, h=None, w=None):
        super().__init__(spec, h, w)
        c = self.channels
        if c % spec.r:
            raise BlockError(f"SE requires channels divisible by r: C={c}, r={spec.r}")
        hidden = c // spec.r
        self.fc1 = Linear(c, hidden, rng=rng, dtype=dtype)
        self.fc2 = Linear(hidden, c, rng=rng, dtype=dtype)
        self.use_relu = spec.se_relu

    def forward(self, x):
        self._check_input(x)
        hid = self.fc1(_gap2d(x))
        if self.use_relu:
            hid = ops.relu(hid)
        p = self._mask_p(ops.sigmoid(self.fc2(hid)))
        return ops.channel_scale(x, p), p


class GroupedBlock(RecalibBlock):
    """GAP -> grouped 1x1 conv over the descriptor -> BN -> sigmoid.

    Interpolates between AB (G=C) and AB_PLUS (G=1); extra conv weights
    number C^2/G.
    """

    def __init__(self, spec, rng, dtype=np.float32, h=None, w=None):
        super().__init__(spec, h, w)
        c = self.channels
        g = spec.groups
        if c % g:
            raise BlockError(f"GROUPED requires C divisible by G: C={c}, G={g}")
        self.conv = Conv2d(c, c, 1, groups=g, rng=rng, dtype=dtype)
        self.bn = BatchNorm(c, dtype=dtype) if spec.bn_enabled else None

    def forward(self, x):
        self._check_input(x)
        y = _gap2d(x)
        z = self.conv(ops.reshape(y, (*y.shape, 1, 1)))
        z = ops.reshape(z, y.shape)
        if self.bn is not None:
            z = self.bn(z)
        p = self._mask_p(ops.sigmoid(z))
        return ops.channel_scale(x, p), p


class OnlyGapBlock(RecalibBlock):
    """sigmoid(GAP); no parameters."""

    def __init__(self, spec, rng=None, dtype=np.float32, h=None, w=None):
        super().__init__(spec, h, w)

    def forward(self, x):
        self._check_input(x)
        p = self._mask_p(ops.sigmoid(_gap2d(x)))
        return ops.channel_scale(x, p), p


class GapBnBlock(RecalibBlock):
    """sigmoid(BN(GAP)); BN affine only, no conv weights."""

    def __init__(self, spec, rng=None, dtype=np.float32, h=None, w=None):
        super().__init__(spec, h, w)
        self.bn = BatchNorm(self.channels, dtype=dtype)

    def forward(self, x):
        self._check_input(x)
        p = self._mask_p(ops.sigmoid(self.bn(_gap2d(x))))
        return ops.channel_scale(x, p), p


class GlobalDwWavgBlock(RecalibBlock):
    """Learned per-channel spatial average: a full HxW weight map per channel.

    Initialized to the uniform average 1/(H*W), i.e. exactly ONLY_GAP at
    construction.
    """

    def __init__(self, spec, rng, dtype=np.float32, h=None, w=None):
        super().__init__(spec, h, w)
        if h is None or w is None:
            raise BlockError("GLOBAL_DW_WAVG binds parameters to a spatial size; pass h, w")
        init = np.full((self.channels, h, w), 1.0 / (h * w), dtype=dtype)
        self.weight = Parameter(init, role="conv-weight")

    def forward(self, x):
        self._check_input(x)
        p = self._mask_p(ops.sigmoid(ops.spatial_weighted_sum(x, self.weight)))
        return ops.channel_scale(x, p), p


class GlobalWavgBlock(RecalibBlock):
    """Learned full map from every input point to every channel descriptor
    (H*W*C^2 parameters per block)."""

    def __init__(self, spec, rng, dtype=np.float32, h=None, w=None):
        super().__init__(spec, h, w)
        c = self.channels
        if h is None or w is None:
            raise BlockError("GLOBAL_WAVG binds parameters to a spatial size; pass h, w")
        from .engine.module import kaiming_normal

        self.weight = Parameter(
            kaiming_normal(rng, (c, c, h, w), c * h * w, dtype), role="conv-weight"
        )

    def forward(self, x):
        self._check_input(x)
        p = self._mask_p(ops.sigmoid(ops.global_linear_map(x, self.weight)))
        return ops.channel_scale(x, p), p


class FineConvBlock(RecalibBlock):
    """kxk full convolution producing one re-calibration weight per point."""

    fine = True

    def __init__(self, spec, rng, dtype=np.float32, h=None, w=None):
        super().__init__(spec, h, w)
        c, k = self.channels, spec.k
        self.conv = Conv2d(c, c, k, padding=(k - 1) // 2, rng=rng, dtype=dtype)
        self.bn = BatchNorm(c, dtype=dtype) if spec.bn_enabled else None

    def forward(self, x):
        self._check_input(x)
        z = self.conv(x)
        if self.bn is not None:
            z = self.bn(z)
        p = self._mask_p(ops.sigmoid(z))
        return ops.elementwise_scale(x, p), p


class FineDwConvBlock(RecalibBlock):
    """kxk depthwise convolution producing per-point re-calibration weights."""

    fine = True

    def __init__(self, spec, rng, dtype=np.float32, h=None, w=None):
        super().__init__(spec, h, w)
        c, k = self.channels, spec.k
        self.conv = DepthwiseConv2d(c, k, padding=(k - 1) // 2, rng=rng, dtype=dtype)
        self.bn = BatchNorm(c, dtype=dtype) if spec.bn_enabled else None

    def forward(self, x):
        self._check_input(x)
        z = self.conv(x)
        if self.bn is not None:
            z = self.bn(z)
        p = self._mask_p(ops.sigmoid(z))
        return ops.elementwise_scale(x, p), p


class CombinedGapBlock(RecalibBlock):
    """Fine 7x7 depthwise re-calibration first, then a GAP+sigmoid channel
    gate applied to the already re-calibrated maps."""

    def __init__(self, spec, rng, dtype=np.float32, h=None, w=None):
        super().__init__(spec, h, w)
        c, k = self.channels, spec.k
        self.conv = DepthwiseConv2d(c, k, padding=(k - 1) // 2, rng=rng, dtype=dtype)

    def forward(self, x):
        self._check_input(x)
        q = ops.sigmoid(self.conv(x))
        x1 = ops.elementwise_scale(x, q)
        p = self._mask_p(ops.sigmoid(_gap2d(x1)))
        return ops.channel_scale(x1, p), p


class CombinedABBlock(RecalibBlock):
    """7x7 depthwise conv -> GAP -> AB tail (1x1 DW + BN + sigmoid)."""

    def __init__(self, spec, rng, dtype=np.float32, h=None, w=None):
        super().__init__(spec, h, w)
        c, k = self.channels, spec.k
        self.conv = DepthwiseConv2d(c, k, padding=(k - 1) // 2, rng=rng, dtype=dtype)
        self.dw = DepthwiseConv2d(c, 1, dtype=dtype, init="kaiming", rng=rng)
        self.dw.weight = Parameter(
            np.full((c, 1, 1, 1), spec.dw_init, dtype=dtype), role="conv-weight", decay=False
        )
        self.bn = BatchNorm(c, dtype=dtype) if spec.bn_enabled else None

    def forward(self, x):
        self._check_input(x)
        y = _gap2d(self.conv(x))
        z = self.dw(ops.reshape(y, (*y.shape, 1, 1)))
        z = ops.reshape(z, y.shape)
        if self.bn is not None:
            z = self.bn(z)
        p = self._mask_p(ops.sigmoid(z))
        return ops.channel_scale(x, p), p


class CombinedABPlusBlock(RecalibBlock):
    """7x7 depthwise conv -> GAP -> AB_PLUS tail (CxC transform + BN + sigmoid)."""

    def __init__(self, spec, rng, dtype=np.float32, h=None, w=None):
        super().__init__(spec, h, w)
        c, k = self.channels, spec.k
        self.conv = DepthwiseConv2d(c, k, padding=(k - 1) // 2, rng=rng, dtype=dtype)
        self.fc = Linear(c, c, bias=False, rng=rng, dtype=dtype)
        self.bn = BatchNorm(c, dtype=dtype) if spec.bn_enabled else None

    def forward(self, x):
        self._check_input(x)
        z = self.fc(_gap2d(self.conv(x)))
        if self.bn is not None:
            z = self.bn(z)
        p = self._mask_p(ops.sigmoid(z))
        return ops.channel_scale(x, p), p


_BLOCK_CLASSES = {
    "AB": ABBlock,
    "AB_PLUS": ABPlusBlock,
    "SE": SEBlock,
    "GROUPED": GroupedBlock,
    "ONLY_GAP": OnlyGapBlock,
    "GAP_BN": GapBnBlock,
    "GLOBAL_DW_WAVG": GlobalDwWavgBlock,
    "GLOBAL_WAVG": GlobalWavgBlock,
    "FINE_CONV": FineConvBlock,
    "FINE_DWCONV": FineDwConvBlock,
    "COMBINED_GAP": CombinedGapBlock,
    "COMBINED_AB": CombinedABBlock,
    "COMBINED_AB_PLUS": CombinedABPlusBlock,
}


def make_block(
    spec: BlockSpec,
    rng: np.random.Generator,
    *,
    dtype=np.float32,
    h: int | None = None,
    w: int | None = None,
) -> RecalibBlock:
    """Materialize a block from its spec. Spatial kinds require h and w."""
    cls = _BLOCK_CLASSES[spec.kind]
    return cls(spec, rng, dtype=dtype, h=h, w=w)
