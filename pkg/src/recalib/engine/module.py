"""Minimal layer/module system on top of the tensor engine.

Modules register Parameters, persistent buffers (numpy arrays such as BN
running statistics), and child modules automatically through attribute
assignment, and expose them with stable dotted names for checkpointing.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import EngineError, Parameter, Tensor


def kaiming_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    """Fan-in scaled normal init (gain for ReLU nonlinearities)."""
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    # -- traversal -----------------------------------------------------------

    def named_modules(self, prefix: str = ""):
        yield prefix, self
        for name, child in self._children.items():
            sub = f"{prefix}.{name}" if prefix else name
            yield from child.named_modules(sub)

    def named_parameters(self, prefix: str = ""):
        for name, mod in self.named_modules(prefix):
            for pname, p in mod._params.items():
                yield (f"{name}.{pname}" if name else pname), p

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix: str = ""):
        for name, mod in self.named_modules(prefix):
            for bname, b in mod._buffers.items():
                yield (f"{name}.{bname}" if name else bname), b

    def train(self, flag: bool = True):
        for _, mod in self.named_modules():
            object.__setattr__(mod, "training", flag)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__init__()
        self._list = []
        for m in mods:
            self.append(m)

    def append(self, mod: Module) -> None:
        self._children[str(len(self._list))] = mod
        self._list.append(mod)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


class Conv2d(Module):
    """Grouped 2-D convolution layer, no bias (BN always follows here)."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        *,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
        rng: np.random.Generator,
        dtype=np.float32,
        init: str = "kaiming",
        decay: bool = True,
    ):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise EngineError(
                f"channels ({in_channels}->{out_channels}) not divisible by groups {groups}"
            )
        self.stride = stride
        self.padding = padding
        self.groups = groups
        shape = (out_channels, in_channels // groups, kernel, kernel)
        fan_in = (in_channels // groups) * kernel * kernel
        if init == "kaiming":
            w = kaiming_normal(rng, shape, fan_in, dtype)
        elif init == "ones":
            w = np.ones(shape, dtype=dtype)
        else:
            raise EngineError(f"unknown init {init!r}")
        self.weight = Parameter(w, role="conv-weight", decay=decay)

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(
            x, self.weight, stride=self.stride, padding=self.padding, groups=self.groups
        )


class DepthwiseConv2d(Module):
    """Per-channel convolution: one (k,k) filter per channel."""

    def __init__(
        self,
        channels: int,
        kernel: int,
        *,
        stride: int = 1,
        padding: int = 0,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
        init: str = "kaiming",
        decay: bool = True,
    ):
        super().__init__()
        self.stride = stride
        self.padding = padding
        shape = (channels, 1, kernel, kernel)
        if init == "ones":
            w = np.ones(shape, dtype=dtype)
        else:
            w = kaiming_normal(rng, shape, kernel * kernel, dtype)
        self.weight = Parameter(w, role="conv-weight", decay=decay)

    def forward(self, x: Tensor) -> Tensor:
        return ops.depthwise_conv2d(
            x, self.weight, stride=self.stride, padding=self.padding
        )


class Linear(Module):
    def __init__(
        self,
        in_features: int,
        out_features: int,
        *,
        bias: bool = True,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        super().__init__()
        bound = 1.0 / np.sqrt(in_features)
        w = rng.uniform(-bound, bound, size=(out_features, in_features)).astype(dtype)
        self.weight = Parameter(w, role="fc-weight")
        self.bias = (
            Parameter(np.zeros(out_features, dtype=dtype), role="fc-bias")
            if bias
            else None
        )

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    """Batch normalization over features (works on (N,F) and (N,F,H,W)).

    gamma starts at 1, beta at 0; running statistics update with momentum
    0.1 in training mode only. Weight decay is never applied to the affine
    parameters.
    """

    def __init__(
        self, num_features: int, *, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float32
    ):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(num_features, dtype=dtype), role="bn-gamma", decay=False)
        self.beta = Parameter(np.zeros(num_features, dtype=dtype), role="bn-beta", decay=False)
        self.register_buffer("running_mean", np.zeros(num_features, dtype=dtype))
        self.register_buffer("running_var", np.ones(num_features, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            eps=self.eps,
            momentum=self.momentum,
            training=self.training,
        )
