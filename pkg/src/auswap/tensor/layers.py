"""Parameterized layers and blocks on top of the autodiff primitives.

Upsampling is realized as nearest-neighbor resize followed by a stride-1
convolution rather than a transposed convolution (avoids checkerboard
artifacts); `UpsampleConv2d` is the only upsampling layer in the package.

`Module` is a minimal container: assigning a `Tensor` registers a
parameter, assigning a `Module` registers a child.  Buffers (non-trainable
arrays such as the spectral-norm estimates) are registered explicitly.
"""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import core
from .core import Tensor
from .spectral import SpectralNormState, spectral_normalize


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield f"{prefix}{name}", p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_states(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        """Spectral-norm states, named alongside their owning layer."""
        if getattr(self, "sn_state", None) is not None:
            yield f"{prefix}sn_u", self.sn_state
        for cname, child in self._children.items():
            yield from child.named_states(f"{prefix}{cname}.")

    def set_requires_grad(self, flag: bool):
        for p in self.parameters():
            p.requires_grad = flag

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 1, bias: bool = True,
                 spectral_norm: bool = False):
        super().__init__()
        fan_in = c_in * kernel * kernel
        self.weight = Tensor(he_normal(rng, (c_out, c_in, kernel, kernel), fan_in),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding
        self.sn_state: Optional[SpectralNormState] = (
            SpectralNormState(c_out, rng) if spectral_norm else None
        )

    def __call__(self, x: Tensor) -> Tensor:
        w = self.weight
        if self.sn_state is not None:
            w = spectral_normalize(w, self.sn_state)
        y = core.conv2d(x, w, self.stride, self.padding)
        if self.bias is not None:
            y = core.add(y, core.reshape(self.bias, (1, -1, 1, 1)))
        return y


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True, spectral_norm: bool = False):
        super().__init__()
        self.weight = Tensor(he_normal(rng, (d_out, d_in), d_in), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None
        self.sn_state: Optional[SpectralNormState] = (
            SpectralNormState(d_out, rng) if spectral_norm else None
        )

    def __call__(self, x: Tensor) -> Tensor:
        w = self.weight
        if self.sn_state is not None:
            w = spectral_normalize(w, self.sn_state)
        y = core.matmul(x, core.transpose(w))
        if self.bias is not None:
            y = core.add(y, core.reshape(self.bias, (1, -1)))
        return y


class InstanceNorm2d(Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = Tensor(np.ones((1, channels, 1, 1)), requires_grad=True)
        self.beta = Tensor(np.zeros((1, channels, 1, 1)), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return core.add(core.mul(core.instance_norm(x, self.eps), self.gamma), self.beta)


class UpsampleConv2d(Module):
    """Nearest-neighbor 2x upsample followed by a stride-1 conv."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 spectral_norm: bool = False):
        super().__init__()
        self.conv = Conv2d(c_in, c_out, kernel, rng, stride=1,
                           padding=kernel // 2, spectral_norm=spectral_norm)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv(core.nearest_upsample2x(x))


class ResidualBlock(Module):
    """conv-norm-relu-conv-norm with an identity skip, relu after the add."""

    def __init__(self, channels: int, rng: np.random.Generator,
                 spectral_norm: bool = False):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, 3, rng, spectral_norm=spectral_norm)
        self.norm1 = InstanceNorm2d(channels)
        self.conv2 = Conv2d(channels, channels, 3, rng, spectral_norm=spectral_norm)
        self.norm2 = InstanceNorm2d(channels)

    def __call__(self, x: Tensor) -> Tensor:
        h = core.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return core.relu(core.add(x, h))


class UpsampleResidualBlock(Module):
    """Residual block whose main and skip paths both upsample 2x."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 spectral_norm: bool = False):
        super().__init__()
        self.conv1 = UpsampleConv2d(c_in, c_out, 3, rng, spectral_norm=spectral_norm)
        self.norm1 = InstanceNorm2d(c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, spectral_norm=spectral_norm)
        self.norm2 = InstanceNorm2d(c_out)
        self.skip = UpsampleConv2d(c_in, c_out, 1, rng, spectral_norm=spectral_norm)

    def __call__(self, x: Tensor) -> Tensor:
        h = core.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return core.relu(core.add(self.skip(x), h))


# Registry for the self-diagnostic gradient checker.  Each builder returns
# (forward callable producing a scalar Tensor, holder Module).  Every
# checked tensor -- layer parameters and the input itself -- lives on the
# holder as a grad-enabled leaf.  Inputs are sampled away from relu/leaky
# kinks (magnitudes in [0.2, 1.5]).
def layer_check_registry(rng: np.random.Generator):
    def signed_leaf(shape):
        mag = rng.uniform(0.2, 1.5, size=shape)
        return Tensor(mag * rng.choice([-1.0, 1.0], size=shape), requires_grad=True)

    def wrap_layer(layer: Module, in_shape):
        # jitter params off their init so no gradient is structurally zero
        # (e.g. norm shift at beta=0 has exact-zero gradient under a
        # square loss, which breaks relative-error comparisons)
        for _, p in layer.named_parameters():
            p.data = p.data + rng.uniform(-0.3, 0.3, size=p.shape)
        holder = Module()
        holder.layer = layer
        holder.x = signed_leaf(in_shape)
        return holder

    builders = {}

    def layer_case(name, make_layer, in_shape):
        def build():
            holder = wrap_layer(make_layer(), in_shape)
            return lambda: core.tsum(core.square(holder.layer(holder.x))), holder
        builders[name] = build

    def fn_case(name, fn, in_shape):
        def build():
            holder = Module()
            holder.x = signed_leaf(in_shape)
            return lambda: core.tsum(core.square(fn(holder.x))), holder
        builders[name] = build

    layer_case("conv2d", lambda: Conv2d(3, 4, 3, rng, stride=1, padding=1), (2, 3, 6, 6))
    layer_case("conv2d_strided", lambda: Conv2d(3, 4, 4, rng, stride=2, padding=1), (2, 3, 8, 8))
    layer_case("upsample_conv2d", lambda: UpsampleConv2d(3, 4, 3, rng), (2, 3, 4, 4))
    layer_case("fully_connected", lambda: Linear(10, 4, rng), (3, 10))
    layer_case("instance_norm", lambda: InstanceNorm2d(3), (2, 3, 5, 5))
    layer_case("residual_block", lambda: ResidualBlock(4, rng), (2, 4, 5, 5))
    layer_case("upsampling_residual_block", lambda: UpsampleResidualBlock(4, 3, rng), (2, 4, 3, 3))
    fn_case("relu", core.relu, (2, 3, 4, 4))
    fn_case("leaky_relu", lambda t: core.leaky_relu(t, 0.2), (2, 3, 4, 4))
    fn_case("sigmoid", core.sigmoid, (2, 3, 4, 4))
    fn_case("softmax", lambda t: core.softmax(core.reshape(t, (6, 16)), axis=1), (2, 3, 4, 4))
    fn_case("global_avg_pool", core.global_avg_pool, (2, 3, 4, 4))

    def add_case():
        holder = Module()
        holder.a = signed_leaf((2, 3, 4, 4))
        holder.b = signed_leaf((2, 3, 4, 4))
        return lambda: core.tsum(core.square(core.add(holder.a, holder.b))), holder

    def concat_case():
        holder = Module()
        holder.a = signed_leaf((2, 2, 4, 4))
        holder.b = signed_leaf((2, 3, 4, 4))
        return (lambda: core.tsum(core.square(core.concat([holder.a, holder.b], axis=1))),
                holder)

    builders["elementwise_add"] = add_case
    builders["channel_concat"] = concat_case
    return builders


def build_layer_check(kind: str, rng: np.random.Generator):
    """Look up one layer-suite kind for gradient checking."""
    builders = layer_check_registry(rng)
    if kind not in builders:
        raise ValueError(f"unknown layer kind {kind!r}; known: {sorted(builders)}")
    return builders[kind]()
