"""Variational feature generation network.

Each layer carries a mean sub-layer and a spread sub-layer. A forward draw
outputs ``mean(x) + softplus(spread(x)) * eps`` with fresh standard normal
``eps`` per layer, so repeated draws give a set of feature maps whose
elementwise mean and population variance describe the features and their
uncertainty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .seeding import derive_seed
from .tensor import Tensor


@dataclass
class VariationalConvLayer:
    mean_kernel: Tensor
    mean_bias: Tensor
    var_kernel: Tensor
    var_bias: Tensor
    stride: int = 1
    padding: int = 1

    def __post_init__(self):
        if self.mean_kernel.shape != self.var_kernel.shape:
            raise T.ShapeError(
                f"mean kernel {self.mean_kernel.shape} and variance kernel "
                f"{self.var_kernel.shape} differ"
            )
        o = self.mean_kernel.shape[0]
        if self.mean_bias.shape != (o,) or self.var_bias.shape != (o,):
            raise T.ShapeError("bias shapes must match the kernel output channels")

    @property
    def in_channels(self) -> int:
        return self.mean_kernel.shape[1]

    @property
    def out_channels(self) -> int:
        return self.mean_kernel.shape[0]

    def out_size(self, size: int) -> int:
        k = self.mean_kernel.shape[2]
        return (size + 2 * self.padding - k) // self.stride + 1


@dataclass
class VfgnParams:
    """Layer stack plus the affine score adjustment applied to correlations."""

    layers: list[VariationalConvLayer]
    slope: float = 0.1
    adjust_scale: Tensor = field(default_factory=lambda: Tensor.param(1.0, "adjust.scale"))
    adjust_bias: Tensor = field(default_factory=lambda: Tensor.param(0.0, "adjust.bias"))

    def __post_init__(self):
        if not self.layers:
            raise ValueError("VFGN needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_channels != b.in_channels:
                raise T.ShapeError(
                    f"layer channels incompatible: {a.out_channels} -> {b.in_channels}"
                )

    @property
    def in_channels(self) -> int:
        return self.layers[0].in_channels

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, layer in enumerate(self.layers):
            out += [
                (f"layer{i}.mean_kernel", layer.mean_kernel),
                (f"layer{i}.mean_bias", layer.mean_bias),
                (f"layer{i}.var_kernel", layer.var_kernel),
                (f"layer{i}.var_bias", layer.var_bias),
            ]
        out += [("adjust.scale", self.adjust_scale), ("adjust.bias", self.adjust_bias)]
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    def output_size(self, size: int) -> int:
        for layer in self.layers:
            size = layer.out_size(size)
        return size

    @classmethod
    def from_named(cls, named: dict[str, np.ndarray], slope: float = 0.1) -> "VfgnParams":
        layers = []
        i = 0
        while f"layer{i}.mean_kernel" in named:
            mk = named[f"layer{i}.mean_kernel"]
            layers.append(VariationalConvLayer(
                Tensor.param(mk, f"layer{i}.mean_kernel"),
                Tensor.param(named[f"layer{i}.mean_bias"], f"layer{i}.mean_bias"),
                Tensor.param(named[f"layer{i}.var_kernel"], f"layer{i}.var_kernel"),
                Tensor.param(named[f"layer{i}.var_bias"], f"layer{i}.var_bias"),
                stride=1,
                padding=mk.shape[2] // 2,
            ))
            i += 1
        return cls(
            layers,
            slope=slope,
            adjust_scale=Tensor.param(np.asarray(named["adjust.scale"]).reshape(()), "adjust.scale"),
            adjust_bias=Tensor.param(np.asarray(named["adjust.bias"]).reshape(()), "adjust.bias"),
        )

    def copy(self) -> "VfgnParams":
        return VfgnParams.from_named(
            {k: t.data.copy() for k, t in self.named_tensors()}, slope=self.slope
        )


def init_vfgn(
    channels: Sequence[int] = (3, 8, 16, 16),
    kernel: int = 3,
    seed: int = 0,
    slope: float = 0.1,
    var_bias: float = -3.0,
    adjust_scale: float = 1.0,
) -> VfgnParams:
    """He-initialised mean kernels; small spread kernels with negative bias."""
    if len(channels) < 2:
        raise ValueError("channels must list input and at least one output width")
    rng = np.random.default_rng(derive_seed(seed, "vfgn-init"))
    layers = []
    for i, (cin, cout) in enumerate(zip(channels, channels[1:])):
        fan_in = cin * kernel * kernel
        std = math.sqrt(2.0 / fan_in)
        layers.append(VariationalConvLayer(
            Tensor.param(rng.normal(0.0, std, (cout, cin, kernel, kernel)), f"layer{i}.mean_kernel"),
            Tensor.param(np.zeros(cout), f"layer{i}.mean_bias"),
            Tensor.param(rng.normal(0.0, 0.1 * std, (cout, cin, kernel, kernel)), f"layer{i}.var_kernel"),
            Tensor.param(np.full(cout, float(var_bias)), f"layer{i}.var_bias"),
            stride=1,
            padding=kernel // 2,
        ))
    return VfgnParams(
        layers,
        slope=slope,
        adjust_scale=Tensor.param(float(adjust_scale), "adjust.scale"),
        adjust_bias=Tensor.param(0.0, "adjust.bias"),
    )


@dataclass
class VariationalOutputSet:
    stacked: Tensor
    mean: Tensor
    variance: Tensor

    @property
    def sample_count(self) -> int:
        return self.stacked.shape[0]

    @property
    def samples(self) -> list[Tensor]:
        return [Tensor(self.stacked.data[i]) for i in range(self.sample_count)]


def _check_input(params: VfgnParams, x: Tensor) -> None:
    if x.ndim != 3 or x.shape[0] != params.in_channels:
        raise T.ShapeError(
            f"input {x.shape} does not match first layer ({params.in_channels} channels)"
        )


def _forward(params: VfgnParams, x: Tensor, seeds: Sequence[int]) -> Tensor:
    rngs = [np.random.default_rng(s) for s in seeds]
    p = len(seeds)
    h = x
    last = len(params.layers) - 1
    for li, layer in enumerate(params.layers):
        # both sub-layers in one convolution, split along the channel axis
        o = layer.out_channels
        both = T.conv2d(
            h,
            T.concat([layer.mean_kernel, layer.var_kernel]),
            T.concat([layer.mean_bias, layer.var_bias]),
            layer.stride,
            layer.padding,
        )
        axis = both.ndim - 3
        m = T.narrow(both, axis, 0, o)
        sd = T.softplus(T.narrow(both, axis, o, o))
        single = m.shape if m.ndim == 3 else m.shape[1:]
        eps = Tensor(np.stack([g.standard_normal(single) for g in rngs]))
        if m.ndim == 3:
            m = T.expand(m, (p,) + single)
            sd = T.expand(sd, (p,) + single)
        h = m + sd * eps
        if li != last:
            h = T.leaky_relu(h, params.slope)
    return h


def sample_seeds(base_seed: int, count: int) -> list[int]:
    return [derive_seed(base_seed, "sample", i) for i in range(count)]


def sample_forward(params: VfgnParams, x: Tensor, noise_seed: int) -> Tensor:
    """One draw of the network output for ``x`` (C×H×W)."""
    _check_input(params, x)
    return T.take(_forward(params, x, [noise_seed]), 0)


def deterministic_forward(params: VfgnParams, x: Tensor) -> Tensor:
    """Mean sub-layers only: the plain feature network the variational one extends."""
    _check_input(params, x)
    h = x
    last = len(params.layers) - 1
    for li, layer in enumerate(params.layers):
        h = T.conv2d(h, layer.mean_kernel, layer.mean_bias, layer.stride, layer.padding)
        if li != last:
            h = T.leaky_relu(h, params.slope)
    return h


def aggregate(samples) -> tuple[Tensor, Tensor]:
    """Elementwise mean and population variance over the leading sample axis.

    Accepts a list of equally shaped tensors or one stacked ``P×...`` tensor.
    Elements whose samples all coincide get exactly zero variance.
    """
    if isinstance(samples, Tensor):
        stacked = samples
    else:
        samples = list(samples)
        if not samples:
            raise ValueError("aggregate needs at least one sample")
        stacked = T.stack(samples)
    if stacked.ndim < 1 or stacked.shape[0] < 1:
        raise ValueError("aggregate needs at least one sample")
    mean = T.reduce("mean", stacked, axes=(0,))
    diff = stacked - T.expand(mean, stacked.shape)
    var = T.reduce("mean", T.square(diff), axes=(0,))
    data = stacked.data
    spread = (data.max(axis=0) != data.min(axis=0)).astype(np.float64)
    if not spread.all():
        var = var * Tensor(spread)
    return mean, var


def sample_set(params: VfgnParams, x: Tensor, count: int, base_seed: int) -> VariationalOutputSet:
    """Draw ``count`` network samples for ``x`` and aggregate them."""
    if count < 1:
        raise ValueError("sample count must be >= 1")
    _check_input(params, x)
    stacked = _forward(params, x, sample_seeds(base_seed, count))
    mean, var = aggregate(stacked)
    return VariationalOutputSet(stacked, mean, var)
