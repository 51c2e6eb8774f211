"""Heterogeneous convolution layer and the residual unit built from it.

A HetConv layer runs three grouped 3x3 convolutions over equal channel
slices of the input, concatenates their outputs, and adds a pointwise 1x1
convolution of the full input.  The residual unit applies two such layers
(or two plain 3x3 convolutions, variant "v1") in pre-activation order
(BN -> ReLU -> conv) around an identity or projected shortcut.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .nnops import BatchNormState, Conv2dParams, batch_norm, conv2d, relu
from .tensor import Tensor, as_rng, concat_channels, elementwise_add, slice_channels

GROUPS = 3


@dataclass
class HetConvLayer:
    """Three grouped 3x3 convolutions fused additively with a 1x1 convolution.

    Only the pointwise branch carries a bias; a second per-channel constant
    in the group branch would be redundant.
    """

    group_convs: tuple[Conv2dParams, Conv2dParams, Conv2dParams]
    pointwise: Conv2dParams
    stride: int = 1

    def __post_init__(self):
        slice_out = {gc.c_out for gc in self.group_convs}
        slice_in = {gc.c_in for gc in self.group_convs}
        if len(slice_out) != 1 or len(slice_in) != 1:
            raise ConfigError("group convolutions must share in/out channel counts")
        if self.c_out != self.pointwise.c_out or self.c_in != self.pointwise.c_in:
            raise ConfigError(
                "pointwise branch must map the full input channels to the full "
                f"output channels (got {self.pointwise.c_in}->{self.pointwise.c_out}, "
                f"need {self.c_in}->{self.c_out})"
            )

    @property
    def c_in(self) -> int:
        return self.group_convs[0].c_in * GROUPS

    @property
    def c_out(self) -> int:
        return self.group_convs[0].c_out * GROUPS

    @classmethod
    def create(
        cls, c_in: int, c_out: int, rng: int | np.random.Generator, stride: int = 1
    ) -> "HetConvLayer":
        if c_in % GROUPS != 0:
            raise ConfigError(f"c_in={c_in} not divisible by {GROUPS}")
        if c_out % GROUPS != 0:
            raise ConfigError(f"c_out={c_out} not divisible by {GROUPS}")
        rng = as_rng(rng)
        groups = tuple(
            Conv2dParams.create(
                c_in // GROUPS,
                c_out // GROUPS,
                kernel=3,
                rng=rng,
                stride=stride,
                padding=1,
                with_bias=False,
            )
            for _ in range(GROUPS)
        )
        pw = Conv2dParams.create(
            c_in, c_out, kernel=1, rng=rng, stride=stride, padding=0, with_bias=True
        )
        return cls(groups, pw, stride=stride)

    def parameters(self, prefix: str = ""):
        for i, gc in enumerate(self.group_convs):
            yield from gc.parameters(f"{prefix}group{i}.")
        yield from self.pointwise.parameters(f"{prefix}pointwise.")


def hetconv_forward(x: Tensor, layer: HetConvLayer) -> Tensor:
    if x.c != layer.c_in:
        raise ConfigError(f"hetconv expects {layer.c_in} channels, got {x.c}")
    step = layer.c_in // GROUPS
    parts = [
        conv2d(slice_channels(x, i * step, (i + 1) * step), layer.group_convs[i])
        for i in range(GROUPS)
    ]
    grouped = concat_channels(concat_channels(parts[0], parts[1]), parts[2])
    return elementwise_add(grouped, conv2d(x, layer.pointwise))


ConvLayer = HetConvLayer | Conv2dParams


def conv_layer_forward(x: Tensor, layer: ConvLayer) -> Tensor:
    if isinstance(layer, HetConvLayer):
        return hetconv_forward(x, layer)
    return conv2d(x, layer)


@dataclass
class ResidualUnit:
    """Two-convolution pre-activation branch added to a shortcut.

    The shortcut is the identity when stride is 1 and channels match,
    otherwise a stride-matched 1x1 convolution followed by BN.  The stride
    applies to the first convolution and the shortcut.
    """

    conv1: ConvLayer
    conv2: ConvLayer
    bn1: BatchNormState
    bn2: BatchNormState
    shortcut_conv: Conv2dParams | None
    shortcut_bn: BatchNormState | None
    variant: str
    stride: int

    @property
    def c_in(self) -> int:
        return self.conv1.c_in

    @property
    def c_out(self) -> int:
        return self.conv2.c_out

    @classmethod
    def create(
        cls,
        c_in: int,
        c_out: int,
        variant: str,
        rng: int | np.random.Generator,
        stride: int = 1,
    ) -> "ResidualUnit":
        if variant not in ("v1", "v2"):
            raise ConfigError(f"residual unit variant must be v1 or v2, got {variant!r}")
        rng = as_rng(rng)
        if variant == "v2":
            conv1: ConvLayer = HetConvLayer.create(c_in, c_out, rng, stride=stride)
            conv2: ConvLayer = HetConvLayer.create(c_out, c_out, rng, stride=1)
        else:
            conv1 = Conv2dParams.create(c_in, c_out, 3, rng, stride=stride, padding=1)
            conv2 = Conv2dParams.create(c_out, c_out, 3, rng, stride=1, padding=1)
        needs_projection = stride != 1 or c_in != c_out
        shortcut_conv = (
            Conv2dParams.create(c_in, c_out, 1, rng, stride=stride, padding=0)
            if needs_projection
            else None
        )
        shortcut_bn = BatchNormState.create(c_out) if needs_projection else None
        return cls(
            conv1=conv1,
            conv2=conv2,
            bn1=BatchNormState.create(c_in),
            bn2=BatchNormState.create(c_out),
            shortcut_conv=shortcut_conv,
            shortcut_bn=shortcut_bn,
            variant=variant,
            stride=stride,
        )

    def parameters(self, prefix: str = ""):
        yield from self.bn1.parameters(f"{prefix}bn1.")
        yield from self.conv1.parameters(f"{prefix}conv1.")
        yield from self.bn2.parameters(f"{prefix}bn2.")
        yield from self.conv2.parameters(f"{prefix}conv2.")
        if self.shortcut_conv is not None:
            yield from self.shortcut_conv.parameters(f"{prefix}shortcut.")
            yield from self.shortcut_bn.parameters(f"{prefix}shortcut_bn.")

    def buffers(self, prefix: str = ""):
        yield from self.bn1.buffers(f"{prefix}bn1.")
        yield from self.bn2.buffers(f"{prefix}bn2.")
        if self.shortcut_bn is not None:
            yield from self.shortcut_bn.buffers(f"{prefix}shortcut_bn.")

    def batch_norms(self):
        yield self.bn1
        yield self.bn2
        if self.shortcut_bn is not None:
            yield self.shortcut_bn


def residual_unit_forward(x: Tensor, unit: ResidualUnit) -> Tensor:
    if x.c != unit.c_in:
        raise ConfigError(f"residual unit expects {unit.c_in} channels, got {x.c}")
    h = conv_layer_forward(relu(batch_norm(x, unit.bn1)), unit.conv1)
    h = conv_layer_forward(relu(batch_norm(h, unit.bn2)), unit.conv2)
    if unit.shortcut_conv is not None:
        shortcut = batch_norm(conv2d(x, unit.shortcut_conv), unit.shortcut_bn)
    else:
        shortcut = x
    assert shortcut.shape == h.shape, "branch/shortcut shape divergence"
    return elementwise_add(shortcut, h)


def param_count(obj) -> int:
    """Number of learnable scalars (weights, biases, BN scale/shift)."""
    if isinstance(obj, Tensor):
        return obj.size
    if not hasattr(obj, "parameters"):
        raise TypeError(f"cannot count parameters of {type(obj).__name__}")
    return sum(t.size for _, t in obj.parameters())
