"""Domain-specific feature learning: shared front-end, two dilated back-ends,
and multi-scale node-state initialisation by pyramid pooling."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Optional, Sequence

import numpy as np

from .ops import ConvParams, conv2d, init_conv, max_pool2d, pyramid_pool, relu
from .tensor import Tensor, TensorError

# first ten VGG-16 conv layers; "M" marks a 2x2 max-pool
VGG_FRONT_PLAN = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512)
BACK_END_PLAN = (512, 512, 512, 256, 256, 128, 64)  # followed by the node_channels layer

COUNTING, LOCALIZATION = 1, 2
DOMAINS = (COUNTING, LOCALIZATION)

DEFAULT_SCALES = {1: [1], 2: [1, 2], 3: [1, 2, 4], 4: [1, 2, 3, 4], 5: [1, 2, 3, 4, 6]}


def default_scales(n: int) -> list[int]:
    if n in DEFAULT_SCALES:
        return list(DEFAULT_SCALES[n])
    return list(range(1, n + 1))


@dataclass
class DflConfig:
    width_multiplier: Fraction = Fraction(1, 8)
    scales: list[int] = field(default_factory=lambda: [1, 2, 4])
    node_channels: int = 8
    back_end_dilation: int = 2

    def __post_init__(self):
        self.width_multiplier = Fraction(self.width_multiplier).limit_denominator(1 << 16)
        if self.width_multiplier <= 0:
            raise ValueError("width_multiplier must be positive")
        if len(self.scales) < 2:
            raise ValueError("at least two pyramid scales are required")
        if len(set(self.scales)) != len(self.scales) or min(self.scales) < 1:
            raise ValueError(f"scales must be distinct positive bin counts, got {self.scales}")
        if self.node_channels < 1 or self.back_end_dilation < 1:
            raise ValueError("node_channels and back_end_dilation must be positive")

    @property
    def n_scales(self) -> int:
        return len(self.scales)

    def width(self, channels: int) -> int:
        return max(1, int(round(channels * self.width_multiplier)))


@dataclass
class FeaturePyramid:
    domain: int
    states: list[Tensor]

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain}")
        shapes = {t.shape for t in self.states}
        if len(shapes) > 1:
            raise TensorError(f"pyramid levels differ in shape: {sorted(shapes)}")


@dataclass
class DflWeights:
    front: list[ConvParams]
    back: dict[int, list[ConvParams]]

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for i, conv in enumerate(self.front):
            yield from conv.named_parameters(f"front.{i}")
        for domain in DOMAINS:
            for i, conv in enumerate(self.back[domain]):
                yield from conv.named_parameters(f"back{domain}.{i}")


def init_dfl(rng: np.random.Generator, config: DflConfig) -> DflWeights:
    front = []
    in_ch = 3
    for item in VGG_FRONT_PLAN:
        if item == "M":
            continue
        out_ch = config.width(item)
        front.append(init_conv(rng, in_ch, out_ch, 3))
        in_ch = out_ch
    shared_ch = in_ch
    back = {}
    for domain in DOMAINS:
        layers = []
        in_ch = shared_ch
        for item in BACK_END_PLAN + (None,):
            out_ch = config.node_channels if item is None else config.width(item)
            layers.append(init_conv(rng, in_ch, out_ch, 3, dilation=config.back_end_dilation))
            in_ch = out_ch
        back[domain] = layers
    return DflWeights(front, back)


def front_end(image: Tensor, weights: DflWeights) -> Tensor:
    """VGG-16 conv1_1..conv4_3 with ReLU and three max-pools: [B,3,H,W] -> [B,Cs,H/8,W/8]."""
    H, W = image.shape[2:]
    if H % 8 or W % 8:
        raise TensorError(f"image size {H}x{W} must be divisible by 8")
    x = image
    convs = iter(weights.front)
    for item in VGG_FRONT_PLAN:
        x = max_pool2d(x, 2) if item == "M" else relu(conv2d(x, next(convs)))
    return x


def back_end(f_share: Tensor, domain: int, weights: DflWeights) -> Tensor:
    """Eight dilated 3x3 convolutions, ReLU after each."""
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain tag {domain!r}; expected 1 or 2")
    x = f_share
    for conv in weights.back[domain]:
        x = relu(conv2d(x, conv))
    return x


def init_node_states(
    f_domain: Tensor,
    config: DflConfig,
    domain: int = COUNTING,
    scales: Optional[Sequence[int]] = None,
) -> FeaturePyramid:
    """One initial node state per pyramid scale, all at the input's spatial size.

    ``scales`` overrides ``config.scales``.
    """
    H, W = f_domain.shape[2:]
    states = []
    for bins in config.scales if scales is None else scales:
        if bins > min(H, W):
            raise TensorError(f"pyramid bins {bins} exceed feature size {H}x{W}")
        states.append(pyramid_pool(f_domain, bins))
    return FeaturePyramid(domain, states)
