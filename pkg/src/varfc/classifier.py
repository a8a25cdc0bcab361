"""Mini residual classifier, Convx partitioning and edge/cloud splitting."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import Conv2d, Linear, Module
from .tensor import Tensor

DEFAULT_STAGES = ((3, 16, 1), (4, 32, 2), (6, 64, 2), (3, 128, 2))


@dataclass(frozen=True)
class ClassifierSpec:
    """Stem conv, then stages of (num_residual_blocks, channels, stride), then a linear head.

    The default copies ResNet-50's 3-4-6-3 stage layout at toy width.
    """

    stages: tuple = DEFAULT_STAGES
    stem_channels: int = 16
    num_classes: int = 8
    input_shape: tuple = (3, 32, 32)

    def __post_init__(self):
        if not self.stages or any(n < 1 for n, _, _ in self.stages):
            raise ValueError("every stage needs at least one residual block")


class ResidualBlock(Module):
    """x + conv(GeLU(conv(x))), 1x1 projection shortcut when the shape changes.

    No activation after the add, so the identity path carries signal through
    deep stacks without normalisation layers.
    """

    def __init__(self, cin, cout, stride, rng):
        self.conv1 = Conv2d(cin, cout, 3, stride, rng=rng)
        self.conv2 = Conv2d(cout, cout, 3, 1, zero_init=True, rng=rng)
        self.shortcut = Conv2d(cin, cout, 1, stride, padding=0, rng=rng) if (cin != cout or stride != 1) else None

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv2(T.gelu(self.conv1(x)))
        s = self.shortcut(x) if self.shortcut is not None else x
        return s + h


class Stem(Module):
    def __init__(self, cin, cout, rng):
        self.conv = Conv2d(cin, cout, 3, 1, rng=rng)

    def forward(self, x):
        return T.gelu(self.conv(x))


class Head(Module):
    def __init__(self, cin, num_classes, rng):
        self.fc = Linear(cin, num_classes, rng=rng)

    def forward(self, x):
        return self.fc(T.global_avg_pool(T.gelu(x)))


class Classifier(Module):
    def __init__(self, spec: ClassifierSpec = ClassifierSpec(), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.spec = spec
        self.stem = Stem(spec.input_shape[0], spec.stem_channels, rng)
        blocks, cin = [], spec.stem_channels
        for n, ch, stride in spec.stages:
            for i in range(n):
                blocks.append(ResidualBlock(cin, ch, stride if i == 0 else 1, rng))
                cin = ch
        self.blocks = blocks
        self.head = Head(cin, spec.num_classes, rng)

    def forward(self, x: Tensor) -> Tensor:
        _check_input(x, self.spec.input_shape)
        h = self.stem(x)
        for b in self.blocks:
            h = b(h)
        return self.head(h)


def _check_input(x: Tensor, shape: tuple) -> None:
    if x.ndim != len(shape) + 1 or tuple(x.shape[1:]) != tuple(shape):
        raise ValueError(f"expected input of shape (N, {', '.join(map(str, shape))}), got {x.shape}")


@dataclass(frozen=True)
class ConvxGroup:
    stage: int
    blocks: tuple  # global residual-block indices
    out_shape: tuple  # (C, H, W)


@dataclass(frozen=True)
class PartitionPlan:
    groups: tuple

    @property
    def n(self) -> int:
        return len(self.groups)


def group_sizes(num_blocks: int) -> list[int]:
    """One group of 3 first when the count is odd, then groups of 2."""
    if num_blocks < 2:
        return [num_blocks]
    sizes = [3] if num_blocks % 2 else []
    sizes += [2] * ((num_blocks - sum(sizes)) // 2)
    return sizes


def partition(spec: ClassifierSpec) -> PartitionPlan:
    groups, idx = [], 0
    _, h, w = spec.input_shape
    for s, (n, ch, stride) in enumerate(spec.stages):
        h, w = _down(h, stride), _down(w, stride)
        for size in group_sizes(n):
            groups.append(ConvxGroup(s, tuple(range(idx, idx + size)), (ch, h, w)))
            idx += size
    return PartitionPlan(tuple(groups))


def _down(n: int, stride: int) -> int:
    # 3x3 conv, padding 1
    return (n + 2 - 3) // stride + 1


class EdgeNet(Module):
    def __init__(self, stem, blocks, input_shape):
        self.stem, self.blocks, self.input_shape = stem, blocks, input_shape

    def forward(self, x: Tensor) -> Tensor:
        _check_input(x, self.input_shape)
        h = self.stem(x)
        for b in self.blocks:
            h = b(h)
        return h


class CloudNet(Module):
    def __init__(self, blocks, head, feature_shape):
        self.blocks, self.head, self.feature_shape = blocks, head, feature_shape

    def forward(self, h: Tensor) -> Tensor:
        _check_input(h, self.feature_shape)
        for b in self.blocks:
            h = b(h)
        return self.head(h)


@dataclass
class SplitConfig:
    k: int
    plan: PartitionPlan
    edge: EdgeNet
    cloud: CloudNet
    split_shape: tuple = field(default=())

    def forward_edge(self, x: Tensor) -> Tensor:
        return self.edge(x)

    def forward_cloud(self, feature: Tensor) -> Tensor:
        return self.cloud(feature)


def split(model: Classifier, k: int, plan: PartitionPlan | None = None) -> SplitConfig:
    """Put the stem and the first ``k`` Convx groups on the edge, the rest in the cloud.

    The sub-networks share parameter objects with ``model``.
    """
    plan = plan or partition(model.spec)
    if not 1 <= k <= plan.n:
        raise ValueError(f"k={k} out of range, valid Config.k values are 1..{plan.n}")
    cut = plan.groups[k - 1].blocks[-1] + 1
    shape = plan.groups[k - 1].out_shape
    edge = EdgeNet(model.stem, model.blocks[:cut], model.spec.input_shape)
    cloud = CloudNet(model.blocks[cut:], model.head, shape)
    return SplitConfig(k, plan, edge, cloud, shape)
