"""Edge features from the three shallow depth levels, refined with channel attention."""

from __future__ import annotations

import numpy as np

from .nn import BatchNorm2d, Conv2d, Module
from .sacr import channel_attention
from .tensor import InvalidArgument, Tensor, ops


class BConv(Module):
    """conv3x3 -> batch norm -> ReLU."""

    def __init__(self, c: int, rng, dtype):
        self.conv = Conv2d(c, c, 3, rng, dtype)
        self.bn = BatchNorm2d(c, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.relu(self.bn(self.conv(x)))


class EdgeAware(Module):
    def __init__(self, level_dims: tuple, branch_width: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.branches = [Conv2d(c, branch_width, 1, rng, dtype) for c in level_dims[:3]]
        ce = 3 * branch_width
        self.bconv = BConv(ce, rng, dtype)
        self.ca_conv = Conv2d(ce, ce, 1, rng, dtype)
        self.out_channels = ce

    def edge_feature(self, st_d1: Tensor, st_d2: Tensor, st_d3: Tensor) -> Tensor:
        s = st_d1.shape[2:]
        if st_d2.shape[2] * 2 != s[0] or st_d3.shape[2] * 4 != s[0] \
                or st_d2.shape[3] * 2 != s[1] or st_d3.shape[3] * 4 != s[1]:
            raise InvalidArgument(f"levels are not consecutive pyramid levels: "
                                  f"{st_d1.shape}, {st_d2.shape}, {st_d3.shape}")
        b1 = self.branches[0](st_d1)
        b2 = ops.bilinear_upsample(self.branches[1](st_d2), 2)
        b3 = ops.bilinear_upsample(self.branches[2](st_d3), 4)
        return ops.concat([b1, b2, b3], axis=1)

    def refine(self, f_e: Tensor) -> Tensor:
        ca = channel_attention(self.bconv(f_e), self.ca_conv)
        return ops.add(ops.mul(f_e, ca), f_e)

    def __call__(self, st_d1: Tensor, st_d2: Tensor, st_d3: Tensor) -> tuple[Tensor, Tensor]:
        f_e = self.edge_feature(st_d1, st_d2, st_d3)
        return f_e, self.refine(f_e)
