"""Spatial alignment and channel re-calibration of the two modality streams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Conv2d, Module
from .tensor import InvalidArgument, Tensor, ops


def spatial_attention(x: Tensor, conv: Conv2d) -> Tensor:
    """sigmoid(conv3x3(max over channels)) -> N x 1 x h x w."""
    return ops.sigmoid(conv(ops.channel_max_pool(x)))


def channel_attention(x: Tensor, conv: Conv2d) -> Tensor:
    """sigmoid(conv1x1(global spatial max)) -> N x C x 1 x 1."""
    return ops.sigmoid(conv(ops.global_max_pool_spatial(x)))


@dataclass
class SacrState:
    sa_map: Tensor
    st1_c: Tensor
    st1_d: Tensor
    ca_c: Tensor
    ca_d: Tensor
    f_c: Tensor
    f_d: Tensor


class SACR(Module):
    """One level of the module: a shared spatial map, then per-modality channel weights.

    ``recalibrate_aligned`` multiplies the channel weights into the aligned
    features instead of the original ones (ablation only).
    """

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32,
                 recalibrate_aligned: bool = False):
        self.sa_conv = Conv2d(1, 1, 3, rng, dtype)
        self.ca_conv_c = Conv2d(channels, channels, 1, rng, dtype)
        self.ca_conv_d = Conv2d(channels, channels, 1, rng, dtype)
        self.recalibrate_aligned = recalibrate_aligned

    def __call__(self, st_c: Tensor, st_d: Tensor) -> SacrState:
        if st_c.shape != st_d.shape:
            raise InvalidArgument(f"modality shapes differ: {st_c.shape} vs {st_d.shape}")
        sa = spatial_attention(ops.mul(st_c, st_d), self.sa_conv)
        st1_c = ops.mul(sa, st_c)
        st1_d = ops.mul(sa, st_d)
        ca_c = channel_attention(st1_c, self.ca_conv_c)
        ca_d = channel_attention(st1_d, self.ca_conv_d)
        base_c, base_d = (st1_c, st1_d) if self.recalibrate_aligned else (st_c, st_d)
        return SacrState(sa, st1_c, st1_d, ca_c, ca_d, ops.mul(ca_c, base_c), ops.mul(ca_d, base_d))


class DEM(Module):
    """Depth-enhancement baseline: channel then 7x7 spatial attention on depth, added to color."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        self.ca_conv = Conv2d(channels, channels, 1, rng, dtype)
        self.sa_conv = Conv2d(1, 1, 7, rng, dtype)

    def __call__(self, st_c: Tensor, st_d: Tensor) -> SacrState:
        if st_c.shape != st_d.shape:
            raise InvalidArgument(f"modality shapes differ: {st_c.shape} vs {st_d.shape}")
        ca = channel_attention(st_d, self.ca_conv)
        d1 = ops.mul(ca, st_d)
        sa = spatial_attention(d1, self.sa_conv)
        d2 = ops.mul(sa, d1)
        return SacrState(sa, st_c, d1, ca, ca, ops.add(st_c, d2), d2)


class Passthrough(Module):
    """No fusion enhancement: F = ST for both modalities."""

    def __call__(self, st_c: Tensor, st_d: Tensor) -> SacrState:
        return SacrState(None, st_c, st_d, None, None, st_c, st_d)
