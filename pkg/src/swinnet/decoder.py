"""Per-level modality fusion, top-down aggregation and the two prediction heads."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .nn import BatchNorm2d, Conv2d, Module
from .tensor import InvalidArgument, Tensor, ops


def fuse_modalities(f_c: Tensor, f_d: Tensor) -> Tensor:
    """concat(f_d + f_c, f_d * f_c) along channels."""
    if f_c.shape != f_d.shape:
        raise InvalidArgument(f"modality shapes differ: {f_c.shape} vs {f_d.shape}")
    return ops.concat([ops.add(f_d, f_c), ops.mul(f_d, f_c)], axis=1)


@dataclass
class DecoderState:
    ff: list
    f_s: Optional[Tensor] = None


class Decoder(Module):
    """FF_4 = F_4; FF_i = F_i + conv3x3(up2(FF_{i+1})) for i = 3, 2, 1.

    ``bn_relu`` appends batch norm and ReLU to each transition conv (ablation only).
    """

    def __init__(self, level_dims: tuple, rng: np.random.Generator, dtype=np.float32,
                 bn_relu: bool = False):
        # transition i maps 2*C_{i+1} -> 2*C_i; stored for i = 0, 1, 2
        self.convs = [Conv2d(2 * level_dims[i + 1], 2 * level_dims[i], 3, rng, dtype)
                      for i in range(3)]
        self.norms = [BatchNorm2d(2 * level_dims[i], dtype) for i in range(3)] if bn_relu else []

    def __call__(self, fused: list) -> DecoderState:
        if len(fused) != 4:
            raise InvalidArgument("decoder needs four fused levels")
        ff = [None, None, None, fused[3]]
        for i in (2, 1, 0):
            conv = self.convs[i]
            up = ops.bilinear_upsample(ff[i + 1], 2)
            if up.shape[1] != conv.weight.shape[1]:
                raise InvalidArgument(f"level {i + 1}: conv expects {conv.weight.shape[1]} channels, "
                                      f"got {up.shape[1]}")
            y = conv(up)
            if self.norms:
                y = ops.relu(self.norms[i](y))
            if y.shape != fused[i].shape:
                raise InvalidArgument(f"level {i + 1}: {y.shape} vs fused {fused[i].shape}")
            ff[i] = ops.add(fused[i], y)
        return DecoderState(ff)


class Heads(Module):
    """Edge and saliency logit maps, each conv3x3 -> 1 channel then x4 upsampling."""

    def __init__(self, edge_channels: int, ff1_channels: int, rng, dtype=np.float32,
                 use_edge: bool = True):
        self.use_edge = use_edge
        s_in = ff1_channels + (edge_channels if use_edge else 0)
        self.sal_conv = Conv2d(s_in, 1, 3, rng, dtype)
        self.edge_conv = Conv2d(edge_channels, 1, 3, rng, dtype) if use_edge else None

    def __call__(self, f_e_refined: Optional[Tensor], ff1: Tensor):
        if not self.use_edge:
            return None, ops.bilinear_upsample(self.sal_conv(ff1), 4), ff1
        if f_e_refined.shape[2:] != ff1.shape[2:]:
            raise InvalidArgument(f"edge {f_e_refined.shape} and FF_1 {ff1.shape} differ spatially")
        f_s = ops.concat([f_e_refined, ff1], axis=1)
        s = ops.bilinear_upsample(self.sal_conv(f_s), 4)
        s_e = ops.bilinear_upsample(self.edge_conv(f_e_refined), 4)
        return s_e, s, f_s


def edge_guided_head(f_e_refined: Tensor, ff1: Tensor, heads: Heads) -> tuple[Tensor, Tensor]:
    s_e, s, _ = heads(f_e_refined, ff1)
    return s_e, s
