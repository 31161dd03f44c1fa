"""Hierarchical shifted-window transformer producing a four-level pyramid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .nn import LayerNorm, Linear, Module, param, trunc_normal
from .tensor import InvalidArgument, Tensor, ops


@dataclass(frozen=True)
class BackboneConfig:
    img_size: int = 96
    patch_size: int = 4
    in_chans: int = 3
    embed_dim: int = 32
    depths: tuple = (2, 2, 2, 2)
    num_heads: tuple = (2, 2, 4, 4)
    window_size: int = 4
    mlp_ratio: float = 4.0

    @classmethod
    def toy(cls, **kw) -> "BackboneConfig":
        return cls(**kw)

    @classmethod
    def full(cls, **kw) -> "BackboneConfig":
        base = dict(img_size=384, embed_dim=128, depths=(2, 2, 18, 2),
                    num_heads=(4, 8, 16, 32), window_size=12)
        base.update(kw)
        return cls(**base)

    def validate(self) -> None:
        if len(self.depths) != 4 or len(self.num_heads) != 4:
            raise InvalidArgument("exactly four stages are required")
        if self.img_size % (self.patch_size * 8):
            raise InvalidArgument(f"img_size {self.img_size} must be divisible by "
                                  f"{self.patch_size * 8}")
        for i, h in enumerate(self.num_heads):
            if self.dim(i) % h:
                raise InvalidArgument(f"stage {i + 1}: dim {self.dim(i)} not divisible by {h} heads")

    def dim(self, stage: int) -> int:
        return self.embed_dim * 2 ** stage

    def side(self, stage: int) -> int:
        return self.img_size // (self.patch_size * 2 ** stage)

    def window(self, stage: int) -> tuple[int, int]:
        """(window, shift) for a stage.

        A grid no larger than the window uses one window and no shift. A grid
        the window does not tile uses the largest divisor below the window.
        """
        side = self.side(stage)
        if side <= self.window_size:
            return side, 0
        w = max(d for d in range(1, self.window_size + 1) if side % d == 0)
        return w, w // 2


# ---------------------------------------------------------------------------
# windowing helpers


def window_partition(x: Tensor, w: int) -> Tensor:
    """N x H x W x C -> (N * H/w * W/w) x w^2 x C, windows in row-major order."""
    n, h, wd, c = x.shape
    if h % w or wd % w:
        raise InvalidArgument(f"grid {h}x{wd} not divisible by window {w}")
    t = ops.reshape(x, (n, h // w, w, wd // w, w, c))
    t = ops.transpose(t, (0, 1, 3, 2, 4, 5))
    return ops.reshape(t, (n * (h // w) * (wd // w), w * w, c))


def window_reverse(windows: Tensor, w: int, h: int, wd: int) -> Tensor:
    c = windows.shape[-1]
    n = windows.shape[0] // ((h // w) * (wd // w))
    t = ops.reshape(windows, (n, h // w, wd // w, w, w, c))
    t = ops.transpose(t, (0, 1, 3, 2, 4, 5))
    return ops.reshape(t, (n, h, wd, c))


@lru_cache(maxsize=None)
def relative_position_index(w: int) -> np.ndarray:
    """w^2 x w^2 indices into the (2w-1)^2-row bias table."""
    coords = np.stack(np.meshgrid(np.arange(w), np.arange(w), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    rel = rel.transpose(1, 2, 0) + (w - 1)
    idx = rel[..., 0] * (2 * w - 1) + rel[..., 1]
    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=None)
def shift_attention_mask(h: int, wd: int, w: int, shift: int) -> np.ndarray:
    """nW x w^2 x w^2 additive mask: 0 within a region, -100 across regions."""
    label = np.zeros((h, wd), dtype=np.int64)
    cnt = 0
    for hs in (slice(0, -w), slice(-w, -shift), slice(-shift, None)):
        for ws in (slice(0, -w), slice(-w, -shift), slice(-shift, None)):
            label[hs, ws] = cnt
            cnt += 1
    lw = label.reshape(h // w, w, wd // w, w).transpose(0, 2, 1, 3).reshape(-1, w * w)
    mask = np.where(lw[:, :, None] != lw[:, None, :], -100.0, 0.0)
    mask.setflags(write=False)
    return mask


# ---------------------------------------------------------------------------
# layers


class WindowAttention(Module):
    def __init__(self, dim: int, window: int, heads: int, rng: np.random.Generator, dtype):
        self.qkv = Linear(dim, 3 * dim, rng, dtype)
        self.proj = Linear(dim, dim, rng, dtype)
        self.relative_position_bias_table = param(
            trunc_normal(rng, ((2 * window - 1) ** 2, heads)), dtype)
        self.window = window
        self.heads = heads
        self.dim = dim

    def relative_bias(self) -> Tensor:
        t = self.window ** 2
        b = ops.take(self.relative_position_bias_table, relative_position_index(self.window).reshape(-1))
        return ops.transpose(ops.reshape(b, (t, t, self.heads)), (2, 0, 1))

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None,
                 return_attn: bool = False):
        bw, t, c = x.shape
        if c % self.heads:
            raise InvalidArgument(f"dim {c} not divisible by {self.heads} heads")
        hd = c // self.heads
        qkv = ops.reshape(self.qkv(x), (bw, t, 3, self.heads, hd))
        qkv = ops.transpose(qkv, (2, 0, 3, 1, 4))
        q = ops.scale(ops.getitem(qkv, 0), 1.0 / math.sqrt(hd))
        k = ops.getitem(qkv, 1)
        v = ops.getitem(qkv, 2)
        attn = ops.matmul(q, ops.transpose(k, (0, 1, 3, 2)))
        attn = ops.add_bias(attn, self.relative_bias())
        if mask is not None:
            nw = mask.shape[0]
            if mask.shape != (nw, t, t) or bw % nw:
                raise InvalidArgument(f"mask shape {mask.shape} incompatible with {bw} windows of {t}")
            m = Tensor(mask[:, None].astype(x.dtype))
            attn = ops.reshape(attn, (bw // nw, nw, self.heads, t, t))
            attn = ops.reshape(ops.add_bias(attn, m), (bw, self.heads, t, t))
        attn = ops.softmax(attn)
        out = ops.matmul(attn, v)
        out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (bw, t, c))
        out = self.proj(out)
        return (out, attn) if return_attn else out


class Mlp(Module):
    def __init__(self, dim: int, hidden: int, rng, dtype):
        self.fc1 = Linear(dim, hidden, rng, dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class SwinBlock(Module):
    def __init__(self, dim: int, heads: int, window: int, shift: int, mlp_ratio: float, rng, dtype):
        self.norm1 = LayerNorm(dim, dtype)
        self.attn = WindowAttention(dim, window, heads, rng, dtype)
        self.norm2 = LayerNorm(dim, dtype)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng, dtype)
        self.window = window
        self.shift = shift

    def __call__(self, x: Tensor, shift: Optional[int] = None) -> Tensor:
        shift = self.shift if shift is None else shift
        _, h, wd, c = x.shape
        w = self.window
        y = self.norm1(x)
        mask = None
        if shift:
            y = ops.roll(y, (-shift, -shift), (1, 2))
            mask = shift_attention_mask(h, wd, w, shift)
        y = window_reverse(self.attn(window_partition(y, w), mask), w, h, wd)
        if shift:
            y = ops.roll(y, (shift, shift), (1, 2))
        x = ops.add(x, y)
        return ops.add(x, self.mlp(self.norm2(x)))


class PatchEmbed(Module):
    """Non-overlapping p x p patches, linear projection, layer norm."""

    def __init__(self, cfg: BackboneConfig, rng, dtype):
        p = cfg.patch_size
        self.proj = Linear(cfg.in_chans * p * p, cfg.embed_dim, rng, dtype)
        self.norm = LayerNorm(cfg.embed_dim, dtype)
        self.patch = p

    def __call__(self, image: Tensor) -> Tensor:
        n, c, h, w = image.shape
        p = self.patch
        if h % p or w % p:
            raise InvalidArgument(f"image {h}x{w} not divisible by patch {p}")
        t = ops.reshape(image, (n, c, h // p, p, w // p, p))
        t = ops.transpose(t, (0, 2, 4, 1, 3, 5))
        t = ops.reshape(t, (n, (h // p) * (w // p), c * p * p))
        return self.norm(self.proj(t))


class PatchMerging(Module):
    def __init__(self, dim: int, rng, dtype):
        self.norm = LayerNorm(4 * dim, dtype)
        self.reduction = Linear(4 * dim, 2 * dim, rng, dtype, bias=False)

    def __call__(self, x: Tensor) -> Tensor:
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise InvalidArgument(f"patch merging needs even extents, got {h}x{w}")
        t = ops.reshape(x, (n, h // 2, 2, w // 2, 2, c))
        # channel order: (0,0), (1,0), (0,1), (1,1) as (row, col) offsets
        t = ops.transpose(t, (0, 1, 3, 4, 2, 5))
        t = ops.reshape(t, (n, h // 2, w // 2, 4 * c))
        return self.reduction(self.norm(t))


@dataclass
class PyramidFeatures:
    st: list = field(default_factory=list)

    def __getitem__(self, i: int) -> Tensor:
        return self.st[i]

    def __len__(self) -> int:
        return len(self.st)

    def shapes(self) -> list[tuple]:
        return [t.shape for t in self.st]


class SwinBackbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.patch_embed = PatchEmbed(cfg, rng, dtype)
        self.stages = []
        self.merges = []
        self.out_norms = []
        for i in range(4):
            w, s = cfg.window(i)
            stage = Stage([SwinBlock(cfg.dim(i), cfg.num_heads[i], w, 0 if j % 2 == 0 else s,
                                     cfg.mlp_ratio, rng, dtype)
                           for j in range(cfg.depths[i])])
            self.stages.append(stage)
            if i < 3:
                self.merges.append(PatchMerging(cfg.dim(i), rng, dtype))
            self.out_norms.append(LayerNorm(cfg.dim(i), dtype))

    def __call__(self, image: Tensor) -> PyramidFeatures:
        cfg = self.cfg
        if image.ndim != 4 or image.shape[1] != cfg.in_chans or image.shape[2:] != (cfg.img_size,) * 2:
            raise InvalidArgument(f"expected N x {cfg.in_chans} x {cfg.img_size} x {cfg.img_size}, "
                                  f"got {image.shape}")
        n = image.shape[0]
        side = cfg.side(0)
        x = ops.reshape(self.patch_embed(image), (n, side, side, cfg.embed_dim))
        levels = []
        for i in range(4):
            x = self.stages[i](x)
            y = self.out_norms[i](x)
            levels.append(ops.transpose(y, (0, 3, 1, 2)))
            if i < 3:
                x = self.merges[i](x)
        return PyramidFeatures(levels)


class Stage(Module):
    def __init__(self, blocks: list):
        self.blocks = blocks

    def __call__(self, x: Tensor) -> Tensor:
        for b in self.blocks:
            x = b(x)
        return x
