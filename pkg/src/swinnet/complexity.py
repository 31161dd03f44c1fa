"""Closed-form parameter and multiply-accumulate counts for a model config.

Counted: linear layers, convolutions, and the two attention matmuls (scores
and weighted values). Not counted: normalization, activations, softmax,
element-wise products and bilinear resampling. ``flops`` is reported both as
MACs and as 2 * MACs; the published table's convention matches MACs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .backbone import BackboneConfig
from .model import ModelConfig


@dataclass
class Cost:
    params: int = 0
    macs: int = 0

    def __add__(self, other: "Cost") -> "Cost":
        return Cost(self.params + other.params, self.macs + other.macs)

    def __mul__(self, k: int) -> "Cost":
        return Cost(self.params * k, self.macs * k)

    __rmul__ = __mul__


def linear(fan_in: int, fan_out: int, tokens: int, bias: bool = True) -> Cost:
    return Cost(fan_in * fan_out + (fan_out if bias else 0), tokens * fan_in * fan_out)


def conv(cin: int, cout: int, k: int, h: int, w: int, bias: bool = True) -> Cost:
    return Cost(cin * cout * k * k + (cout if bias else 0), h * w * cin * cout * k * k)


def norm(c: int) -> Cost:
    return Cost(2 * c, 0)


def swin_block(dim: int, heads: int, window: int, side: int, mlp_ratio: float) -> Cost:
    n = side * side
    hidden = int(dim * mlp_ratio)
    c = norm(dim) * 2
    c += linear(dim, 3 * dim, n) + linear(dim, dim, n)
    c += Cost((2 * window - 1) ** 2 * heads, 0)
    # q k^T and attn v: each token attends to window^2 tokens across all heads
    c += Cost(0, 2 * n * window * window * dim)
    c += linear(dim, hidden, n) + linear(hidden, dim, n)
    return c


def backbone_cost(cfg: BackboneConfig) -> dict:
    out = {}
    p = cfg.patch_size
    side0 = cfg.side(0)
    out["patch_embed"] = linear(cfg.in_chans * p * p, cfg.embed_dim, side0 * side0) + norm(cfg.embed_dim)
    for i in range(4):
        d, s = cfg.dim(i), cfg.side(i)
        w, _ = cfg.window(i)
        stage = Cost()
        for _ in range(cfg.depths[i]):
            stage += swin_block(d, cfg.num_heads[i], w, s, cfg.mlp_ratio)
        stage += norm(d)  # per-level output norm
        if i < 3:
            half = s // 2
            stage += norm(4 * d) + linear(4 * d, 2 * d, half * half, bias=False)
        out[f"stage{i + 1}"] = stage
    return out


def sacr_cost(c: int, side: int) -> Cost:
    return conv(1, 1, 3, side, side) + conv(c, c, 1, 1, 1) * 2


def dem_cost(c: int, side: int) -> Cost:
    return conv(c, c, 1, 1, 1) + conv(1, 1, 7, side, side)


def edge_cost(dims: tuple, sides: tuple, width: int) -> Cost:
    ce = 3 * width
    c = Cost()
    for i in range(3):
        c += conv(dims[i], width, 1, sides[i], sides[i])
    c += conv(ce, ce, 3, sides[0], sides[0]) + norm(ce)  # BConv
    c += conv(ce, ce, 1, 1, 1)
    return c


def decoder_cost(dims: tuple, sides: tuple, bn_relu: bool = False) -> Cost:
    c = Cost()
    for i in range(3):
        c += conv(2 * dims[i + 1], 2 * dims[i], 3, sides[i], sides[i])
        if bn_relu:
            c += norm(2 * dims[i])
    return c


def heads_cost(dims: tuple, side: int, edge_channels: int, use_edge: bool) -> Cost:
    if not use_edge:
        return conv(2 * dims[0], 1, 3, side, side)
    return conv(2 * dims[0] + edge_channels, 1, 3, side, side) + conv(edge_channels, 1, 3, side, side)


@dataclass
class ComplexityReport:
    rows: dict = field(default_factory=dict)  # module -> Cost
    variants: dict = field(default_factory=dict)  # "SwinNet-fuse" etc. -> Cost

    @property
    def total(self) -> Cost:
        t = Cost()
        for c in self.rows.values():
            t += c
        return t

    @property
    def params(self) -> int:
        return self.total.params

    @property
    def macs(self) -> int:
        return self.total.macs

    @property
    def flops(self) -> int:
        return 2 * self.macs

    def table(self) -> str:
        lines = [f"{'module':<16} {'params(M)':>10} {'GMACs':>9}"]
        for name, c in self.rows.items():
            lines.append(f"{name:<16} {c.params / 1e6:>10.3f} {c.macs / 1e9:>9.3f}")
        t = self.total
        lines.append(f"{'total':<16} {t.params / 1e6:>10.3f} {t.macs / 1e9:>9.3f}")
        lines.append(f"GFLOPs as MACs: {t.macs / 1e9:.2f}; as 2*MACs: {2 * t.macs / 1e9:.2f}")
        lines.append("")
        lines.append(f"{'variant':<16} {'params(M)':>10} {'GMACs':>9}")
        for name, c in self.variants.items():
            lines.append(f"{name:<16} {c.params / 1e6:>10.3f} {c.macs / 1e9:>9.3f}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"rows": {k: {"params": c.params, "macs": c.macs} for k, c in self.rows.items()},
                "total": {"params": self.params, "macs": self.macs, "flops_2x": self.flops},
                "variants": {k: {"params": c.params, "macs": c.macs} for k, c in self.variants.items()}}


def count_params_flops(cfg: ModelConfig, input_size: int | None = None) -> ComplexityReport:
    """Per-module counts for ``cfg`` at ``input_size`` (defaults to the config's image size).

    Variant rows drop one module each: SACR (``SwinNet-fuse``), the edge
    module with its head (``SwinNet-edge``) and the decoder transition
    convolutions (``SwinNet-decoder``).
    """
    bb = cfg.backbone if input_size is None else _resized(cfg.backbone, input_size)
    cfg.validate()
    bb.validate()
    dims = tuple(bb.dim(i) for i in range(4))
    sides = tuple(bb.side(i) for i in range(4))
    ce = 3 * cfg.edge_branch_width

    stream = Cost()
    for c in backbone_cost(bb).values():
        stream += c
    rows = {"rgb_backbone": stream, "aux_backbone": stream}
    if cfg.ablate == "dem":
        rows["fusion"] = sum((dem_cost(dims[i], sides[i]) for i in range(4)), Cost())
    elif cfg.ablate == "fuse_only":
        rows["fusion"] = Cost()
    else:
        rows["fusion"] = sum((sacr_cost(dims[i], sides[i]) for i in range(4)), Cost())
    rows["edge"] = edge_cost(dims, sides, cfg.edge_branch_width) if cfg.use_edge else Cost()
    rows["decoder"] = decoder_cost(dims, sides, cfg.decoder_bn_relu)
    rows["heads"] = heads_cost(dims, sides[0], ce, cfg.use_edge)
    report = ComplexityReport(rows)

    full = report.total
    no_edge = dict(rows, edge=Cost(), heads=heads_cost(dims, sides[0], ce, False))
    report.variants = {
        "SwinNet": full,
        "SwinNet-fuse": _sum(dict(rows, fusion=Cost())),
        "SwinNet-edge": _sum(no_edge),
        "SwinNet-decoder": _sum(dict(rows, decoder=Cost())),
    }
    return report


def _sum(rows: dict) -> Cost:
    return sum(rows.values(), Cost())


def _resized(bb: BackboneConfig, size: int) -> BackboneConfig:
    return replace(bb, img_size=size)
