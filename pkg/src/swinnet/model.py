"""The assembled two-stream saliency network."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .backbone import BackboneConfig, PyramidFeatures, SwinBackbone
from .decoder import Decoder, DecoderState, Heads, fuse_modalities
from .edge import EdgeAware
from .nn import Module
from .sacr import DEM, SACR, Passthrough, SacrState
from .tensor import InvalidArgument, Tensor

ABLATIONS = (None, "no_edge", "dem", "fuse_only")


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig.toy)
    edge_branch_width: int = 8
    ablate: Optional[str] = None
    decoder_bn_relu: bool = False
    recalibrate_aligned: bool = False

    @classmethod
    def toy(cls, **kw) -> "ModelConfig":
        return cls(**kw)

    @classmethod
    def full(cls, **kw) -> "ModelConfig":
        kw.setdefault("backbone", BackboneConfig.full())
        kw.setdefault("edge_branch_width", 32)
        return cls(**kw)

    @classmethod
    def for_scale(cls, scale: str, **kw) -> "ModelConfig":
        if scale not in ("toy", "full"):
            raise InvalidArgument(f"unknown scale {scale!r}")
        return cls.full(**kw) if scale == "full" else cls.toy(**kw)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        bb = d.pop("backbone", {})
        bb = {k: tuple(v) if isinstance(v, list) else v for k, v in bb.items()}
        return cls(backbone=BackboneConfig(**bb), **d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["backbone"].items()}
        return d

    def validate(self) -> None:
        self.backbone.validate()
        if self.ablate not in ABLATIONS:
            raise InvalidArgument(f"unknown ablation {self.ablate!r}; choose from {ABLATIONS[1:]}")
        if self.edge_branch_width < 1:
            raise InvalidArgument("edge_branch_width must be >= 1")

    @property
    def use_edge(self) -> bool:
        return self.ablate != "no_edge"

    def hash(self) -> bytes:
        """32-byte SHA-256 of the canonical JSON form; keys checkpoints to configs."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).digest()


@dataclass
class Predictions:
    s_logits: Tensor
    se_logits: Optional[Tensor]
    pyramid_c: Optional[PyramidFeatures] = None
    pyramid_d: Optional[PyramidFeatures] = None
    sacr: Optional[list] = None
    f_e: Optional[Tensor] = None
    f_e_refined: Optional[Tensor] = None
    decoder: Optional[DecoderState] = None


class SwinNet(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        bb = cfg.backbone
        dims = tuple(bb.dim(i) for i in range(4))
        self.rgb_backbone = SwinBackbone(bb, rng, dtype)
        self.aux_backbone = SwinBackbone(bb, rng, dtype)
        if cfg.ablate == "dem":
            self.fusion = [DEM(c, rng, dtype) for c in dims]
        elif cfg.ablate == "fuse_only":
            self.fusion = [Passthrough() for _ in dims]
        else:
            self.fusion = [SACR(c, rng, dtype, cfg.recalibrate_aligned) for c in dims]
        self.edge = EdgeAware(dims, cfg.edge_branch_width, rng, dtype) if cfg.use_edge else None
        self.decoder = Decoder(dims, rng, dtype, cfg.decoder_bn_relu)
        self.heads = Heads(3 * cfg.edge_branch_width, 2 * dims[0], rng, dtype, cfg.use_edge)

    def __call__(self, rgb: Tensor, aux: Tensor) -> Predictions:
        if rgb.shape != aux.shape:
            raise InvalidArgument(f"rgb {rgb.shape} and aux {aux.shape} differ")
        pc = self.rgb_backbone(rgb)
        pd = self.aux_backbone(aux)
        states: list[SacrState] = [self.fusion[i](pc[i], pd[i]) for i in range(4)]
        fused = [fuse_modalities(s.f_c, s.f_d) for s in states]
        dec = self.decoder(fused)
        f_e = f_e_ref = None
        if self.edge is not None:
            f_e, f_e_ref = self.edge(pd[0], pd[1], pd[2])
        s_e, s, f_s = self.heads(f_e_ref, dec.ff[0])
        dec.f_s = f_s
        return Predictions(s, s_e, pc, pd, states, f_e, f_e_ref, dec)
