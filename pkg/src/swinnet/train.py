"""Losses, Adam, learning-rate schedule, augmentation and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import dataio
from .model import SwinNet
from .tensor import GradTape, InvalidArgument, NumericDomainError, Tensor, ops

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# losses


def bce_loss(logits: Tensor, mask: Tensor) -> Tensor:
    return ops.bce_with_logits(logits, mask)


@dataclass
class LossBreakdown:
    l_e: Tensor
    l_s: Tensor
    total: Tensor

    def values(self) -> tuple[float, float, float]:
        return self.l_e.item(), self.l_s.item(), self.total.item()


def total_loss(s_logits: Tensor, se_logits: Optional[Tensor], saliency: Tensor,
               edge: Tensor) -> LossBreakdown:
    """Saliency BCE plus edge BCE with unit weights; no edge head means l_e = 0."""
    l_s = bce_loss(s_logits, saliency)
    if se_logits is None:
        l_e = Tensor(np.zeros((), dtype=s_logits.dtype))
        return LossBreakdown(l_e, l_s, l_s)
    l_e = bce_loss(se_logits, edge)
    return LossBreakdown(l_e, l_s, ops.add(l_e, l_s))


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "OptimizerState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: OptimizerState,
              lr: float) -> None:
    """In-place bias-corrected Adam update. Aborts before touching anything on NaN/inf."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericDomainError("non-finite gradient; step aborted")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        upd = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= upd.astype(p.dtype, copy=False)


# ---------------------------------------------------------------------------
# schedule and config


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 5e-5
    decay_every: int = 100
    decay_factor: float = 10.0
    batch: int = 3
    epochs: int = 200
    seed: int = 0
    input_size: int = 384
    augment: bool = True
    checkpoint_every: int = 10
    max_steps: Optional[int] = None

    @classmethod
    def toy(cls, **kw) -> "TrainConfig":
        base = dict(batch=2, input_size=96)
        base.update(kw)
        return cls(**base)

    def validate(self) -> None:
        if self.lr0 <= 0:
            raise InvalidArgument("lr0 must be positive")
        if self.batch < 1:
            raise InvalidArgument("batch must be >= 1")
        if self.epochs < 1:
            raise InvalidArgument("epochs must be >= 1")


def lr_schedule(epoch: int, cfg: TrainConfig = TrainConfig()) -> float:
    if epoch < 0:
        raise InvalidArgument("epoch must be >= 0")
    return cfg.lr0 * cfg.decay_factor ** -(epoch // cfg.decay_every)


# ---------------------------------------------------------------------------
# augmentation


def rotate90(img: np.ndarray, k: int = 1) -> np.ndarray:
    """Rotate the last two axes clockwise k times: (r, c) -> (c, H-1-r)."""
    return np.rot90(img, -k, axes=(-2, -1)).copy()


def hflip(img: np.ndarray) -> np.ndarray:
    return img[..., ::-1].copy()


def border_clip(img: np.ndarray, box: tuple, nearest: bool = False) -> np.ndarray:
    top, bottom, left, right = box
    h, w = img.shape[-2:]
    crop = img[..., top:h - bottom, left:w - right]
    if nearest:
        return dataio.resize_nearest(crop, h, w)
    return dataio.resize_bilinear(crop, h, w)


def augment(sample: dataio.Sample, rng: np.random.Generator, max_clip: float = 0.1) -> dataio.Sample:
    """Random flip, 90-degree rotation and border clip, each with probability 0.5.

    Images and saliency mask share every transform; the edge mask is
    recomputed from the transformed saliency mask.
    """
    rgb, aux, sal = sample.rgb, sample.aux, sample.saliency
    do_flip, do_rot, do_clip = rng.random(3) < 0.5
    if do_flip:
        rgb, aux, sal = hflip(rgb), hflip(aux), hflip(sal)
    if do_rot:
        k = int(rng.integers(1, 4))
        rgb, aux, sal = rotate90(rgb, k), rotate90(aux, k), rotate90(sal, k)
    if do_clip:
        h, w = sal.shape
        lim_h, lim_w = int(h * max_clip), int(w * max_clip)
        box = (int(rng.integers(0, lim_h + 1)), int(rng.integers(0, lim_h + 1)),
               int(rng.integers(0, lim_w + 1)), int(rng.integers(0, lim_w + 1)))
        rgb, aux = border_clip(rgb, box), border_clip(aux, box)
        sal = border_clip(sal, box, nearest=True)
    if not (do_flip or do_rot or do_clip):
        return sample
    return replace(sample, rgb=rgb, aux=aux, saliency=sal, edge=dataio.canny_edges(sal))


# ---------------------------------------------------------------------------
# loop


def collate(samples: Sequence[dataio.Sample], dtype) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    rgb = Tensor(np.stack([s.rgb for s in samples]).astype(dtype))
    aux = Tensor(np.stack([s.aux for s in samples]).astype(dtype))
    sal = Tensor(np.stack([s.saliency[None] for s in samples]).astype(dtype))
    edge = Tensor(np.stack([s.edge[None] for s in samples]).astype(dtype))
    return rgb, aux, sal, edge


@dataclass
class StepRecord:
    epoch: int
    step: int
    l_e: float
    l_s: float
    total: float
    lr: float

    def line(self) -> str:
        return (f"{self.epoch} {self.step} {self.l_e:.9e} {self.l_s:.9e} "
                f"{self.total:.9e} {self.lr:.9e}")


@dataclass
class TrainResult:
    log: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)

    def losses(self) -> np.ndarray:
        return np.array([r.total for r in self.log])


class NonFiniteLoss(NumericDomainError):
    def __init__(self, epoch: int, step: int, batch_ids: Sequence[str]):
        self.batch_ids = list(batch_ids)
        super().__init__(f"non-finite loss at epoch {epoch} step {step}; batch ids {self.batch_ids}")


def train_step(model: SwinNet, params: list, state: OptimizerState,
               batch: Sequence[dataio.Sample], lr: float, dtype) -> tuple[float, float, float]:
    rgb, aux, sal, edge = collate(batch, dtype)
    with GradTape() as tape:
        pred = model(rgb, aux)
        losses = total_loss(pred.s_logits, pred.se_logits, sal, edge)
    vals = losses.values()
    if not all(math.isfinite(v) for v in vals):
        raise NumericDomainError("non-finite loss")
    grads = tape.gradient(losses.total, params)
    adam_step(params, grads, state, lr)
    return vals


def train_loop(cfg: TrainConfig, model: SwinNet, dataset: Sequence[dataio.Sample],
               run_dir: Optional[Path] = None, config_hash: Optional[bytes] = None,
               on_step: Optional[Callable[[StepRecord], None]] = None) -> TrainResult:
    """Epoch loop with a seeded shuffle; per-batch RNG streams are pre-split by step index.

    Writes ``loss.log`` (``epoch step l_e l_s total lr`` per line) and
    checkpoints every ``checkpoint_every`` epochs plus the final one when
    ``run_dir`` is given.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise InvalidArgument("dataset is empty")
    dtype = model.rgb_backbone.patch_embed.proj.weight.dtype
    params = model.parameters()
    state = OptimizerState.for_params(params)
    root = np.random.SeedSequence(cfg.seed)
    order_rng = np.random.default_rng(root.spawn(1)[0])
    result = TrainResult()
    log_f = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        log_f = open(run_dir / "loss.log", "w")
    model.train()
    step = 0
    try:
        for epoch in range(cfg.epochs):
            lr = lr_schedule(epoch, cfg)
            order = order_rng.permutation(len(dataset))
            for start in range(0, len(order), cfg.batch):
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
                idx = order[start:start + cfg.batch]
                batch_rng = np.random.default_rng([cfg.seed, step])
                batch = [augment(dataset[i], batch_rng) if cfg.augment else dataset[i] for i in idx]
                try:
                    l_e, l_s, tot = train_step(model, params, state, batch, lr, dtype)
                except NumericDomainError:
                    raise NonFiniteLoss(epoch, step, [dataset[i].id for i in idx]) from None
                rec = StepRecord(epoch, step, l_e, l_s, tot, lr)
                result.log.append(rec)
                if log_f:
                    log_f.write(rec.line() + "\n")
                    log_f.flush()
                if on_step:
                    on_step(rec)
                step += 1
            done = cfg.max_steps is not None and step >= cfg.max_steps
            last = epoch == cfg.epochs - 1 or done
            if run_dir is not None and ((epoch + 1) % cfg.checkpoint_every == 0 or last):
                path = run_dir / "checkpoints" / f"epoch_{epoch + 1:04d}.swnt"
                dataio.save_checkpoint(path, model.state_dict(), config_hash or model.cfg.hash())
                result.checkpoints.append(path)
            if done:
                break
    finally:
        if log_f:
            log_f.close()
    return result


def predict(model: SwinNet, samples: Sequence[dataio.Sample], batch: int = 4) -> list:
    """Sigmoid saliency maps (S x S arrays) in eval mode."""
    dtype = model.rgb_backbone.patch_embed.proj.weight.dtype
    was_training = model.training
    model.eval()
    out = []
    try:
        for start in range(0, len(samples), batch):
            chunk = samples[start:start + batch]
            rgb, aux, _, _ = collate(chunk, dtype)
            logits = model(rgb, aux).s_logits.data.astype(np.float64)
            out.extend(1.0 / (1.0 + np.exp(-logits[:, 0])))
    finally:
        model.train(was_training)
    return out
