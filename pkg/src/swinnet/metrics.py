"""Saliency evaluation: MAE, adaptive F/E-measure, S-measure and PR curves.

All functions take a prediction in [0, 1] and a binary ground truth of the
same size, both as 2-D arrays, and compute at f64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import InvalidArgument

EPS = 1e-8
BETA2 = 0.3
PR_THRESHOLDS = np.arange(1, 256) / 256.0


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt)
    if p.shape != g.shape:
        raise InvalidArgument(f"prediction {p.shape} and ground truth {g.shape} differ in size")
    return p, g > 0.5


def normalize_map(pred) -> np.ndarray:
    """Per-image min-max to [0, 1]; constant maps become zeros."""
    p = np.asarray(pred, dtype=np.float64)
    lo, hi = p.min(), p.max()
    if hi - lo <= 0:
        return np.zeros_like(p)
    return (p - lo) / (hi - lo)


def adaptive_threshold(pred: np.ndarray) -> float:
    return min(2.0 * float(pred.mean()), 1.0 - EPS)


def mae(pred, gt) -> float:
    p, g = _pair(pred, gt)
    return float(np.abs(p - g).mean())


def adaptive_fmeasure(pred, gt) -> float:
    p, g = _pair(pred, gt)
    b = p >= adaptive_threshold(p)
    tp = int(np.count_nonzero(b & g))
    fp = int(np.count_nonzero(b & ~g))
    fn = int(np.count_nonzero(~b & g))
    if tp == 0 or tp + fp == 0 or tp + fn == 0:
        return 0.0
    prec, rec = tp / (tp + fp), tp / (tp + fn)
    denom = BETA2 * prec + rec
    return float((1 + BETA2) * prec * rec / denom) if denom > 0 else 0.0


def _enhanced_alignment(b: np.ndarray, g: np.ndarray) -> float:
    bf, gf = b.astype(np.float64), g.astype(np.float64)
    if not g.any():
        return float(1.0 - bf.mean())
    if g.all():
        return float(bf.mean())
    pb = bf - bf.mean()
    pg = gf - gf.mean()
    xi = 2 * pg * pb / (pg * pg + pb * pb + EPS)
    return float((((xi + 1) ** 2) / 4).mean())


def e_measure_adaptive(pred, gt) -> float:
    p, g = _pair(pred, gt)
    return _enhanced_alignment(p >= adaptive_threshold(p), g)


def _ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    if n == 0:
        return 0.0
    x, y = p.mean(), g.mean()
    if n > 1:
        sx = ((p - x) ** 2).sum() / (n - 1)
        sy = ((g - y) ** 2).sum() / (n - 1)
        sxy = ((p - x) * (g - y)).sum() / (n - 1)
    else:
        sx = sy = sxy = 0.0
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return float(alpha / (beta + EPS))
    if beta == 0:
        return 1.0
    return 0.0


def _object_score(x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    mu = x.mean()
    sigma = x.std(ddof=1) if x.size > 1 else 0.0
    return float(2 * mu / (mu * mu + 1 + sigma + EPS))


def _s_object(p: np.ndarray, g: np.ndarray) -> float:
    u = g.mean()
    fg = _object_score(p[g])
    bg = _object_score(1 - p[~g])
    return float(u * fg + (1 - u) * bg)


def gt_centroid(g: np.ndarray) -> tuple[int, int]:
    """(row, col) split point: rounded foreground centroid plus one."""
    h, w = g.shape
    if not g.any():
        return int(np.round(h / 2)) + 1, int(np.round(w / 2)) + 1
    rows, cols = np.nonzero(g)
    return int(np.round(rows.mean())) + 1, int(np.round(cols.mean())) + 1


def _s_region(p: np.ndarray, g: np.ndarray) -> float:
    h, w = g.shape
    cy, cx = gt_centroid(g)
    area = h * w
    gf = g.astype(np.float64)
    weights = (cy * cx / area, cy * (w - cx) / area, (h - cy) * cx / area,
               (h - cy) * (w - cx) / area)
    parts = ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
             (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w)))
    return float(sum(wt * _ssim(p[r, c], gf[r, c]) for wt, (r, c) in zip(weights, parts) if wt > 0))


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    p, g = _pair(pred, gt)
    y = g.mean()
    if y == 0:
        score = 1.0 - p.mean()
    elif y == 1:
        score = p.mean()
    else:
        score = alpha * _s_object(p, g) + (1 - alpha) * _s_region(p, g)
    return float(min(max(score, 0.0), 1.0))


@dataclass
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray

    def to_csv(self) -> str:
        lines = ["threshold,precision,recall"]
        lines += [f"{t:.6f},{p:.6f},{r:.6f}" for t, p, r in
                  zip(self.thresholds, self.precision, self.recall)]
        return "\n".join(lines) + "\n"


def pr_curve(preds: Sequence, gts: Sequence) -> PRCurve:
    """Dataset PR curve at thresholds k/256, counts pooled over all pixels."""
    if len(preds) == 0 or len(preds) != len(gts):
        raise InvalidArgument("pr_curve needs a non-empty, paired dataset")
    tp = np.zeros(len(PR_THRESHOLDS))
    fp = np.zeros_like(tp)
    fn = np.zeros_like(tp)
    for pred, gt in zip(preds, gts):
        p, g = _pair(pred, gt)
        # histogram of predictions by threshold bucket, split by gt label
        pos = np.sort(p[g])
        neg = np.sort(p[~g])
        n_pos_ge = pos.size - np.searchsorted(pos, PR_THRESHOLDS, side="left")
        n_neg_ge = neg.size - np.searchsorted(neg, PR_THRESHOLDS, side="left")
        tp += n_pos_ge
        fp += n_neg_ge
        fn += pos.size - n_pos_ge
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
    return PRCurve(PR_THRESHOLDS.copy(), precision, recall)


@dataclass
class MetricsReport:
    ids: list = field(default_factory=list)
    per_image: dict = field(default_factory=dict)  # metric -> list of values

    NAMES = ("s_measure", "f_adaptive", "e_adaptive", "mae")

    def add(self, image_id: str, pred, gt) -> dict:
        vals = {"s_measure": s_measure(pred, gt), "f_adaptive": adaptive_fmeasure(pred, gt),
                "e_adaptive": e_measure_adaptive(pred, gt), "mae": mae(pred, gt)}
        self.ids.append(image_id)
        for k, v in vals.items():
            self.per_image.setdefault(k, []).append(v)
        return vals

    def means(self) -> dict:
        return {k: float(np.mean(self.per_image[k])) if self.ids else float("nan")
                for k in self.NAMES}

    @property
    def s_measure(self) -> float:
        return self.means()["s_measure"]

    @property
    def f_adaptive(self) -> float:
        return self.means()["f_adaptive"]

    @property
    def e_adaptive(self) -> float:
        return self.means()["e_adaptive"]

    @property
    def mae(self) -> float:
        return self.means()["mae"]

    def table(self, dataset: str = "dataset") -> str:
        m = self.means()
        head = f"{'Dataset':<12} {'S':>6} {'F':>6} {'E':>6} {'MAE':>6}"
        row = (f"{dataset:<12} {_fmt(m['s_measure'])} {_fmt(m['f_adaptive'])} "
               f"{_fmt(m['e_adaptive'])} {_fmt(m['mae'])}")
        return head + "\n" + row + "\n"

    def key_values(self) -> str:
        m = self.means()
        lines = [f"n_images={len(self.ids)}"] + [f"{k}={m[k]:.6f}" for k in self.NAMES]
        lines.append("threshold_rule=adaptive:min(2*mean,1-1e-8);pred>=tau")
        lines.append("degenerate_rule=gt_empty:1-mean|gt_full:mean")
        return "\n".join(lines) + "\n"


def _fmt(v: float) -> str:
    # Table-style three decimals without the leading zero
    s = f"{v:.3f}"
    return f"{s[1:] if s.startswith('0') else s:>6}"
