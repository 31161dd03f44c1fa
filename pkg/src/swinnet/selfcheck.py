"""Quick user-facing health checks: op gradients, zero-weight closed forms, metric identities."""

from __future__ import annotations

import math

import numpy as np

from . import metrics
from .backbone import BackboneConfig
from .edge import EdgeAware
from .model import ModelConfig, SwinNet
from .nn import zero_
from .sacr import SACR
from .tensor import Tensor, grad_check, ops

TOL = 1e-3


def _op_gradients(rng: np.random.Generator) -> list:
    x4 = Tensor(rng.standard_normal((2, 3, 6, 6)))
    w = Tensor(rng.standard_normal((4, 3, 3, 3)))
    cases = {
        "conv2d": lambda t: ops.conv2d(t, w, None, 1, 1),
        "bilinear_upsample": lambda t: ops.bilinear_upsample(t, 2),
        "softmax": lambda t: ops.softmax(t),
        "layer_norm": lambda t: ops.layer_norm(t, Tensor(np.ones(6)), Tensor(np.zeros(6))),
        "gelu": ops.gelu,
        "sigmoid": ops.sigmoid,
        "channel_max_pool": ops.channel_max_pool,
    }
    out = []
    for name, f in cases.items():
        err = grad_check(f, x4)
        out.append((f"grad {name}", err < TOL, f"max rel err {err:.2e}"))
    return out


def _closed_forms(rng: np.random.Generator) -> list:
    st_c = Tensor(rng.standard_normal((1, 8, 4, 4)))
    st_d = Tensor(rng.standard_normal((1, 8, 4, 4)))
    sacr = SACR(8, rng, np.float64)
    zero_(sacr)
    s = sacr(st_c, st_d)
    ok_sacr = np.array_equal(s.f_c.data, 0.5 * st_c.data) and np.array_equal(s.f_d.data, 0.5 * st_d.data)

    edge = EdgeAware((4, 8, 16), 2, rng, np.float64)
    zero_(edge)
    f_e = Tensor(rng.standard_normal((2, 6, 4, 4)))
    ok_edge = np.array_equal(edge.refine(f_e).data, 1.5 * f_e.data)

    logits = Tensor(np.zeros((1, 1, 5, 5)))
    mask = Tensor((rng.random((1, 1, 5, 5)) > 0.5).astype(float))
    bce = ops.bce_with_logits(logits, mask).item()
    ok_bce = abs(bce - 25 * math.log(2)) < 1e-12

    model = SwinNet(ModelConfig.toy(backbone=BackboneConfig(img_size=32)),
                    seed=0, dtype=np.float64)
    model.eval()
    img = Tensor(rng.standard_normal((1, 3, 32, 32)))
    pred = model(img, img)
    ok_ff4 = np.array_equal(pred.decoder.ff[3].data,
                            ops.concat([ops.add(pred.sacr[3].f_d, pred.sacr[3].f_c),
                                        ops.mul(pred.sacr[3].f_d, pred.sacr[3].f_c)], 1).data)
    return [("zero-weight SACR gives F = 0.5 ST", ok_sacr, ""),
            ("zero-weight edge refinement gives 1.5 F_e", ok_edge, ""),
            ("zero logits give BCE = ln 2 per pixel", ok_bce, f"{bce:.12f}"),
            ("decoder base case FF_4 = F_4", ok_ff4, "")]


def _metric_identities(rng: np.random.Generator) -> list:
    gt = rng.random((32, 32)) > 0.6
    same = [metrics.s_measure(gt, gt), metrics.adaptive_fmeasure(gt, gt),
            metrics.e_measure_adaptive(gt, gt)]
    inv = metrics.mae(~gt, gt)
    return [("pred == gt scores S = F = E = 1", all(abs(v - 1) < 1e-6 for v in same),
             ", ".join(f"{v:.6f}" for v in same)),
            ("inverted prediction has MAE = 1", abs(inv - 1) < 1e-12, f"{inv:.6f}")]


def run_all(seed: int = 0) -> list:
    """Return (name, passed, detail) triples."""
    rng = np.random.default_rng(seed)
    return _op_gradients(rng) + _closed_forms(rng) + _metric_identities(rng)
