import json
import time
from pathlib import Path

import numpy as np
import pytest

from swinnet import complexity
from swinnet.complexity import Cost, count_params_flops
from swinnet.model import ModelConfig, SwinNet
from swinnet.tensor import Tensor, ops

FIXTURE = Path(__file__).parent / "fixtures" / "complexity_toy.json"


def module_params(mod):
    if mod is None:
        return 0
    if isinstance(mod, list):
        return sum(module_params(m) for m in mod)
    return sum(p.size for p in mod.parameters())


class MacCounter:
    """Wraps the multiply-accumulate ops and tallies their cost per forward."""

    def __init__(self, monkeypatch):
        self.macs = 0
        lin, conv, mm = ops.linear, ops.conv2d, ops.matmul

        def linear(x, w, b=None):
            self.macs += int(np.prod(x.shape[:-1])) * w.shape[0] * w.shape[1]
            return lin(x, w, b)

        def conv2d(x, w, b=None, stride=1, pad=0):
            out = conv(x, w, b, stride, pad)
            self.macs += int(np.prod(out.shape)) * w.shape[1] * w.shape[2] * w.shape[3]
            return out

        def matmul(a, b):
            out = mm(a, b)
            self.macs += int(np.prod(out.shape)) * a.shape[-1]
            return out

        monkeypatch.setattr(ops, "linear", linear)
        monkeypatch.setattr(ops, "conv2d", conv2d)
        monkeypatch.setattr(ops, "matmul", matmul)


@pytest.mark.parametrize("ablate", [None, "no_edge", "dem", "fuse_only"])
def test_toy_params_match_instantiated_model(ablate):
    cfg = ModelConfig.toy(ablate=ablate)
    model = SwinNet(cfg, seed=0)
    rows = count_params_flops(cfg).rows
    assert rows["rgb_backbone"].params == module_params(model.rgb_backbone)
    assert rows["aux_backbone"].params == module_params(model.aux_backbone)
    assert rows["fusion"].params == module_params(model.fusion)
    assert rows["edge"].params == module_params(model.edge)
    assert rows["decoder"].params == module_params(model.decoder)
    assert rows["heads"].params == module_params(model.heads)
    assert count_params_flops(cfg).params == model.num_parameters()


@pytest.mark.parametrize("ablate", [None, "no_edge"])
def test_toy_macs_match_instrumented_forward(monkeypatch, ablate):
    cfg = ModelConfig.toy(ablate=ablate)
    model = SwinNet(cfg, seed=0)
    model.eval()
    counter = MacCounter(monkeypatch)
    x = Tensor(np.zeros((1, 3, 96, 96), np.float32))
    model(x, x)
    assert count_params_flops(cfg).macs == counter.macs


def test_backbone_macs_match_instrumented_forward(monkeypatch):
    cfg = ModelConfig.toy()
    model = SwinNet(cfg, seed=0)
    counter = MacCounter(monkeypatch)
    model.rgb_backbone(Tensor(np.zeros((1, 3, 96, 96), np.float32)))
    assert count_params_flops(cfg).rows["rgb_backbone"].macs == counter.macs


def test_toy_hand_summed_rows():
    rows = count_params_flops(ModelConfig.toy()).rows
    # heads: 3x3 saliency conv on 24 + 64 channels plus 3x3 edge conv on 24, one output each
    assert rows["heads"].params == (88 * 9 + 1) + (24 * 9 + 1)
    # fusion: one 3x3 single-channel spatial conv and two C->C 1x1 convs per level
    assert rows["fusion"].params == sum(10 + 2 * (c * c + c) for c in (32, 64, 128, 256))


def test_toy_rows_regression_snapshot():
    want = json.loads(FIXTURE.read_text())
    got = count_params_flops(ModelConfig.toy()).to_dict()["rows"]
    assert got == want


def test_cost_arithmetic_helpers():
    assert complexity.linear(4, 8, 10) == Cost(4 * 8 + 8, 4 * 8 * 10)
    assert complexity.linear(4, 8, 10, bias=False) == Cost(32, 320)
    assert complexity.conv(3, 5, 3, 7, 7) == Cost(3 * 5 * 9 + 5, 3 * 5 * 9 * 49)
    assert complexity.norm(6) == Cost(12, 0)
    assert Cost(1, 2) + Cost(3, 4) == Cost(4, 6)
    assert Cost(1, 2) * 3 == Cost(3, 6)


def test_full_config_reproduces_reported_size():
    start = time.perf_counter()
    rep = count_params_flops(ModelConfig.full())
    assert time.perf_counter() - start < 1.0
    assert abs(rep.params / 198.7e6 - 1) < 0.02
    assert abs(rep.macs / 124.3e9 - 1) < 0.10
    assert rep.flops == 2 * rep.macs


def test_decoder_variant_deltas():
    v = count_params_flops(ModelConfig.full()).variants
    d_macs = v["SwinNet"].macs - v["SwinNet-decoder"].macs
    d_params = v["SwinNet"].params - v["SwinNet-decoder"].params
    assert abs(d_macs / (124.3e9 - 88.9e9) - 1) < 0.20
    assert abs(d_params / (198.7e6 - 173.6e6) - 1) < 0.20


def test_variant_ordering():
    v = count_params_flops(ModelConfig.full()).variants
    assert v["SwinNet-decoder"].params < v["SwinNet-fuse"].params < v["SwinNet"].params
    assert v["SwinNet-edge"].macs < v["SwinNet"].macs


def test_report_table_lists_rows_and_variants():
    text = count_params_flops(ModelConfig.toy()).table()
    for name in ("rgb_backbone", "aux_backbone", "fusion", "edge", "decoder", "heads", "total",
                 "SwinNet-decoder"):
        assert name in text
    assert "2*MACs" in text
