import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swinnet.edge import EdgeAware
from swinnet.nn import zero_
from swinnet.tensor import InvalidArgument, Tensor

from oracles import bilinear_loops, conv2d_loops


def t(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def levels(seed, n=2, dims=(4, 8, 16), side=8):
    r = np.random.default_rng(seed)
    return [r.standard_normal((n, c, side // 2 ** i, side // 2 ** i)) for i, c in enumerate(dims)]


def module(seed=0, width=2, dims=(4, 8, 16)):
    return EdgeAware(dims, width, np.random.default_rng(seed), np.float64)


def test_zero_weights_give_zero_feature():
    m = zero_(module())
    f_e = m.edge_feature(*map(t, levels(1)))
    assert f_e.shape == (2, 6, 8, 8)
    assert np.all(f_e.data == 0)


def test_toy_width_32_shape():
    m = EdgeAware((32, 64, 128), 32, np.random.default_rng(0), np.float32)
    lv = [Tensor(np.zeros((1, c, s, s), np.float32)) for c, s in ((32, 24), (64, 12), (128, 6))]
    assert m.edge_feature(*lv).shape == (1, 96, 24, 24)


def test_constant_levels_give_constant_bands():
    m = module()
    for conv in m.branches:
        conv.weight.data[...] = 0
        conv.weight.data[:, 0, 0, 0] = 1
        conv.bias.data[...] = 0
    lv = [np.full((1, c, s, s), v) for c, s, v in ((4, 8, 1.0), (8, 4, 2.0), (16, 2, 3.0))]
    f_e = m.edge_feature(*map(t, lv)).data
    for band, v in enumerate((1.0, 2.0, 3.0)):
        np.testing.assert_allclose(f_e[:, 2 * band:2 * band + 2], v, rtol=1e-14)


def test_edge_feature_matches_oracle():
    m = module(2)
    lv = levels(3)
    got = m.edge_feature(*map(t, lv)).data
    parts = []
    for i, f in enumerate((1, 2, 4)):
        b = conv2d_loops(lv[i], m.branches[i].weight.data, m.branches[i].bias.data, 1, 0)
        parts.append(b if f == 1 else bilinear_loops(b, f))
    np.testing.assert_allclose(got, np.concatenate(parts, axis=1), rtol=1e-10, atol=1e-12)


def test_rejects_non_consecutive_levels():
    m = module()
    lv = levels(4)
    with pytest.raises(InvalidArgument):
        m.edge_feature(t(lv[0]), t(lv[0][:, :8]), t(lv[2]))


def test_refine_closed_forms():
    m = module(5)
    f = np.random.default_rng(6).standard_normal((2, 6, 4, 4))
    assert np.all(m.refine(t(np.zeros_like(f))).data == 0)
    m.ca_conv.weight.data[...] = 0
    m.ca_conv.bias.data[...] = 0
    assert np.array_equal(m.refine(t(f)).data, 1.5 * f)


@pytest.mark.parametrize("training", [True, False])
def test_refine_matches_equation_chain(training):
    m = module(7)
    m.train(training)
    m.bconv.bn.running_mean.data[...] = np.linspace(-0.2, 0.3, 6)
    m.bconv.bn.running_var.data[...] = np.linspace(0.5, 1.5, 6)
    m.bconv.bn.weight.data[...] = np.linspace(0.8, 1.2, 6)
    m.bconv.bn.bias.data[...] = np.linspace(-0.1, 0.1, 6)
    rm, rv = m.bconv.bn.running_mean.data.copy(), m.bconv.bn.running_var.data.copy()
    f = np.random.default_rng(8).standard_normal((3, 6, 4, 4))
    got = m.refine(t(f)).data
    z = conv2d_loops(f, m.bconv.conv.weight.data, m.bconv.conv.bias.data, 1, 1)
    if training:
        mu, var = z.mean(axis=(0, 2, 3)), z.var(axis=(0, 2, 3))
    else:
        mu, var = rm, rv
    z = (z - mu[None, :, None, None]) / np.sqrt(var[None, :, None, None] + 1e-5)
    z = z * m.bconv.bn.weight.data[None, :, None, None] + m.bconv.bn.bias.data[None, :, None, None]
    z = np.maximum(z, 0)
    ca = 1 / (1 + np.exp(-(z.max(axis=(2, 3)) @ m.ca_conv.weight.data[:, :, 0, 0].T + m.ca_conv.bias.data)))
    want = f * ca[..., None, None] + f
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_refine_multiplier_between_one_and_two(seed):
    m = module(seed)
    f = np.abs(np.random.default_rng(seed).standard_normal((2, 6, 4, 4)))
    out = m.refine(t(f)).data
    assert np.all(out >= f) and np.all(out <= 2 * f)
    assert out.shape == f.shape
