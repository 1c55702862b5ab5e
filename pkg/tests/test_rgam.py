import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from flashglass.errors import ShapeError
from flashglass.gradcheck import gradcheck
from flashglass.rgam import (
    CBAM,
    RGAM,
    GlassFusion,
    attention_maps,
    from_tokens,
    rgam_forward,
    shared_attention,
    to_tokens,
)


def brute_softmax_rows(m):
    # plain-python reference, independent of torch
    out = []
    for row in m:
        e = [np.exp(v - max(row)) for v in row]
        out.append([v / sum(e) for v in e])
    return np.array(out)


def test_shared_attention_fixture():
    a = torch.tensor([[[1.0, 3.0], [2.0, 4.0]]])
    b = torch.tensor([[[0.0, 1.0], [2.0, 0.0]]])
    got = shared_attention(a, b)[0].numpy()
    expect = np.array([[0.1192, 0.8808], [0.8808, 0.1192]])
    np.testing.assert_allclose(got, expect, atol=1e-3)
    np.testing.assert_allclose(got, brute_softmax_rows([[0.0, 2.0], [2.0, 0.0]]), atol=1e-6)


def test_constant_maps_give_uniform_rows():
    c = torch.full((1, 5, 5), 2.5)
    np.testing.assert_allclose(shared_attention(c, c).numpy(), 1 / 5, atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), c=st.floats(-50, 50), d=st.floats(-50, 50))
def test_global_shift_invariance(seed, c, d):
    g = torch.Generator().manual_seed(seed)
    a = torch.randn(2, 6, 6, generator=g, dtype=torch.float64)
    b = torch.randn(2, 6, 6, generator=g, dtype=torch.float64)
    base = shared_attention(a, b)
    assert torch.allclose(shared_attention(a + c, b + d), base, atol=1e-6)


def test_shift_by_constant_example():
    g = torch.Generator().manual_seed(0)
    a, b = torch.randn(1, 4, 4, generator=g), torch.randn(1, 4, 4, generator=g)
    assert torch.allclose(shared_attention(a + 7.3, b), shared_attention(a, b), atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(1, 9), heads=st.integers(1, 3),
       mode=st.sampled_from(["shared", "no_shift", "shift_relu"]))
def test_row_stochastic(seed, n, heads, mode):
    g = torch.Generator().manual_seed(seed)
    m = shared_attention(torch.randn(heads, n, n, generator=g), torch.randn(heads, n, n, generator=g), mode)
    assert (m >= 0).all()
    assert torch.allclose(m.sum(-1), torch.ones(heads, n), atol=1e-5)


def test_attention_maps_fixture():
    q = torch.tensor([[[1.0, 0.0], [0.0, 1.0]]])
    k = torch.tensor([[[2.0, 0.0], [0.0, 3.0]]])
    m, _ = attention_maps(q, k, q, k)
    assert torch.equal(m, torch.tensor([[[2.0, 0.0], [0.0, 3.0]]]))
    m, _ = attention_maps(torch.zeros_like(q), k, q, k)
    assert not m.any()


def test_attention_map_shapes():
    rg = RGAM(16, heads=2)
    m_refle, m_glass, _, _ = rg.maps(torch.rand(1, 16, 8, 8), torch.rand(1, 16, 8, 8))
    assert m_refle.shape == m_glass.shape == (1, 2, 64, 64)


def test_tokens_and_layernorm():
    rg = RGAM(16, heads=2)
    x = torch.rand(1, 16, 8, 8)
    t = to_tokens(x, 2)
    assert t.shape == (1, 64, 2, 8)
    assert torch.equal(from_tokens(t.transpose(1, 2), 8, 8), x)
    normed = torch.nn.functional.layer_norm(t, (8,))
    assert torch.allclose(normed.mean(-1), torch.zeros(1, 64, 2), atol=1e-5)
    assert torch.allclose(normed.var(-1, unbiased=False), torch.ones(1, 64, 2), atol=1e-3)
    q, k, v = rg.project_qkv(x, "top", "refle")
    assert q.shape == k.shape == v.shape == (1, 2, 64, 8)
    with pytest.raises(ShapeError):
        to_tokens(x, 3)
    with pytest.raises(ShapeError):
        RGAM(16, heads=3)


def test_glass_fusion():
    fuse = GlassFusion(16)
    a, b = torch.rand(1, 16, 8, 8), torch.rand(1, 16, 8, 8)
    assert fuse(a, b).shape == (1, 16, 8, 8)
    torch.nn.init.zeros_(fuse.conv.bias)
    assert not fuse(torch.zeros_like(a), torch.zeros_like(b)).any()
    assert not torch.allclose(fuse(a, b), fuse(b, a))
    assert GlassFusion(16, "sum").conv.in_channels == 16


def test_forward_shape_and_zero_values():
    rg = RGAM(16, heads=2)
    x, y = torch.rand(1, 16, 8, 8), torch.rand(1, 16, 8, 8)
    assert rg(x, y).shape == (1, 16, 8, 8)
    assert rgam_forward(x, y, y, GlassFusion(16), rg).shape == (1, 16, 8, 8)
    for p in (rg.top.v, rg.bottom.v):
        torch.nn.init.zeros_(p.weight)
        torch.nn.init.zeros_(p.bias)
    assert not rg(x, y).any()


def test_uniform_map_averages_values():
    rg = RGAM(4, heads=1)
    # zero queries give constant maps, hence uniform rows
    for p in (rg.top.q, rg.bottom.q):
        torch.nn.init.zeros_(p.weight)
        torch.nn.init.zeros_(p.bias)
    x, y = torch.rand(1, 4, 3, 3), torch.rand(1, 4, 3, 3)
    out, maps = rg(x, y, return_maps=True)
    np.testing.assert_allclose(maps.m_shared.detach().numpy(), 1 / 9, atol=1e-6)
    _, _, v_t, v_b = rg.maps(x, y)
    expect = (v_t.mean(2, keepdim=True) + v_b.mean(2, keepdim=True)).expand_as(v_t)
    assert torch.allclose(out, from_tokens(expect, 3, 3), atol=1e-6)


def test_distinct_projection_sets():
    rg = RGAM(8, 2)
    names = {n for n, _ in rg.named_parameters()}
    assert {"top.q.weight", "top.k.weight", "top.v.weight",
            "bottom.q.weight", "bottom.k.weight", "bottom.v.weight"} <= names
    assert rg.top.q.weight.data_ptr() != rg.bottom.q.weight.data_ptr()


@pytest.mark.parametrize("kw", [dict(mode="separate"), dict(mode="no_shift"), dict(mode="shift_relu"),
                                dict(mode="serial"), dict(query="glass_only"), dict(query="refle_only"),
                                dict(pool_stride=2)])
def test_ablation_variants_run(kw):
    rg = RGAM(8, 2, **kw)
    assert rg(torch.rand(2, 8, 4, 4), torch.rand(2, 8, 4, 4)).shape == (2, 8, 4, 4)


def test_cbam_shape():
    assert CBAM(16)(torch.rand(1, 16, 8, 8)).shape == (1, 16, 8, 8)


def test_gradcheck():
    rep = gradcheck("rgam", seed=0)
    assert rep.max_rel_err < 1e-3, rep
