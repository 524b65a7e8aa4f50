import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sefc.config import tiny_config
from sefc.data import segment
from sefc.model import SeLLM
from sefc.numerics import Tensor, gradient_check, make_rng, sum_
from sefc.tscc import (
    LOGVAR_CLAMP,
    AmVae,
    ChannelGate,
    CrossAlign,
    cross_correlation,
    enrich_prototypes,
    infuse,
    kl_standard_normal,
    reparameterize,
    topk_select,
)


def test_cross_align_shape_and_weights():
    align = CrossAlign(64, 4, make_rng(0))
    J, w = align(make_rng(1).normal(size=(32, 64)), make_rng(2).normal(size=(2, 7, 64)), return_weights=True)
    assert J.shape == (2, 7, 64) and w.shape == (2, 4, 7, 32)
    np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-9)


def test_cross_align_single_prototype():
    align = CrossAlign(8, 2, make_rng(0))
    proto = make_rng(1).normal(size=(1, 8))
    J, w = align(proto, make_rng(2).normal(size=(2, 3, 8)), return_weights=True)
    assert np.all(w.data == 1.0)
    expect = align.out(align.value(Tensor(proto))).data[0]
    np.testing.assert_allclose(J.data, np.broadcast_to(expect, (2, 3, 8)), atol=1e-12)


def test_cross_align_head_check():
    with pytest.raises(ValueError):
        CrossAlign(10, 3, make_rng(0))


def test_enrich_prototypes_cases():
    l2 = make_rng(0).normal(size=(4, 6))
    assert np.array_equal(enrich_prototypes(np.zeros((2, 3, 6)), l2).data, l2)
    np.testing.assert_allclose(enrich_prototypes(np.full((2, 3, 6), 0.7), l2).data, l2 + 0.7, atol=1e-15)
    J = make_rng(1).normal(size=(2, 3, 6))
    brute = np.zeros(6)
    for b in range(2):
        for n in range(3):
            brute += J[b, n]
    np.testing.assert_allclose(enrich_prototypes(J, l2).data, l2 + brute / 6, atol=1e-14)


def test_amvae_deterministic_and_identity():
    vae = AmVae(16, 8, 4, make_rng(0))
    J = make_rng(1).normal(size=(2, 3, 16))
    d = vae(J, deterministic=True)
    assert np.array_equal(d.z.data, d.mu.data)
    assert np.max(np.abs(d.de_anomaly.data + d.anomaly.data - J)) <= 1e-12
    s = vae(J, rng=make_rng(2), deterministic=False)
    assert not np.array_equal(s.z.data, s.mu.data)
    with pytest.raises(ValueError):
        vae(J, deterministic=False)


def test_amvae_bottleneck_validation():
    with pytest.raises(ValueError):
        AmVae(8, 8, 4, make_rng(0))
    with pytest.raises(ValueError):
        AmVae(8, 4, 5, make_rng(0))


def test_logvar_clamped():
    vae = AmVae(8, 4, 2, make_rng(0))
    vae.logvar_head.bias.data[:] = 1e3
    d = vae(make_rng(1).normal(size=(1, 2, 8)), rng=make_rng(2), deterministic=False)
    assert np.all(d.logvar.data == LOGVAR_CLAMP)


def test_kl_zero_for_standard_normal():
    assert kl_standard_normal(np.zeros(5), np.zeros(5)).item() == 0.0
    assert kl_standard_normal(np.ones(5), np.zeros(5)).item() == pytest.approx(0.5)


def test_reparameterize_formula():
    z = reparameterize(np.array([1.0]), np.array([np.log(4.0)]), np.array([0.5]))
    assert z.item() == pytest.approx(2.0)


def test_correlation_bounds_and_extremes():
    rng = make_rng(0)
    S = rng.normal(size=(4, 8))
    H = np.stack([[3 * S[1] + 2, -S[2], rng.normal(size=8)]])
    M = cross_correlation(H, S).data
    assert M[0, 0, 1] == pytest.approx(1.0, abs=1e-4)
    assert M[0, 1, 2] == pytest.approx(-1.0, abs=1e-4)
    assert np.all(np.abs(M) <= 1 + 1e-6)


def test_correlation_matches_pearson_oracle():
    rng = make_rng(3)
    H, S = rng.normal(size=(1, 3, 8)), rng.normal(size=(4, 8))
    M = cross_correlation(H, S, eps=0.0).data
    for n in range(3):
        for i in range(4):
            assert M[0, n, i] == pytest.approx(np.corrcoef(H[0, n], S[i])[0, 1], abs=1e-9)


@settings(max_examples=100)
@given(st.integers(0, 100_000), st.integers(2, 32))
def test_correlation_bounded(seed, D):
    rng = make_rng(seed)
    M = cross_correlation(rng.normal(size=(2, 3, D)) * 10, rng.normal(size=(5, D))).data
    assert np.all(np.abs(M) <= 1 + 1e-6)


def test_topk_examples():
    assert topk_select(np.array([[0.2, -1.0, 3.5]]), 1).tolist() == [[2]]
    assert topk_select(np.array([[1.0, 1.0, 0.0]]), 1).tolist() == [[0]]
    assert topk_select(np.array([[1.0, 2.0, 1.0, 2.0]]), 4).tolist() == [[1, 3, 0, 2]]
    with pytest.raises(ValueError):
        topk_select(np.zeros((1, 3)), 4)
    with pytest.raises(ValueError):
        topk_select(np.zeros((1, 3)), 0)


def test_infuse_cases():
    rng = make_rng(0)
    DX, S = rng.normal(size=(2, 3, 5)), rng.normal(size=(4, 5))
    idx_all = np.broadcast_to(np.arange(4), (2, 3, 4))
    np.testing.assert_allclose(infuse(DX, S, idx_all).data, DX * S.mean(0), atol=1e-14)
    ones_idx = topk_select(rng.normal(size=(2, 3, 4)), 2)
    np.testing.assert_array_equal(infuse(DX, np.ones((4, 5)), ones_idx).data, DX)
    idx = topk_select(rng.normal(size=(2, 3, 4)), 3)
    out = infuse(DX, S, idx).data
    for b in range(2):
        for n in range(3):
            w = sum(S[i] for i in idx[b, n]) / 3
            np.testing.assert_allclose(out[b, n], DX[b, n] * w, atol=1e-12)
    with pytest.raises(IndexError):
        infuse(DX, S, np.full((2, 3, 1), 9))


def test_gate_boundaries():
    gate = ChannelGate(6, 4, make_rng(0))
    rng = make_rng(1)
    H, DX, J = (rng.normal(size=(2, 3, 6)) for _ in range(3))
    gate.mlp.fc2.weight.data[:] = 0
    gate.mlp.fc2.bias.data[:] = 50.0
    G, attn = gate.fuse(H, DX, J)
    np.testing.assert_allclose(G.data, H, atol=1e-12)
    gate.mlp.fc2.bias.data[:] = -50.0
    G, _ = gate.fuse(H, DX, J)
    np.testing.assert_allclose(G.data, J, atol=1e-12)
    assert gate(H, DX, J).shape == (2, 3, 4)


def test_gate_width_mismatch():
    gate = ChannelGate(6, 4, make_rng(0))
    with pytest.raises(ValueError):
        gate.fuse(np.zeros((1, 2, 6)), np.zeros((1, 2, 5)), np.zeros((1, 2, 6)))


def test_tscc_forward_shapes_purity_and_gradients():
    cfg = tiny_config()
    model = SeLLM(cfg, seed=1)
    seg = segment(make_rng(0).normal(size=(2, 32)), 8)
    a = model.tscc_forward(seg)
    b = model.tscc_forward(seg)
    assert a.GA.shape == a.GC.shape == (2, 4, 16) and a.indices.shape == (2, 4, 3)
    assert np.array_equal(a.GA.data, b.GA.data) and np.array_equal(a.GC.data, b.GC.data)
    params = {k: p for k, p in model.named_parameters() if k.startswith("tscc.")}
    probe = make_rng(2).normal(size=(2, 4, 16))

    def objective():
        out = model.tscc_forward(seg)
        return sum_(out.GA * probe) + sum_(out.GC * probe)

    rep = gradient_check(objective, params, step=1e-4)
    assert rep.passed, (rep.max_rel_err, rep.worst)
