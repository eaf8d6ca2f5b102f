"""Room/audio feature fusion: broadcasts, attention algebra, ablations."""

import pytest
import torch

from blindrir.config import FusionConfig
from blindrir.fusion import (
    FusionError,
    GroundTruthEmbedding,
    HybridFusion,
    NaiveFusion,
    build_fusion,
)

Q_DIM, N_S = 12, 20


def small_cfg(**kw):
    base = dict(n_v=8, n_zeta=8, n_a=16, n_c=24, heads=4)
    base.update(kw)
    return FusionConfig(**base)


def make_hybrid():
    torch.manual_seed(0)
    return HybridFusion(small_cfg(), q_dim=Q_DIM, n_s=N_S)


def test_heads_must_divide_channels():
    with pytest.raises(FusionError, match="not divisible"):
        HybridFusion(small_cfg(n_a=18, heads=4), q_dim=Q_DIM, n_s=N_S)


def test_broadcast_columns_identical():
    fusion = make_hybrid()
    f_a = fusion.project_and_broadcast(torch.randn(3, Q_DIM), torch.randn(3, Q_DIM), 9)
    assert f_a.shape == (3, 16, 9)
    assert torch.equal(f_a, f_a[:, :, :1].expand(-1, -1, 9))
    with pytest.raises(FusionError):
        fusion.project_and_broadcast(torch.randn(3, Q_DIM), torch.randn(3, Q_DIM), 0)


def test_pre_fuse_frame_mismatch_rejected():
    fusion = make_hybrid()
    with pytest.raises(FusionError, match="frame mismatch"):
        fusion.pre_fuse(torch.randn(1, 16, 5), torch.randn(1, N_S, 6))


def test_attention_rows_sum_to_one():
    fusion = make_hybrid()
    _, weights = fusion.attention(torch.randn(2, 16, 7), torch.randn(2, N_S, 7))
    assert weights.shape == (2, 4, 7, 7)
    assert torch.allclose(weights.sum(dim=-1), torch.ones(2, 4, 7), atol=1e-6)
    assert (weights >= 0).all()


def test_attention_matches_per_head_loop():
    fusion = make_hybrid()
    cfg = fusion.cfg
    x_pre = torch.randn(2, 16, 5)
    f_s = torch.randn(2, N_S, 5)
    with torch.no_grad():
        out, weights = fusion.attention(x_pre, f_s)
        q_full = fusion.w_q(x_pre.transpose(1, 2))
        k_full = fusion.w_k(f_s.transpose(1, 2))
        v_full = fusion.w_v(f_s.transpose(1, 2))
    d_k = cfg.d_k
    for b in range(2):
        head_outs = []
        for h in range(cfg.heads):
            sl = slice(h * d_k, (h + 1) * d_k)
            qh, kh, vh = q_full[b, :, sl], k_full[b, :, sl], v_full[b, :, sl]
            wh = torch.softmax(qh @ kh.T / d_k ** 0.5, dim=-1)
            assert torch.allclose(weights[b, h], wh, atol=1e-6)
            head_outs.append(wh @ vh)
        assert torch.allclose(out[b], torch.cat(head_outs, dim=-1), atol=1e-6)


def test_forward_shape_and_gradients():
    fusion = make_hybrid()
    q_v = torch.randn(2, Q_DIM, requires_grad=True)
    q_zeta = torch.randn(2, Q_DIM, requires_grad=True)
    f_s = torch.randn(2, N_S, 11, requires_grad=True)
    out = fusion(q_v, q_zeta, f_s)
    assert out.shape == (2, 24, 11)
    out.pow(2).mean().backward()
    # both the room vectors and the audio map steer the fused output
    assert q_v.grad.abs().sum() > 0
    assert q_zeta.grad.abs().sum() > 0
    assert f_s.grad.abs().sum() > 0
    for name, p in fusion.named_parameters():
        assert p.grad is not None, name


def test_room_path_frame_mismatch_rejected():
    fusion = make_hybrid()
    with pytest.raises(FusionError, match="frame mismatch"):
        fusion.room_path_and_fuse(torch.randn(1, 16, 4), torch.randn(1, 16, 5))


def test_naive_fusion_shape_and_gradients():
    torch.manual_seed(1)
    naive = NaiveFusion(small_cfg(), q_dim=Q_DIM, n_s=N_S)
    q_v = torch.randn(2, Q_DIM, requires_grad=True)
    out = naive(q_v, torch.randn(2, Q_DIM), torch.randn(2, N_S, 6))
    assert out.shape == (2, 24, 6)
    out.sum().backward()
    assert q_v.grad.abs().sum() > 0


def test_hybrid_and_naive_disagree():
    torch.manual_seed(2)
    q_v, q_zeta = torch.randn(1, Q_DIM), torch.randn(1, Q_DIM)
    f_s = torch.randn(1, N_S, 6)
    with torch.no_grad():
        a = HybridFusion(small_cfg(), Q_DIM, N_S)(q_v, q_zeta, f_s)
        b = NaiveFusion(small_cfg(), Q_DIM, N_S)(q_v, q_zeta, f_s)
    assert not torch.allclose(a, b)


def test_build_fusion_dispatch():
    assert isinstance(build_fusion(small_cfg(), Q_DIM, N_S), HybridFusion)
    assert isinstance(
        build_fusion(small_cfg(method="naive"), Q_DIM, N_S), NaiveFusion
    )
    with pytest.raises(FusionError, match="unknown fusion method"):
        build_fusion(small_cfg(method="bilinear"), Q_DIM, N_S)


def test_ground_truth_embedding_shapes():
    emb = GroundTruthEmbedding(q_dim=Q_DIM)
    q_v, q_zeta = emb(torch.tensor([2.0, 2.5]), torch.tensor([1.0, 1.7]))
    assert q_v.shape == (2, Q_DIM)
    assert q_zeta.shape == (2, Q_DIM)
    # distinct scalars embed to distinct vectors
    assert not torch.allclose(q_v[0], q_v[1])
