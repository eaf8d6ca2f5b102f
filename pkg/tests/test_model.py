"""Full-pipeline wiring: mode switches, boundary sources, sidecars, I/O."""

import dataclasses

import numpy as np
import pytest
import torch

from blindrir.audio import AudioClip
from blindrir.brpe import BrpeOutputs
from blindrir.data import pseudo_speech
from blindrir.model import (
    BlindRirModel,
    ModelError,
    estimate_from_clip,
    feature_block_tensor,
    load_model,
    save_model,
    validate_sidecar,
)


def build(micro_cfg, **changes):
    cfg = micro_cfg
    if changes:
        cfg.fusion = dataclasses.replace(cfg.fusion, **{
            k: v for k, v in changes.items() if k in ("method", "ground_truth_params")})
        if "boundary_mode" in changes:
            cfg.decoder = dataclasses.replace(cfg.decoder,
                                              boundary_mode=changes["boundary_mode"])
    torch.manual_seed(0)
    return BlindRirModel(cfg)


def inputs(cfg, batch=2, samples=8000):
    torch.manual_seed(1)
    wave = torch.randn(batch, 1, samples) * 0.1
    frames = (samples - cfg.dsp.frame_len) // cfg.dsp.hop + 1
    padded = -(-frames // 16) * 16
    blocks = torch.randn(batch, 3 * cfg.dsp.erb_bands, padded)
    return wave, blocks


def test_blind_dynamic_forward(micro_cfg):
    model = build(micro_cfg)
    wave, blocks = inputs(micro_cfg)
    est, brpe_out = model(wave, blocks=blocks, noise_seed=0)
    assert est.h_hat.shape == (2, 16000)
    assert brpe_out is not None
    assert torch.equal(est.bp_used, model.estimate_bp(brpe_out))


def test_blocks_required_in_blind_mode(micro_cfg):
    model = build(micro_cfg)
    wave, _ = inputs(micro_cfg)
    with pytest.raises(ModelError, match="feature blocks required"):
        model(wave, blocks=None)


def test_bp_override_teacher_forces(micro_cfg):
    model = build(micro_cfg)
    wave, blocks = inputs(micro_cfg)
    bp = torch.tensor([123, 4567])
    est, brpe_out = model(wave, blocks=blocks, bp_override=bp, noise_seed=0)
    assert torch.equal(est.bp_used, bp)
    assert brpe_out is not None  # still needed for the room vectors


def test_fixed50ms_boundary(micro_cfg):
    model = build(micro_cfg, boundary_mode="fixed50ms")
    wave, blocks = inputs(micro_cfg)
    est, _ = model(wave, blocks=blocks, noise_seed=0)
    assert torch.all(est.bp_used == micro_cfg.decoder.fixed_bp)


def test_gt_injection_skips_estimator_when_bp_fixed(micro_cfg):
    model = build(micro_cfg, ground_truth_params=True, boundary_mode="fixed50ms")
    wave, _ = inputs(micro_cfg)
    gt = torch.tensor([[2.5, 1.6], [2.0, 1.2]])
    est, brpe_out = model(wave, blocks=None, gt_logs=gt, noise_seed=0)
    assert brpe_out is None  # estimator fully bypassed
    assert est.h_hat.shape == (2, 16000)


def test_gt_injection_requires_gt_logs(micro_cfg):
    model = build(micro_cfg, ground_truth_params=True, boundary_mode="fixed50ms")
    wave, _ = inputs(micro_cfg)
    with pytest.raises(ModelError, match="gt_logs missing"):
        model(wave, blocks=None)


def test_estimate_bp_mapping(micro_cfg):
    model = build(micro_cfg)

    def out_with(log_bp):
        z = torch.zeros(len(log_bp), 4)
        t = torch.tensor(log_bp)
        return BrpeOutputs(q_v=z, q_zeta=z, log_v_hat=t, log_rt_hat=t, log_bp_hat=t)

    bp = model.estimate_bp(out_with([np.log10(800.0), float("nan"), 9.0, -5.0]))
    assert bp.tolist() == [800, 800, 16000, 1]
    assert bp.dtype == torch.int64


def test_estimate_from_clip_sidecar(micro_cfg):
    model = build(micro_cfg)
    clip = pseudo_speech(0.6, seed=3)
    result = estimate_from_clip(model, clip, noise_seed=5)
    assert len(result.rir) == 16000
    validate_sidecar(result.sidecar)
    assert result.sidecar["bp_used"] == int(result.estimate.bp_used[0])
    # blind checkpoints expose the estimator's log-domain outputs
    for key in ("log_v_hat", "log_rt_hat", "log_bp_hat"):
        assert key in result.sidecar
    again = estimate_from_clip(model, clip, noise_seed=5)
    assert np.array_equal(result.rir.samples, again.rir.samples)


def test_validate_sidecar_errors():
    good = {"bp_used": 5, "rt60_of_estimate_s": 0.4,
            "drr_of_estimate_db": 3.0, "flags": []}
    validate_sidecar(good)
    with pytest.raises(ModelError, match="missing key"):
        validate_sidecar({k: v for k, v in good.items() if k != "flags"})
    with pytest.raises(ModelError, match="has type"):
        validate_sidecar({**good, "bp_used": "800"})


def test_feature_block_tensor_shape(micro_cfg):
    clip = AudioClip(np.zeros(16000))
    block = feature_block_tensor(clip, micro_cfg)
    frames = (16000 - 512) // 256 + 1
    assert block.shape == (192, -(-frames // 16) * 16)
    assert block.dtype == torch.float32


def test_save_load_roundtrip(micro_cfg, tmp_path):
    model = build(micro_cfg)
    wave, blocks = inputs(micro_cfg, batch=1)
    model.eval()
    with torch.no_grad():
        ref, _ = model(wave, blocks=blocks, noise_seed=2)
    path = tmp_path / "model.pt"
    save_model(model, path)
    back = load_model(path)
    back.eval()
    with torch.no_grad():
        out, _ = back(wave, blocks=blocks, noise_seed=2)
    assert torch.equal(ref.h_hat, out.h_hat)


def test_load_format_guard(tmp_path):
    path = tmp_path / "junk.pt"
    torch.save({"format": "other"}, path)
    with pytest.raises(ModelError, match="not a pipeline checkpoint"):
        load_model(path)
