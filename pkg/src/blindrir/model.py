"""End-to-end blind RIR estimation model.

Wires the waveform encoder, the room-parameter estimator, the fusion stage,
and the RIR decoder into one module, with the switches the ablations need:
fusion method, ground-truth parameter injection, and the boundary-point mode
(dynamic estimate, teacher-forced label, or fixed 50 ms).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .acoustics import drr, rt60_with_fallback
from .audio import AudioClip
from .brpe import BrpeOutputs, RoomParamEstimator
from .config import RunConfig
from .decoder import DecoderError, RIRDecoder, RIREstimate, pool_latent
from .dsp import extract_feature_block
from .fusion import GroundTruthEmbedding, build_fusion


class ModelError(RuntimeError):
    pass


def feature_block_tensor(clip: AudioClip, cfg: RunConfig,
                         dtype: torch.dtype = torch.float32) -> torch.Tensor:
    block = extract_feature_block(clip, cfg.dsp)
    return torch.as_tensor(block.values, dtype=dtype)


class BlindRirModel(nn.Module):
    def __init__(self, cfg: RunConfig):
        super().__init__()
        from .encoder import DeepAudioEncoder

        self.cfg = cfg
        self.encoder = DeepAudioEncoder(cfg.encoder)
        self.brpe = RoomParamEstimator(cfg.brpe)
        self.fusion = build_fusion(cfg.fusion, cfg.brpe.q_dim,
                                   cfg.encoder.latent_channels)
        self.decoder = RIRDecoder(cfg.decoder, cfg.fusion.n_c)
        self.gt_embed = (GroundTruthEmbedding(cfg.brpe.q_dim)
                         if cfg.fusion.ground_truth_params else None)

    def estimate_bp(self, out: BrpeOutputs) -> torch.Tensor:
        log_bp = torch.nan_to_num(out.log_bp_hat, nan=math.log10(800.0))
        bp = torch.round(torch.pow(10.0, log_bp))
        return bp.clamp(1, self.cfg.decoder.rir_len).long()

    def forward(self, wave: torch.Tensor, blocks: torch.Tensor | None = None,
                bp_override: torch.Tensor | None = None,
                gt_logs: torch.Tensor | None = None,
                v: torch.Tensor | None = None,
                noise_seed: int | None = None
                ) -> tuple[RIREstimate, BrpeOutputs | None]:
        """wave: (batch, 1, samples); blocks: (batch, bins, frames).

        bp_override teacher-forces the boundary point; gt_logs is a
        (batch, 2) tensor of true (log_v, log_rt) for injection mode.
        """
        cfg = self.cfg
        batch = wave.shape[0]
        fixed = cfg.decoder.boundary_mode == "fixed50ms"

        need_brpe_bp = not fixed and bp_override is None
        need_brpe_q = self.gt_embed is None
        brpe_out = None
        if need_brpe_bp or need_brpe_q:
            if blocks is None:
                raise ModelError("feature blocks required for estimator forward")
            brpe_out = self.brpe(blocks)

        if self.gt_embed is not None:
            if gt_logs is None:
                raise ModelError("ground-truth injection enabled but gt_logs missing")
            q_v, q_zeta = self.gt_embed(gt_logs[:, 0], gt_logs[:, 1])
        else:
            q_v, q_zeta = brpe_out.q_v, brpe_out.q_zeta

        if fixed:
            bp = torch.full((batch,), cfg.decoder.fixed_bp, dtype=torch.int64,
                            device=wave.device)
        elif bp_override is not None:
            bp = torch.as_tensor(bp_override, dtype=torch.int64,
                                 device=wave.device)
        else:
            bp = self.estimate_bp(brpe_out)

        f_s = self.encoder(wave)
        f_c = self.fusion(q_v, q_zeta, f_s)
        d = pool_latent(f_c)
        if v is None:
            v = self.decoder.make_noise(batch, seed=noise_seed, dtype=d.dtype)
        v = v.to(device=d.device, dtype=d.dtype)
        return self.decoder(d, v, bp), brpe_out


@dataclass
class EstimateResult:
    rir: AudioClip
    estimate: RIREstimate
    sidecar: dict


SIDECAR_SCHEMA = {
    "bp_used": int,
    "rt60_of_estimate_s": float,
    "drr_of_estimate_db": float,
    "flags": list,
}


def validate_sidecar(sidecar: dict) -> None:
    for key, typ in SIDECAR_SCHEMA.items():
        if key not in sidecar:
            raise ModelError(f"sidecar missing key {key!r}")
        if not isinstance(sidecar[key], typ):
            raise ModelError(
                f"sidecar key {key!r} has type {type(sidecar[key]).__name__}, "
                f"expected {typ.__name__}")


def estimate_from_clip(model: BlindRirModel, clip: AudioClip,
                       noise_seed: int | None = None,
                       gt_logs: torch.Tensor | None = None) -> EstimateResult:
    """Full blind pipeline on one reverberant clip.

    gt_logs supplies the true (log_v, log_rt) pair for checkpoints trained
    with ground-truth parameter injection; blind checkpoints ignore it.
    """
    model.eval()
    dtype = next(model.parameters()).dtype
    wave = torch.as_tensor(np.asarray(clip.samples, dtype=np.float64),
                           dtype=dtype)[None, None, :]
    blocks = feature_block_tensor(clip, model.cfg, dtype)[None]
    if gt_logs is not None and gt_logs.ndim == 1:
        gt_logs = gt_logs[None]
    with torch.no_grad():
        est, brpe_out = model(wave, blocks=blocks, noise_seed=noise_seed,
                              gt_logs=gt_logs if model.gt_embed is not None else None)
    rir = AudioClip(est.h_hat[0].double().numpy(), clip.sample_rate)
    flags: list[str] = []
    try:
        rt60, rt_flags = rt60_with_fallback(rir)
        flags.extend(rt_flags)
    except ValueError:
        rt60 = float("nan")
        flags.append("rt60-unmeasurable")
    try:
        drr_db, drr_flags = drr(rir)
        flags.extend(drr_flags)
    except ValueError:
        drr_db = float("nan")
        flags.append("drr-unmeasurable")
    sidecar = {
        "bp_used": int(est.bp_used[0]),
        "rt60_of_estimate_s": float(rt60),
        "drr_of_estimate_db": float(drr_db),
        "flags": flags,
    }
    if brpe_out is not None:
        sidecar["log_v_hat"] = float(brpe_out.log_v_hat[0])
        sidecar["log_rt_hat"] = float(brpe_out.log_rt_hat[0])
        sidecar["log_bp_hat"] = float(brpe_out.log_bp_hat[0])
    validate_sidecar(sidecar)
    return EstimateResult(rir=rir, estimate=est, sidecar=sidecar)


def save_model(model: BlindRirModel, path) -> None:
    torch.save({"format": "rir-model-v1", "config": model.cfg.to_dict(),
                "state": model.state_dict()}, path)


def load_model(path) -> BlindRirModel:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format") != "rir-model-v1":
        raise ModelError(f"not a pipeline checkpoint: {path}")
    model = BlindRirModel(RunConfig.from_dict(blob["config"]))
    model.load_state_dict(blob["state"])
    return model
