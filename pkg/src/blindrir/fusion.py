"""Feature fusion: room parameter vectors meet the audio feature map.

The hybrid path projects q_v/q_zeta through LayerNorm+Linear heads, broadcasts
the combined room vector along time, pre-fuses it with the audio features,
then runs one transformer-style layer whose queries come from the pre-fused
map and keys/values from the audio map, alongside a lightweight pointwise FFN
on the room map; both branches concatenate into the fused map. A naive
baseline (concat + two linear layers) sits behind the same interface for the
ablation switch, as does a ground-truth injection mode that swaps learned
embeddings of the true log-parameters in place of estimator outputs.

All feature maps are (batch, channels, frames).
"""

from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn import functional as F

from .config import FusionConfig


class FusionError(ValueError):
    pass


class ProjectionHead(nn.Module):
    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(in_dim)
        self.linear = nn.Linear(in_dim, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.linear(self.norm(x))


class GroundTruthEmbedding(nn.Module):
    """Maps the true (log_v, log_rt) scalars to stand-ins for q_v/q_zeta."""

    def __init__(self, q_dim: int):
        super().__init__()
        self.embed_v = nn.Linear(1, q_dim)
        self.embed_zeta = nn.Linear(1, q_dim)

    def forward(self, log_v: torch.Tensor, log_rt: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.embed_v(log_v[:, None]), self.embed_zeta(log_rt[:, None])


class HybridFusion(nn.Module):
    def __init__(self, cfg: FusionConfig, q_dim: int, n_s: int):
        super().__init__()
        if cfg.n_a % cfg.heads:
            raise FusionError(f"n_a={cfg.n_a} not divisible by heads={cfg.heads}")
        self.cfg = cfg
        self.head_v = ProjectionHead(q_dim, cfg.n_v)
        self.head_zeta = ProjectionHead(q_dim, cfg.n_zeta)
        self.room_map = nn.Linear(cfg.n_v + cfg.n_zeta, cfg.n_a)
        self.pre_proj = nn.Linear(cfg.n_a + n_s, cfg.n_a)
        self.w_q = nn.Linear(cfg.n_a, cfg.n_a)
        self.w_k = nn.Linear(n_s, cfg.n_a)
        self.w_v = nn.Linear(n_s, cfg.n_a)
        self.w_out = nn.Linear(cfg.n_a, cfg.n_a)
        self.norm_attn = nn.LayerNorm(cfg.n_a)
        self.ffn = nn.Sequential(
            nn.Linear(cfg.n_a, cfg.n_ff), nn.ReLU(), nn.Linear(cfg.n_ff, cfg.n_a)
        )
        self.norm_ffn = nn.LayerNorm(cfg.n_a)
        self.room_ffn = nn.Sequential(
            nn.Linear(cfg.n_a, cfg.n_a), nn.ReLU(), nn.Linear(cfg.n_a, cfg.n_a)
        )
        self.norm_room = nn.LayerNorm(cfg.n_a)
        self.merge = nn.Linear(2 * cfg.n_a, cfg.n_c)

    def project_and_broadcast(self, q_v: torch.Tensor, q_zeta: torch.Tensor,
                              frames: int) -> torch.Tensor:
        """(batch, q_dim) twice -> F_a of shape (batch, n_a, frames)."""
        if frames < 1:
            raise FusionError("frames must be >= 1")
        r = torch.cat([self.head_v(q_v), self.head_zeta(q_zeta)], dim=-1)
        f_a = self.room_map(r)
        return f_a[:, :, None].expand(-1, -1, frames)

    def pre_fuse(self, f_a: torch.Tensor, f_s: torch.Tensor) -> torch.Tensor:
        if f_a.shape[-1] != f_s.shape[-1]:
            raise FusionError(
                f"frame mismatch: {f_a.shape[-1]} vs {f_s.shape[-1]}")
        stacked = torch.cat([f_a, f_s], dim=1).transpose(1, 2)
        return self.pre_proj(stacked).transpose(1, 2)

    def attention(self, x_pre: torch.Tensor, f_s: torch.Tensor
                  ) -> tuple[torch.Tensor, torch.Tensor]:
        """Multi-head cross-attention; returns (pre-projection output, weights).

        Queries from the pre-fused map, keys/values from the audio map.
        Output is (batch, frames, n_a); weights are (batch, heads, Lq, Lk).
        """
        cfg = self.cfg
        q_in = x_pre.transpose(1, 2)
        kv_in = f_s.transpose(1, 2)
        bsz, lq, _ = q_in.shape
        lk = kv_in.shape[1]

        def heads(t: torch.Tensor, length: int) -> torch.Tensor:
            return t.reshape(bsz, length, cfg.heads, cfg.d_k).transpose(1, 2)

        q = heads(self.w_q(q_in), lq)
        k = heads(self.w_k(kv_in), lk)
        v = heads(self.w_v(kv_in), lk)
        weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(cfg.d_k), dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(bsz, lq, cfg.n_a)
        return out, weights

    def audio_attention_path(self, f_s: torch.Tensor, x_pre: torch.Tensor
                             ) -> torch.Tensor:
        attn, _ = self.attention(x_pre, f_s)
        x = self.norm_attn(x_pre.transpose(1, 2) + self.w_out(attn))
        x = self.norm_ffn(x + self.ffn(x))
        return x.transpose(1, 2)

    def room_path_and_fuse(self, f_a: torch.Tensor, f_s_enh: torch.Tensor
                           ) -> torch.Tensor:
        if f_a.shape[-1] != f_s_enh.shape[-1]:
            raise FusionError(
                f"frame mismatch: {f_a.shape[-1]} vs {f_s_enh.shape[-1]}")
        a = f_a.transpose(1, 2)
        f_a_enh = self.norm_room(a + self.room_ffn(a))
        merged = torch.cat([f_s_enh.transpose(1, 2), f_a_enh], dim=-1)
        return self.merge(merged).transpose(1, 2)

    def forward(self, q_v: torch.Tensor, q_zeta: torch.Tensor,
                f_s: torch.Tensor) -> torch.Tensor:
        f_a = self.project_and_broadcast(q_v, q_zeta, f_s.shape[-1])
        x_pre = self.pre_fuse(f_a, f_s)
        f_s_enh = self.audio_attention_path(f_s, x_pre)
        return self.room_path_and_fuse(f_a, f_s_enh)


class NaiveFusion(nn.Module):
    """Ablation baseline: broadcast-concat everything, two linear layers."""

    def __init__(self, cfg: FusionConfig, q_dim: int, n_s: int):
        super().__init__()
        self.cfg = cfg
        self.net = nn.Sequential(
            nn.Linear(2 * q_dim + n_s, cfg.n_c), nn.ReLU(),
            nn.Linear(cfg.n_c, cfg.n_c),
        )

    def forward(self, q_v: torch.Tensor, q_zeta: torch.Tensor,
                f_s: torch.Tensor) -> torch.Tensor:
        frames = f_s.shape[-1]
        room = torch.cat([q_v, q_zeta], dim=-1)[:, :, None].expand(-1, -1, frames)
        stacked = torch.cat([room, f_s], dim=1).transpose(1, 2)
        return self.net(stacked).transpose(1, 2)


def build_fusion(cfg: FusionConfig, q_dim: int, n_s: int) -> nn.Module:
    if cfg.method == "hybrid_cross_attention":
        return HybridFusion(cfg, q_dim, n_s)
    if cfg.method == "naive":
        return NaiveFusion(cfg, q_dim, n_s)
    raise FusionError(f"unknown fusion method {cfg.method!r}")
