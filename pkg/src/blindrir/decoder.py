"""RIR synthesis decoder.

A pooled fused-feature latent d and a per-call noise vector v seed a
(C_0, 125) tensor that seven x2 upsampling blocks grow to 16000 samples.
Each block runs a transposed-conv stage for coarse temporal structure, then
a dilated-conv stage for fine structure, both FiLM-conditioned on (d, v).
The final conv emits one early-reflection channel plus G mask channels;
sigmoid masks gate a bank of trainable FIR filters applied to a noise signal
fixed per checkpoint seed, and a bias-free 1x1 conv mixes everything into
the estimated RIR. The early channel is zeroed at and beyond the boundary
point.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .config import DecoderConfig


class DecoderError(ValueError):
    pass


@dataclass
class RIREstimate:
    h_hat: torch.Tensor      # (batch, rir_len)
    h_early: torch.Tensor    # (batch, rir_len), zero at n >= bp
    masks: torch.Tensor      # (batch, G, rir_len), pre-sigmoid
    subbands: torch.Tensor   # (batch, G, rir_len)
    bp_used: torch.Tensor    # (batch,) int64 samples


class FiLMLayer(nn.Module):
    """Per-channel scale/shift from the conditioning vector.

    The generator is zero-initialized so gamma == 1, beta == 0 at start and
    the layer is the identity until trained.
    """

    def __init__(self, cond_dim: int, channels: int, zero_init: bool = True):
        super().__init__()
        self.net = nn.Linear(cond_dim, 2 * channels)
        if zero_init:
            nn.init.zeros_(self.net.weight)
            nn.init.zeros_(self.net.bias)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        dgamma, beta = self.net(cond).chunk(2, dim=-1)
        return (1.0 + dgamma)[:, :, None] * x + beta[:, :, None]


class FilterBank(nn.Module):
    """G trainable causal FIR filters over a fixed standard-normal noise.

    f_g(n) = sum_gamma taps[g, gamma] * e[n - gamma], with zero history.
    The noise e is a buffer generated from `noise_seed`, so it rides along
    in checkpoints; taps start as unit impulses.
    """

    def __init__(self, num_filters: int, fir_order: int, length: int, noise_seed: int):
        super().__init__()
        taps = torch.zeros(num_filters, fir_order + 1)
        taps[:, 0] = 1.0
        self.taps = nn.Parameter(taps)
        gen = torch.Generator().manual_seed(noise_seed)
        self.register_buffer("noise", torch.randn(length, generator=gen))

    def forward(self) -> torch.Tensor:
        order = self.taps.shape[1] - 1
        e = self.noise.to(self.taps.dtype)
        padded = F.pad(e[None, None, :], (order, 0))
        return F.conv1d(padded, self.taps.flip(-1)[:, None, :])[0]


class UpsampleBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, cond_dim: int):
        super().__init__()
        self.up = nn.ConvTranspose1d(in_ch, out_ch, 4, stride=2, padding=1)
        self.film_a = FiLMLayer(cond_dim, out_ch)
        self.conv1 = nn.Conv1d(out_ch, out_ch, 3, padding=1, dilation=1)
        self.conv3 = nn.Conv1d(out_ch, out_ch, 3, padding=3, dilation=3)
        self.film_b = FiLMLayer(cond_dim, out_ch)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        x = self.act(self.film_a(self.up(x), cond))
        r = x
        x = self.conv1(self.act(x))
        x = self.film_b(x, cond)
        x = self.conv3(self.act(x))
        return x + r


class RIRDecoder(nn.Module):
    def __init__(self, cfg: DecoderConfig, latent_dim: int):
        super().__init__()
        if cfg.seed_len * 2 ** cfg.num_blocks != cfg.rir_len:
            raise DecoderError(
                f"seed_len {cfg.seed_len} with {cfg.num_blocks} x2 blocks "
                f"cannot reach rir_len {cfg.rir_len}")
        self.cfg = cfg
        cond_dim = latent_dim + cfg.noise_dim
        self.seed = nn.Linear(cond_dim, cfg.base_channels * cfg.seed_len)
        widths = [max(cfg.base_channels >> (k // 2), 16)
                  for k in range(cfg.num_blocks + 1)]
        self.blocks = nn.ModuleList(
            UpsampleBlock(widths[k], widths[k + 1], cond_dim)
            for k in range(cfg.num_blocks)
        )
        self.head = nn.Conv1d(widths[-1], 1 + cfg.num_filters, 3, padding=1)
        self.filters = FilterBank(cfg.num_filters, cfg.fir_order,
                                  cfg.rir_len, cfg.noise_seed)
        self.mix = nn.Conv1d(1 + cfg.num_filters, 1, 1, bias=False)

    def make_noise(self, batch: int, seed: int | None = None,
                   dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """Fresh per-synthesis noise v; seeded for reproducibility."""
        if seed is None:
            return torch.randn(batch, self.cfg.noise_dim, dtype=dtype)
        gen = torch.Generator().manual_seed(seed)
        return torch.randn(batch, self.cfg.noise_dim, generator=gen, dtype=dtype)

    def forward(self, d: torch.Tensor, v: torch.Tensor,
                bp: torch.Tensor) -> RIREstimate:
        cfg = self.cfg
        if d.ndim != 2 or v.ndim != 2:
            raise DecoderError("d and v must be (batch, dim)")
        bp = torch.as_tensor(bp, dtype=torch.int64, device=d.device)
        if bp.ndim == 0:
            bp = bp[None].expand(d.shape[0]).clone()
        if ((bp <= 0) | (bp > cfg.rir_len)).any():
            raise DecoderError(f"bp out of range (0, {cfg.rir_len}]")
        cond = torch.cat([d, v], dim=-1)
        x = self.seed(cond).reshape(d.shape[0], cfg.base_channels, cfg.seed_len)
        for block in self.blocks:
            x = block(x, cond)
        channels = self.head(x)
        early_raw = channels[:, 0]
        masks = channels[:, 1:]
        keep = (torch.arange(cfg.rir_len, device=d.device)[None, :]
                < bp[:, None]).to(early_raw.dtype)
        h_early = early_raw * keep
        f = self.filters().to(early_raw.dtype)
        subbands = f[None] * torch.sigmoid(masks)
        h_hat = self.mix(torch.cat([h_early[:, None], subbands], dim=1))[:, 0]
        return RIREstimate(h_hat=h_hat, h_early=h_early, masks=masks,
                           subbands=subbands, bp_used=bp)


def pool_latent(f_c: torch.Tensor) -> torch.Tensor:
    """Temporal mean of a (batch, channels, frames) map -> (batch, channels)."""
    if f_c.shape[-1] < 1:
        raise DecoderError("cannot pool an empty feature map")
    return f_c.mean(dim=-1)
