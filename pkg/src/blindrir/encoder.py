"""Deep 1-D convolutional encoder: raw reverberant speech -> audio features.

Five residual blocks, each four conv/batch-norm/PReLU layers with the block's
first layer (and a parallel 1x1 shortcut) carrying stride 2, so the time axis
shrinks by 2 per block. A final 1x1 convolution projects to the latent width.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .audio import AudioClip
from .config import EncoderConfig


class EncoderBlock(nn.Module):
    """4 x (conv -> BN -> PReLU); stride 2 on the first conv, 1x1+BN shortcut."""

    def __init__(self, in_ch: int, out_ch: int, kernel_first: int, kernel_rest: int):
        super().__init__()
        layers = []
        k = kernel_first
        ch = in_ch
        for i in range(4):
            stride = 2 if i == 0 else 1
            layers += [
                nn.Conv1d(ch, out_ch, k, stride=stride, padding=k // 2),
                nn.BatchNorm1d(out_ch),
                nn.PReLU(out_ch),
            ]
            ch = out_ch
            k = kernel_rest
        self.main = nn.Sequential(*layers)
        self.shortcut = nn.Sequential(
            nn.Conv1d(in_ch, out_ch, 1, stride=2),
            nn.BatchNorm1d(out_ch),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.main(x) + self.shortcut(x)


class DeepAudioEncoder(nn.Module):
    """Raw waveform (batch, 1, T) -> feature map (batch, latent_channels, T/2^B)."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        if len(cfg.channel_schedule) != cfg.num_blocks:
            raise ValueError("channel_schedule length must equal num_blocks")
        self.cfg = cfg
        blocks = []
        ch = 1
        for out_ch in cfg.channel_schedule:
            blocks.append(EncoderBlock(ch, out_ch, cfg.kernel_first, cfg.kernel_rest))
            ch = out_ch
        self.blocks = nn.ModuleList(blocks)
        self.project = nn.Conv1d(ch, cfg.latent_channels, 1)

    def forward(self, wave: torch.Tensor) -> torch.Tensor:
        if wave.ndim != 3 or wave.shape[1] != 1:
            raise ValueError(f"expected (batch, 1, samples), got {tuple(wave.shape)}")
        if wave.shape[-1] == 0:
            raise ValueError("empty clip")
        factor = self.cfg.downsample_factor
        pad = (-wave.shape[-1]) % factor
        if pad:
            wave = torch.nn.functional.pad(wave, (0, pad))
        x = wave
        for block in self.blocks:
            x = block(x)
        return self.project(x)


def encode_audio(clip: AudioClip, encoder: DeepAudioEncoder,
                 mode: str = "eval") -> torch.Tensor:
    """Single-clip convenience wrapper; returns F_s as (channels, frames)."""
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    encoder.train(mode == "train")
    wave = torch.as_tensor(np.asarray(clip.samples, dtype=np.float32))[None, None, :]
    wave = wave.to(next(encoder.parameters()).dtype)
    with torch.no_grad() if mode == "eval" else torch.enable_grad():
        out = encoder(wave)
    return out[0]
