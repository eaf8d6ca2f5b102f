"""Multi-resolution STFT loss: spectral convergence + log-magnitude terms.

Frames are taken without center padding, so the frame count is
floor((samples - frame_len)/hop) + 1, matching the analysis STFT elsewhere
in the package. The magnitude term follows the per-frame normalization: the
L1 norm sums over bins and frames, divided by the frame count.
"""

from __future__ import annotations

import torch

from .config import LossConfig


class LossError(ValueError):
    pass


def _magnitude(x: torch.Tensor, frame_len: int, hop: int) -> torch.Tensor:
    if x.ndim == 1:
        x = x[None]
    if x.shape[-1] < frame_len:
        raise LossError(f"signal shorter than one frame ({frame_len})")
    window = torch.hann_window(frame_len, dtype=x.dtype, device=x.device)
    spec = torch.stft(x, n_fft=frame_len, hop_length=hop, win_length=frame_len,
                      window=window, center=False, return_complex=True)
    return spec.abs()


def spectral_convergence(h: torch.Tensor, h_hat: torch.Tensor,
                         frame_len: int, hop: int | None = None) -> torch.Tensor:
    """|| |H| - |H_hat| ||_F / || |H| ||_F, averaged over the batch."""
    hop = hop or frame_len // 2
    mag = _magnitude(h, frame_len, hop)
    mag_hat = _magnitude(h_hat, frame_len, hop)
    denom = torch.linalg.norm(mag.flatten(1), dim=1)
    if (denom == 0).any():
        raise LossError("undefined SC (zero denominator)")
    num = torch.linalg.norm((mag - mag_hat).flatten(1), dim=1)
    return (num / denom).mean()


def log_stft_magnitude(h: torch.Tensor, h_hat: torch.Tensor, frame_len: int,
                       hop: int | None = None, mag_floor: float = 1e-7) -> torch.Tensor:
    """(1/frames) * L1 of ln|H| - ln|H_hat| with floored magnitudes."""
    hop = hop or frame_len // 2
    mag = _magnitude(h, frame_len, hop).clamp_min(mag_floor)
    mag_hat = _magnitude(h_hat, frame_len, hop).clamp_min(mag_floor)
    frames = mag.shape[-1]
    l1 = (mag.log() - mag_hat.log()).abs().flatten(1).sum(dim=1)
    return (l1 / frames).mean()


def multi_res_stft_loss(h: torch.Tensor, h_hat: torch.Tensor,
                        cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Mean over resolutions of (spectral convergence + log-magnitude)."""
    if h.shape != h_hat.shape:
        raise LossError(f"shape mismatch: {tuple(h.shape)} vs {tuple(h_hat.shape)}")
    total = None
    for frame_len, hop in zip(cfg.frame_lens, cfg.hops):
        term = (spectral_convergence(h, h_hat, frame_len, hop)
                + log_stft_magnitude(h, h_hat, frame_len, hop, cfg.mag_floor))
        total = term if total is None else total + term
    return total / len(cfg.frame_lens)
