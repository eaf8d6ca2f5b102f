"""Blind room-parameter estimation from "+Phase" feature blocks.

Pipeline: 16x16 patch embedding with learnable positions -> a stack of
bidirectional selective state-space blocks (explicit sequential scan, both
directions sharing parameters) -> mean pooling -> projection branches for the
global volume/RT60 feature vectors and linear heads for the log-domain
scalars. Also hosts the masked-patch self-supervised pretraining step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .config import BrpeConfig

PATCH = 16


class BrpeError(ValueError):
    pass


@dataclass
class PatchSequence:
    patches: torch.Tensor     # (batch, J, PATCH*PATCH) raw pixel blocks
    embedded: torch.Tensor    # (batch, J, D) == linear(patches) + positions
    grid: tuple[int, int]     # (rows, cols) of the patch tiling


@dataclass
class BrpeOutputs:
    q_v: torch.Tensor         # (batch, q_dim)
    q_zeta: torch.Tensor      # (batch, q_dim)
    log_v_hat: torch.Tensor   # (batch,)
    log_rt_hat: torch.Tensor  # (batch,)
    log_bp_hat: torch.Tensor  # (batch,)


def split_patches(block: torch.Tensor) -> tuple[torch.Tensor, tuple[int, int]]:
    """(batch, bins, frames) -> (batch, J, 256) row-major 16x16 tiles."""
    if block.ndim != 3:
        raise BrpeError(f"expected (batch, bins, frames), got {tuple(block.shape)}")
    b, bins, frames = block.shape
    if bins % PATCH or frames % PATCH:
        raise BrpeError(f"block ({bins}, {frames}) not aligned to {PATCH}")
    rows, cols = bins // PATCH, frames // PATCH
    tiles = (block.reshape(b, rows, PATCH, cols, PATCH)
                  .permute(0, 1, 3, 2, 4)
                  .reshape(b, rows * cols, PATCH * PATCH))
    return tiles, (rows, cols)


def merge_patches(tiles: torch.Tensor, grid: tuple[int, int]) -> torch.Tensor:
    """Exact inverse of split_patches."""
    b, j, _ = tiles.shape
    rows, cols = grid
    if j != rows * cols:
        raise BrpeError(f"patch count {j} does not match grid {grid}")
    return (tiles.reshape(b, rows, cols, PATCH, PATCH)
                 .permute(0, 1, 3, 2, 4)
                 .reshape(b, rows * PATCH, cols * PATCH))


class SelectiveSSMBlock(nn.Module):
    """Bidirectional selective-scan block; both directions share parameters.

    Per direction: pre-norm, project to (x, z), SiLU then causal 1-D conv on
    x, input-dependent (delta, B, C) recurrence over an explicit loop, gate by
    SiLU(z); directional outputs are averaged, passed through SiLU, and
    projected back to the embedding width with a residual connection.
    """

    def __init__(self, dim: int, state_dim: int, conv_kernel: int, expand: int):
        super().__init__()
        self.dim = dim
        self.inner = expand * dim
        self.state_dim = state_dim
        self.norm = nn.LayerNorm(dim)
        self.in_proj = nn.Linear(dim, 2 * self.inner)
        self.conv = nn.Conv1d(self.inner, self.inner, conv_kernel,
                              groups=self.inner, padding=0)
        self.conv_kernel = conv_kernel
        self.dt_proj = nn.Linear(self.inner, self.inner)
        self.bc_proj = nn.Linear(self.inner, 2 * state_dim)
        a = torch.arange(1, state_dim + 1, dtype=torch.float32)
        self.a_log = nn.Parameter(torch.log(a).repeat(self.inner, 1))
        self.skip = nn.Parameter(torch.ones(self.inner))
        self.out_proj = nn.Linear(self.inner, dim)

    def _scan(self, x: torch.Tensor) -> torch.Tensor:
        """Causal selective scan over (batch, J, inner)."""
        bsz, j, _ = x.shape
        delta = F.softplus(self.dt_proj(x))                      # (b, J, inner)
        bc = self.bc_proj(x)
        b_in, c_out = bc.split(self.state_dim, dim=-1)           # (b, J, state)
        a = -torch.exp(self.a_log)                               # (inner, state)
        h = x.new_zeros(bsz, self.inner, self.state_dim)
        ys = []
        for t in range(j):
            dt = delta[:, t].unsqueeze(-1)                       # (b, inner, 1)
            h = torch.exp(dt * a) * h + dt * b_in[:, t].unsqueeze(1) * x[:, t].unsqueeze(-1)
            ys.append((h * c_out[:, t].unsqueeze(1)).sum(-1))    # (b, inner)
        y = torch.stack(ys, dim=1)
        return y + self.skip * x

    def _direction(self, xz: torch.Tensor) -> torch.Tensor:
        """One causal pass over (batch, J, 2*inner) from the in-projection."""
        x, z = xz.split(self.inner, dim=-1)
        x = F.silu(x)
        x = F.pad(x.transpose(1, 2), (self.conv_kernel - 1, 0))
        x = self.conv(x).transpose(1, 2)
        return self._scan(x) * F.silu(z)

    def direction_outputs(self, u: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Pre-merge (forward, backward) branch outputs for (batch, J, dim)."""
        xz = self.in_proj(self.norm(u))
        fwd = self._direction(xz)
        bwd = self._direction(xz.flip(1)).flip(1)
        return fwd, bwd

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        fwd, bwd = self.direction_outputs(u)
        merged = F.silu(0.5 * (fwd + bwd))
        return u + self.out_proj(merged)


class RoomParamEstimator(nn.Module):
    def __init__(self, cfg: BrpeConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dim
        self.patch_embed = nn.Linear(PATCH * PATCH, d)
        self.positions = nn.Parameter(torch.zeros(cfg.max_patches, d))
        nn.init.normal_(self.positions, std=0.02)
        self.mask_token = nn.Parameter(torch.zeros(d))
        nn.init.normal_(self.mask_token, std=0.02)
        self.blocks = nn.ModuleList(
            SelectiveSSMBlock(d, cfg.state_dim, cfg.conv_kernel, cfg.expand)
            for _ in range(cfg.depth)
        )
        self.final_norm = nn.LayerNorm(d)
        self.proj_v = nn.Linear(d, cfg.q_dim)
        self.proj_zeta = nn.Linear(d, cfg.q_dim)
        self.head_v = nn.Linear(d, 1)
        self.head_rt = nn.Linear(d, 1)
        self.head_bp = nn.Linear(d, 1)
        self.reconstruct = nn.Linear(d, PATCH * PATCH)

    def patchify(self, block: torch.Tensor) -> PatchSequence:
        tiles, grid = split_patches(block)
        j = tiles.shape[1]
        if j > self.cfg.max_patches:
            raise BrpeError(f"{j} patches exceed max_patches={self.cfg.max_patches}")
        embedded = self.patch_embed(tiles) + self.positions[:j]
        return PatchSequence(patches=tiles, embedded=embedded, grid=grid)

    def encode(self, embedded: torch.Tensor) -> torch.Tensor:
        x = embedded
        for blk in self.blocks:
            x = blk(x)
        return self.final_norm(x)

    def forward(self, block: torch.Tensor) -> BrpeOutputs:
        seq = self.patchify(block)
        encoded = self.encode(seq.embedded)
        pooled = encoded.mean(dim=1)
        return BrpeOutputs(
            q_v=self.proj_v(pooled),
            q_zeta=self.proj_zeta(pooled),
            log_v_hat=self.head_v(pooled).squeeze(-1),
            log_rt_hat=self.head_rt(pooled).squeeze(-1),
            log_bp_hat=self.head_bp(pooled).squeeze(-1),
        )


def estimate_params(model: RoomParamEstimator, block: torch.Tensor) -> BrpeOutputs:
    """Eval-mode parameter estimation on a (bins, frames) block or a batch."""
    model.eval()
    single = block.ndim == 2
    with torch.no_grad():
        out = model(block[None] if single else block)
    return out


def _mask_indices(j: int, mask_ratio: float, seed: int) -> np.ndarray:
    n_mask = int(round(mask_ratio * j))
    if n_mask <= 0:
        raise BrpeError(f"mask_ratio {mask_ratio} masks zero of {j} patches")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(j, size=n_mask, replace=False))


def pretrain_step(model: RoomParamEstimator, blocks: torch.Tensor,
                  mask_ratio: float, seeds: list[int]) -> dict[str, torch.Tensor]:
    """Masked-patch objectives for a batch of (bins, frames) blocks.

    Masking is a per-sample function of `seeds`, so permuting the batch
    (with seeds permuted alongside) leaves both losses unchanged. Generative
    loss: MSE of reconstructed masked pixels. Discriminative loss: in-batch
    contrastive match between each masked position's encoding and its clean
    patch embedding.
    """
    if not (0.0 < mask_ratio < 1.0):
        raise BrpeError(f"mask_ratio must lie in (0, 1), got {mask_ratio}")
    if len(seeds) != blocks.shape[0]:
        raise BrpeError("one mask seed required per sample")
    seq = model.patchify(blocks)
    bsz, j, _ = seq.embedded.shape
    masked = seq.embedded.clone()
    mask_pos = [_mask_indices(j, mask_ratio, s) for s in seeds]
    for b, pos in enumerate(mask_pos):
        masked[b, pos] = model.mask_token + model.positions[pos]
    encoded = model.encode(masked)

    anchors, pixel_targets, embed_targets = [], [], []
    for b, pos in enumerate(mask_pos):
        anchors.append(encoded[b, pos])
        pixel_targets.append(seq.patches[b, pos])
        embed_targets.append(model.patch_embed(seq.patches[b, pos]))
    anchors = torch.cat(anchors)
    pixel_targets = torch.cat(pixel_targets)
    embed_targets = torch.cat(embed_targets)

    loss_gen = F.mse_loss(model.reconstruct(anchors), pixel_targets)

    a = F.normalize(anchors, dim=-1)
    t = F.normalize(embed_targets, dim=-1)
    logits = a @ t.T / model.cfg.contrastive_temperature
    labels = torch.arange(a.shape[0], device=a.device)
    loss_disc = F.cross_entropy(logits, labels)
    return {"loss_generative": loss_gen, "loss_discriminative": loss_disc}


def finetune_loss(out: BrpeOutputs, log_v: torch.Tensor, log_rt: torch.Tensor,
                  log_bp: torch.Tensor) -> torch.Tensor:
    """MSE between predicted and true log-mapped parameters, averaged."""
    return (F.mse_loss(out.log_v_hat, log_v)
            + F.mse_loss(out.log_rt_hat, log_rt)
            + F.mse_loss(out.log_bp_hat, log_bp)) / 3.0


def save_checkpoint(model: RoomParamEstimator, path) -> None:
    torch.save({"format": "brpe-v1", "config": model.cfg.__dict__,
                "state": model.state_dict()}, path)


def load_checkpoint(path) -> RoomParamEstimator:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format") != "brpe-v1":
        raise BrpeError(f"not a room-parameter checkpoint: {path}")
    model = RoomParamEstimator(BrpeConfig(**blob["config"]))
    model.load_state_dict(blob["state"])
    return model
