"""Training loops: estimator pretraining/fine-tuning and RIR model training.

The RIR loop follows the recipe in the run config: AdamW with decoupled
weight decay, stepped learning-rate decay, global gradient-norm clipping,
per-epoch history rows persisted as CSV, optional mixed precision, and full
determinism under a fixed seed when mixed precision is off. The estimator
(BRPE) trains separately and is frozen during RIR training.
"""

from __future__ import annotations

import csv
import hashlib
import math
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .audio import AudioClip, load_wav
from .brpe import RoomParamEstimator, finetune_loss, pretrain_step, save_checkpoint
from .config import RunConfig
from .data import CorpusEntry, RoomParams, fix_length, log_map
from .dsp import extract_feature_block
from .losses import multi_res_stft_loss
from .model import BlindRirModel, save_model


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainingExample:
    speech: np.ndarray
    rir: np.ndarray
    params: RoomParams


@dataclass
class TrainResult:
    history: list[dict]
    step_losses: list[float]
    checkpoint_path: str | None


def examples_from_entries(entries: list[CorpusEntry],
                          split: str | None = None) -> list[TrainingExample]:
    out = []
    for e in entries:
        if split is not None and e.split != split:
            continue
        speech = load_wav(e.speech_path)
        rir = fix_length(load_wav(e.rir_path))
        out.append(TrainingExample(speech.samples, rir.samples, e.params))
    if not out:
        raise TrainingError(f"no examples for split {split!r}")
    return out


def _pad_speech(examples: list[TrainingExample]) -> np.ndarray:
    max_len = max(len(e.speech) for e in examples)
    waves = np.zeros((len(examples), max_len))
    for i, e in enumerate(examples):
        waves[i, : len(e.speech)] = e.speech
    return waves


def feature_blocks(waves: np.ndarray, cfg: RunConfig,
                   dtype: torch.dtype = torch.float32) -> torch.Tensor:
    blocks = [extract_feature_block(AudioClip(w, 16000), cfg.dsp).values
              for w in waves]
    return torch.as_tensor(np.stack(blocks), dtype=dtype)


def _param_hash(module: torch.nn.Module) -> str:
    digest = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(p.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def _check_finite(loss: torch.Tensor, where: str) -> None:
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite loss ({float(loss.detach())}) at {where}")


def _autocast(enabled: bool):
    if not enabled:
        return nullcontext()
    device = "cuda" if torch.cuda.is_available() else "cpu"
    return torch.autocast(device_type=device)


def train_rir_model(model: BlindRirModel, examples: list[TrainingExample],
                    out_dir: str | Path | None = None, *,
                    val_examples: list[TrainingExample] = (),
                    max_steps: int | None = None,
                    freeze_brpe: bool = True,
                    epochs: int | None = None) -> TrainResult:
    """Train the decoder-side pipeline against the multi-resolution STFT loss.

    The boundary point is teacher-forced from labels in dynamic mode (the
    fixed-50 ms ablation ignores it); ground-truth injection mode feeds the
    true log parameters to the fusion stage instead of estimator outputs.
    """
    if not examples:
        raise TrainingError("corpus empty")
    cfg = model.cfg
    tc = cfg.train
    epochs = tc.epochs if epochs is None else epochs
    torch.manual_seed(tc.seed)

    if freeze_brpe:
        for p in model.brpe.parameters():
            p.requires_grad_(False)
        brpe_hash = _param_hash(model.brpe)

    need_blocks = model.gt_embed is None
    waves = _pad_speech(examples)
    wave_t = torch.as_tensor(waves, dtype=torch.float32)[:, None, :]
    rir_t = torch.as_tensor(np.stack([e.rir for e in examples]),
                            dtype=torch.float32)
    bp_t = torch.as_tensor([e.params.bp_samples for e in examples],
                           dtype=torch.int64)
    logs = [log_map(e.params) for e in examples]
    gt_t = torch.as_tensor([[lp.log_v, lp.log_rt] for lp in logs],
                           dtype=torch.float32)
    blocks_t = feature_blocks(waves, cfg) if need_blocks else None

    val_batch = None
    if val_examples:
        v_waves = _pad_speech(val_examples)
        val_batch = (
            torch.as_tensor(v_waves, dtype=torch.float32)[:, None, :],
            torch.as_tensor(np.stack([e.rir for e in val_examples]),
                            dtype=torch.float32),
            torch.as_tensor([e.params.bp_samples for e in val_examples],
                            dtype=torch.int64),
            torch.as_tensor([[log_map(e.params).log_v, log_map(e.params).log_rt]
                             for e in val_examples], dtype=torch.float32),
            feature_blocks(v_waves, cfg) if need_blocks else None,
        )

    trainable = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(trainable, lr=tc.lr_init, weight_decay=tc.weight_decay)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    history: list[dict] = []
    step_losses: list[float] = []
    step = 0
    n = len(examples)

    for epoch in range(epochs):
        lr = tc.lr_at_epoch(epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        order = np.random.default_rng(tc.seed * 1009 + epoch).permutation(n)
        model.train()
        epoch_losses = []
        for start in range(0, n, tc.batch_size):
            idx = order[start: start + tc.batch_size]
            opt.zero_grad()
            with _autocast(tc.mixed_precision):
                est, _ = model(
                    wave_t[idx],
                    blocks=blocks_t[idx] if need_blocks else None,
                    bp_override=bp_t[idx],
                    gt_logs=gt_t[idx] if model.gt_embed is not None else None,
                    noise_seed=tc.seed * 1000003 + step,
                )
                loss = multi_res_stft_loss(rir_t[idx], est.h_hat, cfg.loss)
            _check_finite(loss, f"epoch {epoch} step {step}")
            loss.backward()
            torch.nn.utils.clip_grad_norm_(trainable, tc.grad_clip_norm)
            opt.step()
            loss_val = float(loss.detach())
            step_losses.append(loss_val)
            epoch_losses.append(loss_val)
            step += 1
            if max_steps is not None and step >= max_steps:
                break

        val_loss = math.nan
        if val_batch is not None:
            model.eval()
            vw, vr, vbp, vgt, vblocks = val_batch
            with torch.no_grad():
                est, _ = model(vw, blocks=vblocks, bp_override=vbp,
                               gt_logs=vgt if model.gt_embed is not None else None,
                               noise_seed=tc.seed)
                val_loss = float(multi_res_stft_loss(vr, est.h_hat, cfg.loss))
        history.append({"epoch": epoch, "train_loss": float(np.mean(epoch_losses)),
                        "val_loss": val_loss, "lr": lr})
        if out is not None and (epoch + 1) % tc.checkpoint_every == 0:
            save_model(model, out / f"checkpoint_epoch{epoch + 1}.pt")
        if max_steps is not None and step >= max_steps:
            break

    if freeze_brpe and _param_hash(model.brpe) != brpe_hash:
        raise TrainingError("frozen estimator parameters changed during training")

    path = None
    if out is not None:
        path = str(out / "model.pt")
        save_model(model, path)
        with open(out / "history.csv", "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["epoch", "train_loss",
                                                   "val_loss", "lr"])
            writer.writeheader()
            writer.writerows(history)
    return TrainResult(history=history, step_losses=step_losses,
                       checkpoint_path=path)


def pretrain_brpe(model: RoomParamEstimator, blocks: torch.Tensor, *,
                  epochs: int = 5, batch_size: int = 16, lr: float = 1e-3,
                  seed: int = 0, out_path: str | Path | None = None
                  ) -> list[float]:
    """Masked-patch self-supervised pretraining; returns per-step losses."""
    torch.manual_seed(seed)
    opt = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=1e-2)
    n = blocks.shape[0]
    losses = []
    step = 0
    for epoch in range(epochs):
        order = np.random.default_rng(seed * 1009 + epoch).permutation(n)
        model.train()
        for start in range(0, n, batch_size):
            idx = order[start: start + batch_size]
            seeds = [seed * 1000003 + int(i) for i in idx]
            opt.zero_grad()
            out = pretrain_step(model, blocks[idx], model.cfg.mask_ratio, seeds)
            loss = out["loss_generative"] + out["loss_discriminative"]
            _check_finite(loss, f"pretrain epoch {epoch} step {step}")
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), 5.0)
            opt.step()
            losses.append(float(loss.detach()))
            step += 1
    if out_path is not None:
        save_checkpoint(model, out_path)
    return losses


def finetune_brpe(model: RoomParamEstimator, blocks: torch.Tensor,
                  labels: torch.Tensor, *, epochs: int = 20, batch_size: int = 16,
                  lr: float = 1e-3, seed: int = 0,
                  val_blocks: torch.Tensor | None = None,
                  val_labels: torch.Tensor | None = None,
                  target_rho: tuple[float, float] | None = None,
                  out_path: str | Path | None = None) -> list[dict]:
    """Supervised fine-tune on (block, [log_v, log_rt, log_bp]) pairs.

    If target_rho = (rho_rt, rho_bp) is given and validation data is present,
    stops early once held-out correlations exceed both targets.
    """
    if labels.shape[1] != 3:
        raise TrainingError("labels must be (n, 3): log_v, log_rt, log_bp")
    torch.manual_seed(seed)
    opt = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=1e-2)
    n = blocks.shape[0]
    history = []
    for epoch in range(epochs):
        order = np.random.default_rng(seed * 1009 + epoch).permutation(n)
        model.train()
        epoch_losses = []
        for start in range(0, n, batch_size):
            idx = order[start: start + batch_size]
            opt.zero_grad()
            out = model(blocks[idx])
            loss = finetune_loss(out, labels[idx, 0], labels[idx, 1],
                                 labels[idx, 2])
            _check_finite(loss, f"finetune epoch {epoch}")
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), 5.0)
            opt.step()
            epoch_losses.append(float(loss.detach()))
        row = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses))}
        if val_blocks is not None:
            est = predict_params(model, val_blocks, batch_size)
            truth = val_labels.numpy()
            row["rho_rt"] = _pearson(est[:, 1], truth[:, 1])
            row["rho_bp"] = _pearson(est[:, 2], truth[:, 2])
        history.append(row)
        if (target_rho is not None and "rho_rt" in row
                and row["rho_rt"] >= target_rho[0]
                and row["rho_bp"] >= target_rho[1]):
            break
    if out_path is not None:
        save_checkpoint(model, out_path)
    return history


def predict_params(model: RoomParamEstimator, blocks: torch.Tensor,
                   batch_size: int = 16) -> np.ndarray:
    """Eval-mode predictions -> (n, 3) array of log_v, log_rt, log_bp."""
    model.eval()
    rows = []
    with torch.no_grad():
        for start in range(0, blocks.shape[0], batch_size):
            out = model(blocks[start: start + batch_size])
            rows.append(torch.stack([out.log_v_hat, out.log_rt_hat,
                                     out.log_bp_hat], dim=1))
    return torch.cat(rows).numpy()


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.corrcoef(a, b)[0, 1])
