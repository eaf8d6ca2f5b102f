"""Evaluation metrics for estimated room parameters and synthesized RIRs.

Parameter metrics come in a log10 family (MSE, MAE, Pearson rho, and the mean
multiplicative error factor "mean mult") and a linear family (median absolute
error, MAE). RIR-level metrics re-analyze estimated and true impulse
responses (RT60, DRR) and add spectral losses and time-domain MAE.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .acoustics import drr, rt60_with_fallback
from .audio import AudioClip
from .config import LossConfig
from .losses import log_stft_magnitude, multi_res_stft_loss, spectral_convergence


class MetricError(ValueError):
    pass


def pearson_rho(a: np.ndarray, b: np.ndarray) -> tuple[float | None, list[str]]:
    """Pearson correlation; undefined under zero variance -> (None, flag)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.std() == 0 or b.std() == 0:
        return None, ["rho-undefined"]
    cov = np.mean((a - a.mean()) * (b - b.mean()))
    return float(cov / (a.std() * b.std())), []


def log_scale_metrics(est: np.ndarray, true: np.ndarray) -> dict:
    est = np.asarray(est, dtype=float)
    true = np.asarray(true, dtype=float)
    if est.shape != true.shape or est.size < 2:
        raise MetricError("need paired vectors of length >= 2")
    if (est <= 0).any() or (true <= 0).any():
        raise MetricError("log-scale metrics require positive values")
    d = np.log10(est) - np.log10(true)
    rho, flags = pearson_rho(np.log10(est), np.log10(true))
    return {
        "mse": float(np.mean(d ** 2)),
        "mae": float(np.mean(np.abs(d))),
        "rho": rho,
        "mm": float(np.mean(10.0 ** np.abs(d))),
        "flags": flags,
    }


def linear_scale_metrics(est: np.ndarray, true: np.ndarray) -> dict:
    est = np.asarray(est, dtype=float)
    true = np.asarray(true, dtype=float)
    if est.shape != true.shape:
        raise MetricError("length mismatch")
    err = np.abs(est - true)
    return {"median_abs_err": float(np.median(err)), "mae": float(np.mean(err))}


@dataclass
class RirMetricReport:
    rt60: dict
    drr: dict
    stft_loss: float
    sc_loss: float
    mag_loss: float
    mae_time: float
    n_pairs: int
    n_excluded: int
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"rt60": self.rt60, "drr": self.drr, "stft_loss": self.stft_loss,
                "sc_loss": self.sc_loss, "mag_loss": self.mag_loss,
                "mae_time": self.mae_time, "n_pairs": self.n_pairs,
                "n_excluded": self.n_excluded, "flags": self.flags}


def _error_stats(est: np.ndarray, true: np.ndarray) -> dict:
    diff = est - true
    rho, flags = pearson_rho(est, true)
    return {
        "rho": rho,
        "mse": float(np.mean(diff ** 2)),
        "rmse": float(np.sqrt(np.mean(diff ** 2))),
        "bias": float(np.mean(diff)),
        "flags": flags,
    }


def rir_acoustic_metrics(h_hat_set: list[np.ndarray], h_set: list[np.ndarray],
                         sample_rate: int = 16000,
                         loss_cfg: LossConfig = LossConfig()) -> RirMetricReport:
    if len(h_hat_set) != len(h_set):
        raise MetricError("paired sets must have equal lengths")
    rt_est, rt_true, drr_est, drr_true = [], [], [], []
    sc_vals, mag_vals, loss_vals, mae_vals = [], [], [], []
    excluded = 0
    for h_hat, h in zip(h_hat_set, h_set):
        try:
            est_clip = AudioClip(np.asarray(h_hat, dtype=float), sample_rate)
            true_clip = AudioClip(np.asarray(h, dtype=float), sample_rate)
            rt_e, _ = rt60_with_fallback(est_clip)
            rt_t, _ = rt60_with_fallback(true_clip)
            d_e, _ = drr(est_clip)
            d_t, _ = drr(true_clip)
        except ValueError:
            excluded += 1
            continue
        rt_est.append(rt_e)
        rt_true.append(rt_t)
        drr_est.append(d_e)
        drr_true.append(d_t)
        ht = torch.as_tensor(h, dtype=torch.float64)
        he = torch.as_tensor(h_hat, dtype=torch.float64)
        sc = np.mean([float(spectral_convergence(ht, he, fl, hp))
                      for fl, hp in zip(loss_cfg.frame_lens, loss_cfg.hops)])
        mag = np.mean([float(log_stft_magnitude(ht, he, fl, hp, loss_cfg.mag_floor))
                       for fl, hp in zip(loss_cfg.frame_lens, loss_cfg.hops)])
        sc_vals.append(sc)
        mag_vals.append(mag)
        loss_vals.append(float(multi_res_stft_loss(ht, he, loss_cfg)))
        mae_vals.append(float(np.mean(np.abs(np.asarray(h_hat) - np.asarray(h)))))
    if not rt_est:
        raise MetricError("no analyzable RIR pairs")
    flags = [f"excluded-{excluded}"] if excluded else []
    return RirMetricReport(
        rt60=_error_stats(np.array(rt_est), np.array(rt_true)),
        drr=_error_stats(np.array(drr_est), np.array(drr_true)),
        stft_loss=float(np.mean(loss_vals)),
        sc_loss=float(np.mean(sc_vals)),
        mag_loss=float(np.mean(mag_vals)),
        mae_time=float(np.mean(mae_vals)),
        n_pairs=len(rt_est),
        n_excluded=excluded,
        flags=flags,
    )
