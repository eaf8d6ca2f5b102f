"""Ground-truth acoustic analysis of room impulse responses.

Energy decay (Schroeder backward integration), RT60 from a line fit on the
decay curve, direct-to-reverberant ratio, normalized echo density, and the
early/late boundary point where the echo density first plateaus.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erfc

from .audio import AudioClip
from .config import BoundaryConfig

EDC_FLOOR_DB = -120.0
GAUSS_CONST = float(1.0 / erfc(1.0 / np.sqrt(2.0)))  # 3.1515...

DRR_CLAMP_DB = 40.0
DRR_PRE_MS = 0.5
DRR_POST_MS = 2.5


class AcousticsError(ValueError):
    pass


@dataclass
class DecayCurve:
    """Backward-integrated energy in dB re total; 0 dB at sample 0."""

    edc_db: np.ndarray
    fit_range: tuple[float, float] = (-5.0, -35.0)


@dataclass
class EchoDensityProfile:
    ned: np.ndarray
    half_window: int
    weights: np.ndarray
    gauss_const: float = GAUSS_CONST


@dataclass
class BoundaryPoint:
    bp_samples: int
    flags: list[str] = field(default_factory=list)


def energy_decay_curve(rir: AudioClip, floor_db: float = EDC_FLOOR_DB) -> DecayCurve:
    h = rir.samples
    energy = h * h
    total = energy.sum()
    if total == 0.0:
        raise AcousticsError("silent RIR")
    tail = np.cumsum(energy[::-1])[::-1]
    with np.errstate(divide="ignore"):
        edc = 10.0 * np.log10(tail / total)
    edc = np.maximum(edc, floor_db)
    edc[0] = 0.0
    return DecayCurve(edc_db=edc)


def rt60_schroeder(rir: AudioClip, fit_range: tuple[float, float] = (-5.0, -35.0)) -> float:
    """RT60 in seconds from a least-squares line fit on the decay curve.

    The fit covers the [upper, lower] dB stretch of the EDC and is
    extrapolated to -60 dB. Raises if the EDC never reaches the lower bound.
    """
    upper, lower = fit_range
    curve = energy_decay_curve(rir)
    edc = curve.edc_db
    sel = (edc <= upper) & (edc >= lower)
    if not np.any(edc <= lower) or sel.sum() < 2:
        raise AcousticsError(
            f"insufficient decay range: EDC never reaches {lower} dB"
        )
    t = np.flatnonzero(sel) / rir.sample_rate
    y = edc[sel]
    slope, _ = np.polyfit(t, y, 1)
    if slope >= 0.0:
        raise AcousticsError("non-decaying EDC in fit range")
    return float(60.0 / abs(slope))


def rt60_with_fallback(rir: AudioClip) -> tuple[float, list[str]]:
    """RT60 with the documented [-5, -25] dB fallback; flags record the retreat."""
    try:
        return rt60_schroeder(rir), []
    except AcousticsError:
        rt = rt60_schroeder(rir, fit_range=(-5.0, -25.0))
        return rt, ["rt60-fallback-25db"]


def drr(rir: AudioClip) -> tuple[float, list[str]]:
    """Direct-to-reverberant ratio in dB, clamped to [-40, +40].

    Direct energy is the window [peak - 0.5 ms, peak + 2.5 ms]; everything
    else counts as reverberant.
    """
    h = rir.samples
    if np.max(np.abs(h)) == 0.0:
        raise AcousticsError("silent RIR has no peak")
    peak = int(np.argmax(np.abs(h)))
    fs = rir.sample_rate
    lo = max(0, peak - int(round(DRR_PRE_MS * fs / 1000.0)))
    hi = min(len(h), peak + int(round(DRR_POST_MS * fs / 1000.0)) + 1)
    energy = h * h
    e_direct = energy[lo:hi].sum()
    e_reverb = energy.sum() - e_direct
    flags: list[str] = []
    if e_reverb <= 0.0:
        return DRR_CLAMP_DB, ["silent-tail"]
    value = 10.0 * np.log10(e_direct / e_reverb)
    if value > DRR_CLAMP_DB:
        value, flags = DRR_CLAMP_DB, ["drr-clamped"]
    elif value < -DRR_CLAMP_DB:
        value, flags = -DRR_CLAMP_DB, ["drr-clamped"]
    return float(value), flags


def ned_curve(rir: AudioClip, half_window: int = 320) -> EchoDensityProfile:
    """Normalized echo density per sample.

    For each sample, the fraction of the surrounding 2*delta+1 window
    (hann-weighted, weights summing to 1) whose magnitude exceeds the
    window's weighted RMS, scaled by 1/erfc(1/sqrt(2)) so a Gaussian
    diffuse field reads ~1. Edge windows are truncated and renormalized.
    """
    if half_window < 16:
        raise AcousticsError(f"half_window must be >= 16, got {half_window}")
    h = rir.samples
    n = len(h)
    full = 2 * half_window + 1
    weights = np.hanning(full)
    weights = weights / weights.sum()
    ned = np.empty(n)

    interior_n = n - 2 * half_window
    if interior_n > 0:
        windows = sliding_window_view(h, full)
        sigma = np.sqrt(np.sum(weights * windows * windows, axis=-1))
        exceed = np.abs(windows) > sigma[:, None]
        ned[half_window:half_window + interior_n] = GAUSS_CONST * np.sum(
            weights * exceed, axis=-1
        )
    for i in range(min(half_window, n)):
        ned[i] = _ned_at(h, i, half_window, weights)
    for i in range(max(n - half_window, half_window), n):
        ned[i] = _ned_at(h, i, half_window, weights)
    return EchoDensityProfile(ned=ned, half_window=half_window, weights=weights)


def _ned_at(h: np.ndarray, i: int, delta: int, weights: np.ndarray) -> float:
    """One NED sample with a truncated, renormalized edge window."""
    lo = max(0, i - delta)
    hi = min(len(h), i + delta + 1)
    seg = h[lo:hi]
    w = weights[lo - (i - delta): hi - (i - delta)]
    w = w / w.sum()
    sigma = np.sqrt(np.sum(w * seg * seg))
    return GAUSS_CONST * np.sum(w * (np.abs(seg) > sigma))


def boundary_point(rir: AudioClip, cfg: BoundaryConfig = BoundaryConfig()) -> BoundaryPoint:
    """First sample from which NED stays >= 1 - eps_plateau for hold_len samples.

    Falls back to cfg.cap with a "no-plateau" flag when the echo density
    never settles (e.g. an impulse train with no diffuse tail).
    """
    profile = ned_curve(rir, cfg.half_window)
    above = profile.ned >= 1.0 - cfg.eps_plateau
    hold = min(cfg.hold_len, len(above))
    if hold > 0 and len(above) >= hold:
        run = np.convolve(above.astype(np.int64), np.ones(hold, dtype=np.int64), "valid")
        starts = np.flatnonzero(run == hold)
        if len(starts):
            return BoundaryPoint(bp_samples=int(starts[0]))
    return BoundaryPoint(bp_samples=cfg.cap, flags=["no-plateau"])
