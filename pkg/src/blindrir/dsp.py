"""Deterministic signal-processing primitives: STFT, ERB filterbank, feature blocks.

The feature block stacks three channels along the frequency axis —
ERB-aggregated log magnitude, ERB-aggregated phase, and the wrapped
frame-to-frame phase derivative — then zero-pads both axes to multiples of
16 so the block tiles cleanly into square patches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioClip
from .config import DspConfig


class DspError(ValueError):
    pass


@dataclass
class Spectrogram:
    """Complex STFT, (bins x frames), no centering: frame i covers samples [i*hop, i*hop+frame_len)."""

    values: np.ndarray
    frame_len: int
    hop: int
    window: str

    @property
    def bins(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    def phase(self) -> np.ndarray:
        return np.angle(self.values)


@dataclass
class FeatureBlock2D:
    """Real (feature_bins x frames) block; feature_bins == 3 * erb_bands before padding."""

    values: np.ndarray
    erb_bands: int
    channels_stacked: tuple[str, ...] = ("log_magnitude", "phase", "phase_derivative")

    @property
    def feature_bins(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]


_WINDOWS = {
    "hann": np.hanning,
    "rectangular": np.ones,
}


def stft(clip: AudioClip, frame_len: int = 512, hop: int | None = None,
         window: str = "hann") -> Spectrogram:
    """Short-time Fourier transform without centering or padding."""
    if frame_len < 32 or frame_len & (frame_len - 1):
        raise DspError(f"frame_len must be a power of two >= 32, got {frame_len}")
    if hop is None:
        hop = frame_len // 2
    if window not in _WINDOWS:
        raise DspError(f"unknown window {window!r}; choose from {sorted(_WINDOWS)}")
    x = clip.samples
    if len(x) < frame_len:
        raise DspError(f"signal too short: {len(x)} samples < one frame ({frame_len})")
    n_frames = (len(x) - frame_len) // hop + 1
    win = _WINDOWS[window](frame_len)
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * win
    values = np.fft.rfft(frames, axis=1).T
    return Spectrogram(values=values, frame_len=frame_len, hop=hop, window=window)


def erb_scale(f_hz):
    """Glasberg-Moore ERB-number of a frequency in Hz."""
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f_hz, dtype=np.float64))


def erb_scale_inv(erb):
    return (10.0 ** (np.asarray(erb, dtype=np.float64) / 21.4) - 1.0) / 0.00437


def erb_bandwidth(f_hz):
    """Equivalent rectangular bandwidth (Hz) at a center frequency."""
    return 24.7 * (1.0 + 4.37 * np.asarray(f_hz, dtype=np.float64) / 1000.0)


def erb_center_frequencies(erb_bands: int, f_min: float, f_max: float) -> np.ndarray:
    """Centers uniformly spaced on the ERB scale, endpoints at f_min and f_max."""
    return erb_scale_inv(np.linspace(erb_scale(f_min), erb_scale(f_max), erb_bands))


def gammatone_erb_filterbank(erb_bands: int, f_min: float, f_max: float,
                             fft_bins: int, sample_rate: int = 16000,
                             normalize: bool = True) -> np.ndarray:
    """Gammatone-shaped aggregation weights, shape (erb_bands, fft_bins).

    Fourth-order gammatone magnitude response sampled on the FFT bin grid,
    truncated beyond 4 bandwidths from each center so filters stay local.
    With normalize=True each row sums to 1.
    """
    if erb_bands < 2:
        raise DspError(f"erb_bands must be >= 2, got {erb_bands}")
    if not (0 <= f_min < f_max <= sample_rate / 2):
        raise DspError(f"need 0 <= f_min < f_max <= Nyquist, got [{f_min}, {f_max}]")
    centers = erb_center_frequencies(erb_bands, f_min, f_max)
    nfft = 2 * (fft_bins - 1)
    freqs = np.arange(fft_bins) * sample_rate / nfft
    bw = erb_bandwidth(centers)
    # 1.019 converts ERB to the gammatone 3-dB bandwidth parameter
    dist = (freqs[None, :] - centers[:, None]) / (1.019 * bw[:, None])
    weights = (1.0 + dist ** 2) ** -2.0
    weights[np.abs(freqs[None, :] - centers[:, None]) > 4.0 * bw[:, None]] = 0.0
    row_sums = weights.sum(axis=1)
    if np.any(row_sums == 0.0):
        bad = int(np.flatnonzero(row_sums == 0.0)[0])
        raise DspError(
            f"band resolution too fine for FFT grid: band {bad} "
            f"(center {centers[bad]:.1f} Hz) captures no FFT bin"
        )
    if normalize:
        weights = weights / row_sums[:, None]
    return weights


def wrapped_phase_diff(phase: np.ndarray) -> np.ndarray:
    """Frame-to-frame phase difference wrapped into (-pi, pi]; first frame 0."""
    diff = np.zeros_like(phase)
    raw = phase[:, 1:] - phase[:, :-1]
    diff[:, 1:] = np.pi - np.mod(np.pi - raw, 2.0 * np.pi)
    return diff


def _pad_to_multiple(a: np.ndarray, multiple: int) -> np.ndarray:
    pad0 = (-a.shape[0]) % multiple
    pad1 = (-a.shape[1]) % multiple
    return np.pad(a, ((0, pad0), (0, pad1)))


def extract_feature_block(clip: AudioClip, cfg: DspConfig) -> FeatureBlock2D:
    """Build the 3-channel spectro-temporal block fed to the room estimator."""
    spec = stft(clip, cfg.frame_len, cfg.hop, cfg.window)
    weights = gammatone_erb_filterbank(
        cfg.erb_bands, cfg.f_min, cfg.f_max, spec.bins, cfg.sample_rate
    )
    mag = weights @ spec.magnitude()
    log_mag = np.log(np.maximum(mag, cfg.mag_floor))
    phase = spec.phase()
    erb_phase = weights @ phase
    erb_phase_diff = weights @ wrapped_phase_diff(phase)
    block = np.concatenate([log_mag, erb_phase, erb_phase_diff], axis=0)
    block = _pad_to_multiple(block, cfg.pad_multiple)
    return FeatureBlock2D(values=block, erb_bands=cfg.erb_bands)
