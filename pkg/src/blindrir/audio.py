"""Mono waveform container and WAV file I/O.

Every pipeline entry point works at 16 kHz. Files at other rates are
rejected unless the caller explicitly opts into resampling, so a mislabeled
corpus cannot silently skew the acoustic labels.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

PIPELINE_RATE = 16000


class AudioError(ValueError):
    """Raised for unusable audio input (wrong rate, NaN samples, empty)."""


@dataclass
class AudioClip:
    """Mono waveform with its sample rate."""

    samples: np.ndarray
    sample_rate: int = PIPELINE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError(f"expected mono 1-D samples, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("samples contain NaN or Inf")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def load_wav(path: str | Path, resample: bool = False) -> AudioClip:
    """Read a mono PCM-16 or float WAV; stereo is downmixed to mono.

    Non-16 kHz files raise unless resample=True.
    """
    rate, data = wavfile.read(str(path))
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        data = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported WAV sample format {data.dtype}")
    if rate != PIPELINE_RATE:
        if not resample:
            raise AudioError(
                f"{path}: sample rate {rate} != {PIPELINE_RATE}; pass --resample to convert"
            )
        data = resample_poly(data, PIPELINE_RATE, rate)
        rate = PIPELINE_RATE
    return AudioClip(data, rate)


def save_wav(path: str | Path, clip: AudioClip) -> None:
    """Write 32-bit float WAV."""
    wavfile.write(str(path), clip.sample_rate, clip.samples.astype(np.float32))
