"""Evaluation report export: JSON metrics, scatter CSVs, and figure pairs.

Figures are rendered headlessly (Agg backend) to PNG: a waveform overlay and
side-by-side log-magnitude spectrograms for each sampled (true, estimated)
RIR pair.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .audio import AudioClip  # noqa: E402
from .dsp import stft  # noqa: E402


def write_metrics_json(report: dict, out_dir: str | Path) -> Path:
    path = Path(out_dir) / "metrics.json"
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_scatter_csv(param: str, true: np.ndarray, est: np.ndarray,
                      out_dir: str | Path) -> Path:
    if len(true) != len(est):
        raise ValueError("scatter columns must have equal lengths")
    path = Path(out_dir) / f"scatter_{param}.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["true", "estimated"])
        for t, e in zip(true, est):
            writer.writerow([repr(float(t)), repr(float(e))])
    return path


def _log_spectrogram(x: np.ndarray, sample_rate: int) -> np.ndarray:
    spec = stft(AudioClip(x, sample_rate), 512, 256, "hann")
    return 20.0 * np.log10(np.maximum(spec.magnitude(), 1e-7))


def write_pair_figures(pair_id: str, h_true: np.ndarray, h_est: np.ndarray,
                       out_dir: str | Path, sample_rate: int = 16000
                       ) -> tuple[Path, Path]:
    pairs_dir = Path(out_dir) / "pairs"
    pairs_dir.mkdir(parents=True, exist_ok=True)
    t = np.arange(len(h_true)) / sample_rate

    wave_path = pairs_dir / f"{pair_id}_wave.png"
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(t, h_true, linewidth=0.6, label="true")
    ax.plot(t[: len(h_est)], h_est, linewidth=0.6, alpha=0.7, label="estimated")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("amplitude")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(wave_path, dpi=100)
    plt.close(fig)

    spec_path = pairs_dir / f"{pair_id}_spec.png"
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5), sharey=True)
    for ax, sig, title in ((axes[0], h_true, "true"),
                           (axes[1], h_est, "estimated")):
        img = _log_spectrogram(sig, sample_rate)
        ax.imshow(img, origin="lower", aspect="auto", cmap="magma",
                  extent=(0, len(sig) / sample_rate, 0, sample_rate / 2))
        ax.set_title(title)
        ax.set_xlabel("time [s]")
    axes[0].set_ylabel("frequency [Hz]")
    fig.tight_layout()
    fig.savefig(spec_path, dpi=100)
    plt.close(fig)
    return wave_path, spec_path


def export_report(report: dict, scatters: dict[str, tuple[np.ndarray, np.ndarray]],
                  pairs: list[tuple[str, np.ndarray, np.ndarray]],
                  out_dir: str | Path) -> dict[str, list[str]]:
    """Write metrics.json, one scatter CSV per parameter, and figure pairs.

    Returns the written paths grouped by kind.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {"json": [str(write_metrics_json(report, out))],
               "csv": [], "png": []}
    for param, (true, est) in scatters.items():
        written["csv"].append(str(write_scatter_csv(param, true, est, out)))
    for pair_id, h_true, h_est in pairs:
        wave, spec = write_pair_figures(pair_id, h_true, h_est, out)
        written["png"] += [str(wave), str(spec)]
    return written
