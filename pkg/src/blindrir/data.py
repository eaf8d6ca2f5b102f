"""Corpus construction: synthetic RIRs, speech convolution, labels, splits.

A corpus is a JSON-lines manifest of (speech, RIR) pairs with measured
acoustic labels. Real RIR/speech directories are supported; a synthetic
generator stands in where no measured corpus is available. Splits are
room-disjoint and the test split only ever contains real rooms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .acoustics import boundary_point, rt60_schroeder
from .audio import AudioClip, PIPELINE_RATE, load_wav, save_wav
from .config import BoundaryConfig

RIR_LEN = 16000


class DataError(ValueError):
    pass


@dataclass
class RoomParams:
    volume_m3: float
    rt60_s: float
    bp_samples: int
    is_real_room: bool
    room_id: str

    def validate(self) -> "RoomParams":
        if not (self.volume_m3 > 0 and self.rt60_s > 0 and 0 < self.bp_samples <= RIR_LEN):
            raise DataError(f"invalid room params: {self}")
        return self


@dataclass
class LogParams:
    """Reversible log10 mapping; RT60 is rescaled by kappa before the log so
    its range is commensurate with log-volume."""

    log_v: float
    log_rt: float
    log_bp: float
    kappa: float = 100.0


@dataclass
class CorpusEntry:
    speech_path: str
    rir_path: str
    params: RoomParams
    split: str = ""

    def to_json(self) -> str:
        return json.dumps({
            "speech_path": self.speech_path,
            "rir_path": self.rir_path,
            "room_id": self.params.room_id,
            "volume_m3": self.params.volume_m3,
            "rt60_s": self.params.rt60_s,
            "bp_samples": self.params.bp_samples,
            "is_real_room": self.params.is_real_room,
            "split": self.split,
        })

    @classmethod
    def from_json(cls, line: str) -> "CorpusEntry":
        d = json.loads(line)
        return cls(
            speech_path=d["speech_path"],
            rir_path=d["rir_path"],
            params=RoomParams(
                volume_m3=d["volume_m3"],
                rt60_s=d["rt60_s"],
                bp_samples=d["bp_samples"],
                is_real_room=d["is_real_room"],
                room_id=d["room_id"],
            ).validate(),
            split=d.get("split", ""),
        )


def log_map(params: RoomParams, kappa: float = 100.0) -> LogParams:
    params.validate()
    return LogParams(
        log_v=math.log10(params.volume_m3),
        log_rt=math.log10(kappa * params.rt60_s),
        log_bp=math.log10(params.bp_samples),
        kappa=kappa,
    )


def log_unmap(lp: LogParams, is_real_room: bool = False, room_id: str = "") -> RoomParams:
    return RoomParams(
        volume_m3=10.0 ** lp.log_v,
        rt60_s=10.0 ** lp.log_rt / lp.kappa,
        bp_samples=int(round(10.0 ** lp.log_bp)),
        is_real_room=is_real_room,
        room_id=room_id,
    )


def convolve_speech(anechoic: AudioClip, rir: AudioClip) -> AudioClip:
    """Reverberant speech: FFT convolution truncated to the anechoic length."""
    if len(anechoic) == 0 or len(rir) == 0:
        raise DataError("empty input to convolution")
    if anechoic.sample_rate != PIPELINE_RATE or rir.sample_rate != PIPELINE_RATE:
        raise DataError("both signals must be at 16 kHz")
    out = fftconvolve(anechoic.samples, rir.samples)[: len(anechoic)]
    return AudioClip(out, PIPELINE_RATE)


def fix_length(rir: AudioClip, target: int = RIR_LEN) -> AudioClip:
    """Right-pad with zeros or right-crop to exactly target samples."""
    x = rir.samples
    if len(x) == target:
        return rir
    if len(x) > target:
        return AudioClip(x[:target], rir.sample_rate)
    return AudioClip(np.pad(x, (0, target - len(x))), rir.sample_rate)


@dataclass
class VolumePrior:
    """Loose log-linear tie between volume and RT60 for synthetic labels."""

    v_min: float = 10.0
    v_max: float = 1e4
    rt_ref: float = 0.5
    log_v_at_ref: float = 2.5
    slope: float = 1.2
    jitter: float = 0.2

    def sample(self, rt60: float, rng: np.random.Generator) -> float:
        log_v = (self.log_v_at_ref + self.slope * math.log10(rt60 / self.rt_ref)
                 + rng.uniform(-self.jitter, self.jitter))
        log_v = min(max(log_v, math.log10(self.v_min)), math.log10(self.v_max))
        return 10.0 ** log_v


def synth_rir(rt60_target: float, bp_target: int, n_reflections: int = 12,
              seed: int = 0, volume_prior: VolumePrior = VolumePrior(),
              boundary_cfg: BoundaryConfig = BoundaryConfig()) -> tuple[AudioClip, RoomParams]:
    """One-second synthetic RIR hitting a target RT60 and boundary point.

    Direct impulse at n=0, sparse random early reflections before the
    boundary, then a Gaussian tail with an exponential envelope. The decay
    exponent is recalibrated against the Schroeder measurement so the
    realized RT60 lands within 5% of the target; stored labels are the
    measured values, not the targets.
    """
    if not (0.05 <= rt60_target <= 2.0):
        raise DataError(f"rt60_target {rt60_target} outside desk-scale range [0.05, 2.0]")
    if not (0 < bp_target < RIR_LEN):
        raise DataError(f"bp_target {bp_target} outside (0, {RIR_LEN})")
    fs = PIPELINE_RATE
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(RIR_LEN)
    refl_pos = rng.integers(40, max(bp_target, 40) + 1, size=n_reflections)
    refl_amp = rng.uniform(0.15, 0.5, size=n_reflections) * np.exp(
        -3.0 * refl_pos / max(bp_target, 1)
    ) * rng.choice([-1.0, 1.0], size=n_reflections)
    n = np.arange(RIR_LEN)

    rt = rt60_target
    clip = None
    for _ in range(3):
        env = 10.0 ** (-3.0 * n / (fs * rt))
        tail = np.zeros(RIR_LEN)
        tail[bp_target:] = noise[bp_target:] * env[bp_target:] * 0.35
        h = tail.copy()
        h[0] += 1.0
        for pos, amp in zip(refl_pos, refl_amp):
            h[pos] += amp
        clip = AudioClip(h, fs)
        measured = rt60_schroeder(clip)
        if abs(measured - rt60_target) / rt60_target <= 0.02:
            break
        rt *= rt60_target / measured
    rt60_label = rt60_schroeder(clip)
    bp_label = boundary_point(clip, boundary_cfg).bp_samples
    params = RoomParams(
        volume_m3=volume_prior.sample(rt60_label, rng),
        rt60_s=rt60_label,
        bp_samples=bp_label,
        is_real_room=False,
        room_id=f"synth-{seed}",
    ).validate()
    return clip, params


def split_by_room(entries: list[CorpusEntry], ratios: tuple[int, int, int] = (6, 2, 2),
                  seed: int = 0) -> list[CorpusEntry]:
    """Room-disjoint train/val/test assignment; test rooms are always real."""
    rooms: dict[str, bool] = {}
    for e in entries:
        rooms.setdefault(e.params.room_id, e.params.is_real_room)
        if rooms[e.params.room_id] != e.params.is_real_room:
            raise DataError(f"room {e.params.room_id} is both real and synthetic")
    real = sorted(r for r, is_real in rooms.items() if is_real)
    synth = sorted(r for r, is_real in rooms.items() if not is_real)
    if len(real) < 5:
        raise DataError("cannot form real-room test split: fewer than 5 real rooms")
    rng = np.random.default_rng(seed)
    total = sum(ratios)
    n_rooms = len(rooms)
    n_test = max(1, round(n_rooms * ratios[2] / total))
    n_val = max(1, round(n_rooms * ratios[1] / total))

    real_shuffled = list(rng.permutation(real))
    test_rooms = set(real_shuffled[:n_test])
    rest = real_shuffled[n_test:] + synth
    rest = list(rng.permutation(rest))
    val_rooms = set(rest[:n_val])

    def assign(room: str) -> str:
        if room in test_rooms:
            return "test"
        if room in val_rooms:
            return "val"
        return "train"

    return [replace(e, split=assign(e.params.room_id)) for e in entries]


def write_manifest(entries: list[CorpusEntry], path: str | Path) -> None:
    with open(path, "w") as f:
        for e in entries:
            f.write(e.to_json() + "\n")


def read_manifest(path: str | Path) -> list[CorpusEntry]:
    entries = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                entries.append(CorpusEntry.from_json(line))
    return entries


def pseudo_speech(duration_s: float, seed: int, fs: int = PIPELINE_RATE) -> AudioClip:
    """Burst-train stand-in for anechoic speech: AM noise syllables with pauses.

    The silent gaps expose the reverberant tail, which is what makes blind
    decay estimation learnable from the convolved signal.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * fs))
    x = np.zeros(n)
    pos = 0
    while pos < n:
        burst = int(rng.uniform(0.06, 0.25) * fs)
        gap = int(rng.uniform(0.05, 0.2) * fs)
        end = min(pos + burst, n)
        seg = rng.standard_normal(end - pos)
        # crude vocal-tract coloring: two-pole lowpass plus AM envelope
        b = rng.uniform(0.15, 0.5)
        for i in range(1, len(seg)):
            seg[i] += (2 - 2 * b) * seg[i - 1] * 0.5
        t = np.arange(end - pos) / fs
        seg *= 0.5 - 0.5 * np.cos(2 * np.pi * np.clip(t / 0.03, 0, 1) * 0.5)
        x[pos:end] = seg * rng.uniform(0.3, 1.0)
        pos = end + gap
    peak = np.max(np.abs(x))
    if peak > 0:
        x /= peak * 1.25
    return AudioClip(x, fs)


@dataclass
class SynthCorpusSpec:
    """Knobs for the synthetic corpus generator."""

    n_rooms: int = 40
    clips_per_room: int = 1
    clip_duration_s: float = 2.0
    rt60_range: tuple[float, float] = (0.15, 1.2)
    bp_jitter: tuple[float, float] = (0.85, 1.18)
    volume_prior: VolumePrior = field(default_factory=VolumePrior)


def build_synthetic_corpus(out_dir: str | Path, spec: SynthCorpusSpec, seed: int = 0,
                           mark_real: bool = False) -> list[CorpusEntry]:
    """Generate RIRs + pseudo-speech, convolve, label, and write WAVs.

    mark_real tags the generated rooms as "real" so desk-scale corpora can
    form a test split without measured data.
    """
    out = Path(out_dir)
    (out / "rir").mkdir(parents=True, exist_ok=True)
    (out / "speech").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    lo, hi = spec.rt60_range
    for i in range(spec.n_rooms):
        rt = 10.0 ** rng.uniform(math.log10(lo), math.log10(hi))
        v_est = spec.volume_prior.sample(rt, rng)
        bp_ms = math.sqrt(v_est) * rng.uniform(*spec.bp_jitter)
        bp = int(np.clip(round(bp_ms * PIPELINE_RATE / 1000.0), 160, 3200))
        rir, params = synth_rir(rt, bp, seed=seed * 100003 + i,
                                volume_prior=spec.volume_prior)
        if mark_real:
            params = replace(params, is_real_room=True, room_id=f"room-{seed}-{i}")
        rir_path = out / "rir" / f"{params.room_id}.wav"
        save_wav(rir_path, rir)
        for c in range(spec.clips_per_room):
            speech = pseudo_speech(spec.clip_duration_s, seed=seed * 100003 + i * 31 + c)
            reverberant = convolve_speech(speech, rir)
            sp_path = out / "speech" / f"{params.room_id}_c{c}.wav"
            save_wav(sp_path, reverberant)
            entries.append(CorpusEntry(str(sp_path), str(rir_path), params))
    return entries


def load_corpus_dirs(speech_dir: str | Path, rir_dir: str | Path) -> list[CorpusEntry]:
    """Pair user-supplied WAV corpora by room.

    The RIR directory holds one <room_id>.wav per room; each speech WAV is
    anechoic and gets convolved with every RIR. Rooms loaded this way are
    treated as real.
    """
    rir_paths = sorted(Path(rir_dir).glob("*.wav"))
    speech_paths = sorted(Path(speech_dir).glob("*.wav"))
    if not rir_paths or not speech_paths:
        raise DataError("no WAV files found in the supplied directories")
    entries = []
    for rp in rir_paths:
        rir = fix_length(load_wav(rp))
        rt60, _ = _measured_rt60(rir)
        bp = boundary_point(rir).bp_samples
        params = RoomParams(
            volume_m3=_volume_placeholder(rt60),
            rt60_s=rt60,
            bp_samples=bp,
            is_real_room=True,
            room_id=rp.stem,
        ).validate()
        for sp in speech_paths:
            entries.append(CorpusEntry(str(sp), str(rp), params))
    return entries


def _measured_rt60(rir: AudioClip) -> tuple[float, list[str]]:
    from .acoustics import rt60_with_fallback

    return rt60_with_fallback(rir)


def _volume_placeholder(rt60: float) -> float:
    # user corpora carry no volume metadata; Sabine-flavored stand-in
    return float(np.clip(10.0 ** (2.5 + 1.2 * math.log10(rt60 / 0.5)), 10.0, 1e4))
