"""Run configuration: one nested, JSON-serializable config covering every stage.

Defaults are the full-size training recipe (the "full" preset); the
"desk" preset shrinks the networks so the whole pipeline trains in minutes
on a CPU. Parsing is strict: unknown keys and wrong types are rejected so a
typo in a config file fails loudly instead of silently using a default.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    """Raised when a config file violates the schema."""


@dataclass
class DspConfig:
    sample_rate: int = 16000
    frame_len: int = 512
    hop: int = 256
    window: str = "hann"
    erb_bands: int = 64
    f_min: float = 50.0
    f_max: float = 8000.0
    mag_floor: float = 1e-7
    pad_multiple: int = 16


@dataclass
class BoundaryConfig:
    half_window: int = 320          # NED window half-width (20 ms)
    eps_plateau: float = 0.1        # plateau means NED >= 1 - eps
    hold_len: int = 160             # samples the plateau must hold (10 ms)
    cap: int = 3200                 # fallback when no plateau (200 ms)


@dataclass
class EncoderConfig:
    num_blocks: int = 5
    layers_per_block: int = 4
    channel_schedule: tuple[int, ...] = (32, 64, 128, 256, 512)
    latent_channels: int = 128
    kernel_first: int = 15
    kernel_rest: int = 7

    @property
    def downsample_factor(self) -> int:
        return 2 ** self.num_blocks


@dataclass
class BrpeConfig:
    patch: int = 16
    embed_dim: int = 192
    depth: int = 8
    state_dim: int = 16
    conv_kernel: int = 4
    expand: int = 2
    max_patches: int = 1024
    q_dim: int = 192
    mask_ratio: float = 0.4
    contrastive_temperature: float = 0.07


@dataclass
class FusionConfig:
    method: str = "hybrid_cross_attention"   # or "naive"
    ground_truth_params: bool = False
    n_v: int = 64
    n_zeta: int = 64
    n_a: int = 128
    n_c: int = 256
    heads: int = 8

    @property
    def d_k(self) -> int:
        return self.n_a // self.heads

    @property
    def n_ff(self) -> int:
        return 4 * self.n_a


@dataclass
class DecoderConfig:
    rir_len: int = 16000
    seed_len: int = 125
    num_blocks: int = 7             # 125 * 2^7 == 16000
    base_channels: int = 256
    noise_dim: int = 128            # Z
    num_filters: int = 10           # G
    fir_order: int = 511            # Gamma
    noise_seed: int = 1234          # e(n) fixed per checkpoint
    boundary_mode: str = "dynamic"  # or "fixed50ms"
    fixed_bp: int = 800             # 50 ms at 16 kHz


@dataclass
class LossConfig:
    frame_lens: tuple[int, ...] = (32, 256, 1024, 4096)
    mag_floor: float = 1e-7

    @property
    def hops(self) -> tuple[int, ...]:
        return tuple(f // 2 for f in self.frame_lens)


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 16
    lr_init: float = 5.5e-5
    lr_decay_factor: float = 0.2    # retained fraction at each decay event
    lr_decay_every: int = 80
    grad_clip_norm: float = 5.0
    weight_decay: float = 1e-2
    mixed_precision: bool = False
    seed: int = 0
    checkpoint_every: int = 100

    def lr_at_epoch(self, epoch: int) -> float:
        decays = epoch // self.lr_decay_every
        return self.lr_init * self.lr_decay_factor ** decays


@dataclass
class EvalConfig:
    scatter_params: tuple[str, ...] = ("volume", "rt60", "bp")
    pair_plots: int = 3


@dataclass
class RunConfig:
    preset: str = "full"
    dsp: DspConfig = field(default_factory=DspConfig)
    boundary: BoundaryConfig = field(default_factory=BoundaryConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    brpe: BrpeConfig = field(default_factory=BrpeConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return _asdict(self)

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _fromdict(cls, data, "config")

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)


def desk_preset() -> RunConfig:
    """Small preset: same topology, half-width networks, shorter clips."""
    cfg = RunConfig(preset="desk")
    cfg.encoder.channel_schedule = (16, 32, 64, 128, 256)
    cfg.brpe.embed_dim = 96
    cfg.brpe.depth = 4
    cfg.brpe.q_dim = 96
    cfg.decoder.base_channels = 128
    return cfg


def full_preset() -> RunConfig:
    return RunConfig(preset="full")


PRESETS = {"full": full_preset, "desk": desk_preset}


def load_config(path: str | Path | None, preset: str | None = None) -> RunConfig:
    """Config file wins over preset; bare preset wins over defaults."""
    if path is not None:
        return RunConfig.from_json(path)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        return PRESETS[preset]()
    return RunConfig()


def _asdict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _asdict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return list(obj)
    return obj


def _fromdict(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        if dataclasses.is_dataclass(f.type) or (
            isinstance(f.type, str) and f.type.endswith("Config")
        ):
            sub = _SECTION_TYPES[name]
            kwargs[name] = _fromdict(sub, value, f"{where}.{name}")
        else:
            kwargs[name] = _coerce(name, value, f, where)
    return cls(**kwargs)


_SECTION_TYPES = {
    "dsp": DspConfig,
    "boundary": BoundaryConfig,
    "encoder": EncoderConfig,
    "brpe": BrpeConfig,
    "fusion": FusionConfig,
    "decoder": DecoderConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


def _coerce(name, value, f, where):
    default = f.default if f.default is not dataclasses.MISSING else None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}.{name}: expected bool, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}.{name}: expected int, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}.{name}: expected number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}.{name}: expected string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where}.{name}: expected list, got {value!r}")
        return tuple(value)
    return value
