"""Blind room-impulse-response estimation from monaural reverberant speech.

Estimates room volume, RT60, and the early/late boundary point from
reverberant speech, then synthesizes a one-second RIR with a FiLM-conditioned
filtered-noise decoder. Ground-truth labeling, training, and evaluation
tooling are included; see the `blindrir` CLI for the end-to-end workflows.
"""

from .audio import AudioClip, AudioError, load_wav, save_wav
from .config import RunConfig, load_config

__all__ = ["AudioClip", "AudioError", "RunConfig", "load_config",
           "load_wav", "save_wav"]

__version__ = "0.1.0"
