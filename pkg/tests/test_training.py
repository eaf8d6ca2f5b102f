"""Training loops: determinism, schedule plumbing, guards, artifacts."""

import csv

import numpy as np
import pytest
import torch

from blindrir.brpe import RoomParamEstimator
from blindrir.config import BrpeConfig
from blindrir.data import (
    RoomParams,
    build_synthetic_corpus,
    pseudo_speech,
    synth_rir,
    SynthCorpusSpec,
)
from blindrir.model import BlindRirModel
from blindrir.training import (
    TrainingError,
    TrainingExample,
    examples_from_entries,
    feature_blocks,
    finetune_brpe,
    predict_params,
    pretrain_brpe,
    train_rir_model,
)


def tiny_examples(n=2, duration=0.5, seed0=40):
    out = []
    for i in range(n):
        rir, params = synth_rir(0.3 + 0.1 * i, 500 + 100 * i, seed=seed0 + i)
        speech = pseudo_speech(duration, seed=seed0 + 20 + i)
        out.append(TrainingExample(speech.samples, rir.samples, params))
    return out


def tiny_model(micro_cfg, **train_kw):
    for k, v in train_kw.items():
        setattr(micro_cfg.train, k, v)
    torch.manual_seed(0)
    return BlindRirModel(micro_cfg)


# ------------------------------------------------------------ rir training


def test_lr_schedule_reaches_optimizer(micro_cfg, tmp_path):
    model = tiny_model(micro_cfg, lr_init=1e-3, lr_decay_factor=0.5,
                       lr_decay_every=2, batch_size=4)
    result = train_rir_model(model, tiny_examples(), tmp_path, epochs=4)
    lrs = [row["lr"] for row in result.history]
    assert lrs == [1e-3, 1e-3, 5e-4, 5e-4]


def test_training_is_deterministic(micro_cfg, tmp_path):
    losses = []
    for _ in range(2):
        model = tiny_model(micro_cfg, batch_size=4)
        result = train_rir_model(model, tiny_examples(), None, max_steps=3)
        losses.append(result.step_losses)
    assert losses[0] == losses[1]  # bitwise-identical trajectories


def test_max_steps_truncates(micro_cfg):
    model = tiny_model(micro_cfg, batch_size=1)
    result = train_rir_model(model, tiny_examples(), None, max_steps=3, epochs=10)
    assert len(result.step_losses) == 3


def test_frozen_estimator_untouched(micro_cfg):
    model = tiny_model(micro_cfg, batch_size=4)
    before = {k: v.clone() for k, v in model.brpe.state_dict().items()}
    train_rir_model(model, tiny_examples(), None, max_steps=2)
    after = model.brpe.state_dict()
    for k in before:
        assert torch.equal(before[k], after[k]), k


def test_non_finite_loss_aborts(micro_cfg):
    model = tiny_model(micro_cfg, batch_size=4)
    bad = tiny_examples()
    bad[0].rir = bad[0].rir.copy()
    bad[0].rir[100] = np.inf
    with pytest.raises(TrainingError, match="non-finite loss"):
        train_rir_model(model, bad, None, max_steps=1)


def test_artifacts_written(micro_cfg, tmp_path):
    model = tiny_model(micro_cfg, batch_size=4, checkpoint_every=1)
    result = train_rir_model(model, tiny_examples(),
                             tmp_path, val_examples=tiny_examples(seed0=60),
                             epochs=2)
    assert (tmp_path / "model.pt").exists()
    assert (tmp_path / "checkpoint_epoch1.pt").exists()
    assert (tmp_path / "checkpoint_epoch2.pt").exists()
    assert result.checkpoint_path == str(tmp_path / "model.pt")
    with open(tmp_path / "history.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 2
    assert set(rows[0]) == {"epoch", "train_loss", "val_loss", "lr"}
    assert np.isfinite(float(rows[0]["val_loss"]))


def test_empty_corpus_rejected(micro_cfg):
    with pytest.raises(TrainingError, match="corpus empty"):
        train_rir_model(tiny_model(micro_cfg), [], None)


def test_examples_from_entries_split_filter(tmp_path):
    entries = build_synthetic_corpus(
        tmp_path, SynthCorpusSpec(n_rooms=2, clips_per_room=1,
                                  clip_duration_s=0.4), seed=3)
    entries[0].split = "train"
    entries[1].split = "val"
    train = examples_from_entries(entries, "train")
    assert len(train) == 1
    assert train[0].rir.shape == (16000,)
    with pytest.raises(TrainingError, match="no examples"):
        examples_from_entries(entries, "test")


# ---------------------------------------------------------- estimator loops


def brpe_corpus(n=6, frames=32):
    torch.manual_seed(1)
    blocks = torch.randn(n, 32, frames)
    labels = torch.stack([
        torch.linspace(2.0, 3.0, n),
        torch.linspace(1.2, 2.0, n),
        torch.linspace(2.5, 3.2, n),
    ], dim=1)
    return blocks, labels


def test_pretrain_brpe_runs_and_saves(tmp_path):
    model = RoomParamEstimator(BrpeConfig(embed_dim=32, depth=1, state_dim=4,
                                          q_dim=16))
    blocks, _ = brpe_corpus()
    path = tmp_path / "brpe.pt"
    losses = pretrain_brpe(model, blocks, epochs=2, batch_size=3, seed=0,
                           out_path=path)
    assert len(losses) == 4  # 6 samples / batch 3 = 2 steps x 2 epochs
    assert all(np.isfinite(v) for v in losses)
    assert path.exists()


def test_finetune_brpe_history_and_early_stop():
    model = RoomParamEstimator(BrpeConfig(embed_dim=32, depth=1, state_dim=4,
                                          q_dim=16))
    blocks, labels = brpe_corpus()
    history = finetune_brpe(model, blocks, labels, epochs=3, batch_size=3,
                            seed=0, val_blocks=blocks, val_labels=labels,
                            target_rho=(-1.0, -1.0))
    # impossible-to-miss targets stop the loop after the first epoch
    assert len(history) == 1
    assert {"epoch", "train_loss", "rho_rt", "rho_bp"} <= set(history[0])


def test_finetune_label_shape_guard():
    model = RoomParamEstimator(BrpeConfig(embed_dim=32, depth=1, state_dim=4,
                                          q_dim=16))
    blocks, labels = brpe_corpus()
    with pytest.raises(TrainingError, match=r"\(n, 3\)"):
        finetune_brpe(model, blocks, labels[:, :2], epochs=1)


def test_predict_params_shape():
    model = RoomParamEstimator(BrpeConfig(embed_dim=32, depth=1, state_dim=4,
                                          q_dim=16))
    blocks, _ = brpe_corpus(n=5)
    out = predict_params(model, blocks, batch_size=2)
    assert out.shape == (5, 3)
    assert np.isfinite(out).all()


def test_feature_blocks_helper(micro_cfg):
    waves = np.stack([pseudo_speech(0.5, seed=i).samples for i in range(2)])
    blocks = feature_blocks(waves, micro_cfg)
    frames = (8000 - 512) // 256 + 1
    assert blocks.shape == (2, 192, -(-frames // 16) * 16)
    assert blocks.dtype == torch.float32
