"""End-to-end CLI behavior: exit codes, artifacts, and JSON payloads."""

import json

import numpy as np
import pytest
import torch

from blindrir.audio import AudioClip, load_wav, save_wav
from blindrir.cli import main
from blindrir.data import (SynthCorpusSpec, build_synthetic_corpus,
                           pseudo_speech, split_by_room, write_manifest)
from blindrir.model import BlindRirModel, save_model

FS = 16000


def run(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out.strip().splitlines()
    return code, (json.loads(out[-1]) if out else None)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """Ten 0.4 s synthetic rooms with room-disjoint splits (6/2/2)."""
    root = tmp_path_factory.mktemp("corpus")
    entries = build_synthetic_corpus(
        root, SynthCorpusSpec(n_rooms=10, clips_per_room=1,
                              clip_duration_s=0.4), seed=0, mark_real=True)
    entries = split_by_room(entries, seed=0)
    manifest = root / "manifest.jsonl"
    write_manifest(entries, manifest)
    return manifest


@pytest.fixture
def micro_json(micro_cfg, tmp_path):
    path = tmp_path / "micro.json"
    micro_cfg.to_json(path)
    return str(path)


# ------------------------------------------------------------- exit codes


def test_no_command_exits_1(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().out.lower()


def test_unknown_command_exits_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_missing_required_arg_exits_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "clip.wav"])  # no --checkpoint / --out
    assert exc.value.code == 1


def test_missing_input_file_exits_2(capsys, tmp_path):
    code = main(["analyze-rir", str(tmp_path / "nope.wav")])
    assert code == 2
    assert "error:" in capsys.readouterr().err


# ------------------------------------------------------------ analyze-rir


def test_analyze_rir_payload_and_curves(capsys, tmp_path, rng):
    rt = 0.4
    t = np.arange(FS) / FS
    h = rng.normal(size=FS) * 10.0 ** (-3.0 * t / rt) * 0.1
    h[0] = 1.0
    wav = tmp_path / "room.wav"
    save_wav(wav, AudioClip(h, FS))

    code, payload = run(capsys, ["analyze-rir", str(wav),
                                 "--out", str(tmp_path / "curves")])
    assert code == 0
    assert payload["rt60_s"] == pytest.approx(rt, rel=0.1)
    assert -40.0 <= payload["drr_db"] <= 40.0
    assert payload["bp_samples"] >= 1
    assert payload["bp_ms"] == pytest.approx(payload["bp_samples"] / 16.0)
    ned = tmp_path / "curves" / "room_ned.csv"
    edc = tmp_path / "curves" / "room_edc.csv"
    assert ned.read_text().splitlines()[0] == "ned"
    assert edc.read_text().splitlines()[0] == "edc_db"


def test_analyze_rir_unmeasurable_decay(capsys, tmp_path):
    # 100 flat samples: the EDC bottoms at -20 dB, below even the relaxed
    # fallback fit range, so no RT60 can be reported
    save_wav(tmp_path / "flat.wav", AudioClip(np.ones(100), FS))
    code, payload = run(capsys, ["analyze-rir", str(tmp_path / "flat.wav"),
                                 "--out", str(tmp_path)])
    assert code == 0
    assert payload["rt60_s"] is None
    assert "rt60-unmeasurable" in payload["flags"]


# ----------------------------------------------------------- prepare-data


def test_prepare_data_synth(capsys, tmp_path):
    code, payload = run(capsys, ["prepare-data", "--out", str(tmp_path / "d"),
                                 "--synth", "6", "--duration", "0.3"])
    assert code == 0
    assert payload["entries"] == 6
    assert payload["train"] + payload["val"] + payload["test"] == 6
    assert payload["test"] >= 1
    assert (tmp_path / "d" / "manifest.jsonl").exists()


def test_prepare_data_without_sources_exits_2(capsys, tmp_path):
    assert main(["prepare-data", "--out", str(tmp_path)]) == 2
    assert "nothing to prepare" in capsys.readouterr().err


def test_prepare_data_half_dirs_exits_2(capsys, tmp_path):
    code = main(["prepare-data", "--out", str(tmp_path),
                 "--speech-dir", str(tmp_path)])
    assert code == 2
    assert "must be given together" in capsys.readouterr().err


# -------------------------------------------------------------- estimate


def test_estimate_writes_wav_and_sidecar(capsys, tmp_path, micro_cfg):
    ckpt = tmp_path / "model.pt"
    save_model(BlindRirModel(micro_cfg), ckpt)
    wav = tmp_path / "speech.wav"
    save_wav(wav, pseudo_speech(0.5, seed=3))

    out = tmp_path / "est"
    code, payload = run(capsys, ["estimate", str(wav), "--checkpoint",
                                 str(ckpt), "--out", str(out)])
    assert code == 0
    rir = load_wav(out / "rir_estimate.wav")
    assert len(rir) == 16000
    disk = json.loads((out / "rir_estimate.json").read_text())
    assert disk == payload
    assert isinstance(payload["bp_used"], int)
    assert payload["wav"] == str(out / "rir_estimate.wav")


def test_estimate_rejects_wrong_rate(capsys, tmp_path, micro_cfg):
    ckpt = tmp_path / "model.pt"
    save_model(BlindRirModel(micro_cfg), ckpt)
    wav = tmp_path / "cd.wav"
    save_wav(wav, AudioClip(np.zeros(1000), 44100))
    code = main(["estimate", str(wav), "--checkpoint", str(ckpt),
                 "--out", str(tmp_path)])
    assert code == 2
    assert "44100" in capsys.readouterr().err


# ------------------------------------------------------ training commands


def test_pretrain_then_train_blind(capsys, tmp_path, corpus, micro_json):
    ckpt = tmp_path / "brpe.pt"
    code, payload = run(capsys, [
        "pretrain-brpe", "--manifest", str(corpus), "--out", str(ckpt),
        "--config", micro_json, "--epochs", "1", "--batch-size", "8"])
    assert code == 0
    assert ckpt.exists()
    assert np.isfinite(payload["final_loss"])

    out = tmp_path / "run"
    code, payload = run(capsys, [
        "train", "--manifest", str(corpus), "--out", str(out),
        "--config", micro_json, "--brpe", str(ckpt), "--max-steps", "1"])
    assert code == 0
    assert (out / "model.pt").exists()
    assert (out / "history.csv").exists()
    assert np.isfinite(payload["final_train_loss"])


def test_finetune_brpe_cli(capsys, tmp_path, corpus, micro_json):
    ckpt = tmp_path / "brpe_ft.pt"
    code, payload = run(capsys, [
        "finetune-brpe", "--manifest", str(corpus), "--out", str(ckpt),
        "--config", micro_json, "--epochs", "1", "--batch-size", "8"])
    assert code == 0
    assert ckpt.exists()
    assert "rho_rt" in payload


def test_train_ablation_flags(capsys, tmp_path, corpus, micro_json):
    out = tmp_path / "gt"
    code, payload = run(capsys, [
        "train", "--manifest", str(corpus), "--out", str(out),
        "--config", micro_json, "--ground-truth-params",
        "--fusion", "naive", "--boundary", "fixed50ms", "--max-steps", "1"])
    assert code == 0
    assert (out / "model.pt").exists()


def test_train_without_estimator_exits_2(capsys, tmp_path, corpus, micro_json):
    code = main(["train", "--manifest", str(corpus), "--out", str(tmp_path),
                 "--config", micro_json, "--max-steps", "1"])
    assert code == 2
    assert "--brpe checkpoint required" in capsys.readouterr().err


# -------------------------------------------------------------- evaluate


def test_evaluate_reports(capsys, tmp_path, corpus, micro_cfg):
    ckpt = tmp_path / "model.pt"
    torch.manual_seed(0)
    save_model(BlindRirModel(micro_cfg), ckpt)
    out = tmp_path / "report"
    code, payload = run(capsys, [
        "evaluate", "--checkpoint", str(ckpt), "--manifest", str(corpus),
        "--out", str(out), "--max-pairs", "2", "--figures", "1"])
    assert code == 0
    assert payload["n_pairs"] >= 1
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["rir"]["rt60"] is not None
    assert "params" in metrics  # two test rooms -> parameter metrics present
    assert list((out / "pairs").glob("*.png"))
