"""Command-line entry point.

Subcommands cover the whole workflow: corpus preparation, estimator
pretraining and fine-tuning, end-to-end training, single-clip estimation,
RIR analysis, and evaluation with report export. Exit codes: 0 success,
1 usage error, 2 data/config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import acoustics, training
from .audio import AudioError, load_wav, save_wav
from .brpe import BrpeError, RoomParamEstimator, load_checkpoint
from .config import ConfigError, load_config
from .data import (DataError, SynthCorpusSpec, build_synthetic_corpus,
                   load_corpus_dirs, fix_length, log_map, read_manifest,
                   split_by_room, write_manifest)
from .metrics import linear_scale_metrics, log_scale_metrics, rir_acoustic_metrics
from .model import (BlindRirModel, estimate_from_clip, load_model)
from .report import export_report


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--preset", choices=["full", "desk"], default="full",
                       help="hyperparameter preset (default: full)")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> _Parser:
    parser = _Parser(prog="blindrir",
                     description="Blind room-impulse-response estimation "
                                 "from reverberant speech.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("prepare-data", help="build a corpus and manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--speech-dir", help="directory of anechoic speech WAVs")
    p.add_argument("--rir-dir", help="directory of measured RIR WAVs")
    p.add_argument("--synth", type=int, default=0,
                   help="number of synthetic rooms to generate")
    p.add_argument("--clips-per-room", type=int, default=1)
    p.add_argument("--duration", type=float, default=2.0,
                   help="pseudo-speech clip length in seconds")
    _add_common(p, config=False)
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("pretrain-brpe",
                       help="masked-patch self-supervised pretraining")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    _add_common(p)
    p.set_defaults(func=cmd_pretrain_brpe)

    p = sub.add_parser("finetune-brpe",
                       help="supervised room-parameter fine-tuning")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--init", help="pretraining checkpoint to start from")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    _add_common(p)
    p.set_defaults(func=cmd_finetune_brpe)

    p = sub.add_parser("train", help="train the end-to-end RIR model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--brpe", help="frozen estimator checkpoint")
    p.add_argument("--fusion", choices=["hybrid", "naive"], default=None)
    p.add_argument("--boundary", choices=["dynamic", "fixed50ms"], default=None)
    p.add_argument("--ground-truth-params", action="store_true",
                   help="inject true log-parameters instead of estimates")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("estimate", help="estimate an RIR from one clip")
    p.add_argument("speech", help="reverberant speech WAV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resample", action="store_true",
                   help="resample non-16 kHz input instead of failing")
    _add_common(p, config=False)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("analyze-rir", help="acoustic analysis of an RIR WAV")
    p.add_argument("rir", help="RIR WAV file")
    p.add_argument("--out", default=".", help="directory for curve CSVs")
    p.add_argument("--resample", action="store_true")
    p.set_defaults(func=cmd_analyze_rir)

    p = sub.add_parser("evaluate", help="run the test split and export reports")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-pairs", type=int, default=None,
                   help="cap the number of evaluated pairs")
    p.add_argument("--figures", type=int, default=3,
                   help="number of waveform/spectrogram pairs to render")
    _add_common(p, config=False)
    p.set_defaults(func=cmd_evaluate)

    return parser


def cmd_prepare_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    if args.speech_dir or args.rir_dir:
        if not (args.speech_dir and args.rir_dir):
            raise DataError("--speech-dir and --rir-dir must be given together")
        entries += load_corpus_dirs(args.speech_dir, args.rir_dir)
    synth_are_real = not entries
    if args.synth > 0:
        spec = SynthCorpusSpec(n_rooms=args.synth,
                               clips_per_room=args.clips_per_room,
                               clip_duration_s=args.duration)
        # with no measured rooms, generated rooms count as "real" so a test
        # split can exist at all
        entries += build_synthetic_corpus(out, spec, seed=args.seed,
                                          mark_real=synth_are_real)
    if not entries:
        raise DataError("nothing to prepare: give --synth and/or corpus dirs")
    entries = split_by_room(entries, seed=args.seed)
    manifest = out / "manifest.jsonl"
    write_manifest(entries, manifest)
    counts = {s: sum(1 for e in entries if e.split == s)
              for s in ("train", "val", "test")}
    print(json.dumps({"manifest": str(manifest), "entries": len(entries),
                      **counts}))
    return 0


def _blocks_and_labels(manifest: str, cfg, split: str):
    entries = [e for e in read_manifest(manifest) if e.split == split]
    if not entries:
        raise DataError(f"manifest has no {split!r} entries")
    examples = training.examples_from_entries(entries)
    waves = training._pad_speech(examples)
    blocks = training.feature_blocks(waves, cfg)
    labels = torch.tensor(
        [[log_map(e.params).log_v, log_map(e.params).log_rt,
          log_map(e.params).log_bp] for e in examples], dtype=torch.float32)
    return blocks, labels


def cmd_pretrain_brpe(args) -> int:
    cfg = load_config(args.config, args.preset)
    blocks, _ = _blocks_and_labels(args.manifest, cfg, "train")
    torch.manual_seed(args.seed)
    model = RoomParamEstimator(cfg.brpe)
    losses = training.pretrain_brpe(model, blocks, epochs=args.epochs,
                                    batch_size=args.batch_size, lr=args.lr,
                                    seed=args.seed, out_path=args.out)
    print(json.dumps({"checkpoint": args.out, "steps": len(losses),
                      "final_loss": losses[-1]}))
    return 0


def cmd_finetune_brpe(args) -> int:
    cfg = load_config(args.config, args.preset)
    blocks, labels = _blocks_and_labels(args.manifest, cfg, "train")
    val_blocks, val_labels = _blocks_and_labels(args.manifest, cfg, "val")
    torch.manual_seed(args.seed)
    if args.init:
        model = load_checkpoint(args.init)
    else:
        model = RoomParamEstimator(cfg.brpe)
    history = training.finetune_brpe(
        model, blocks, labels, epochs=args.epochs, batch_size=args.batch_size,
        lr=args.lr, seed=args.seed, val_blocks=val_blocks,
        val_labels=val_labels, out_path=args.out)
    print(json.dumps({"checkpoint": args.out, **history[-1]}))
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.preset)
    cfg.train.seed = args.seed
    if args.fusion:
        cfg.fusion.method = {"hybrid": "hybrid_cross_attention",
                             "naive": "naive"}[args.fusion]
    if args.boundary:
        cfg.decoder.boundary_mode = args.boundary
    if args.ground_truth_params:
        cfg.fusion.ground_truth_params = True
    if not args.brpe and not cfg.fusion.ground_truth_params:
        raise DataError("--brpe checkpoint required unless "
                        "--ground-truth-params is enabled")
    brpe_loaded = load_checkpoint(args.brpe) if args.brpe else None
    if brpe_loaded is not None:
        cfg.brpe = brpe_loaded.cfg
    torch.manual_seed(args.seed)
    model = BlindRirModel(cfg)
    if brpe_loaded is not None:
        model.brpe.load_state_dict(brpe_loaded.state_dict())
    entries = read_manifest(args.manifest)
    train_ex = training.examples_from_entries(entries, "train")
    try:
        val_ex = training.examples_from_entries(entries, "val")
    except training.TrainingError:
        val_ex = []
    result = training.train_rir_model(
        model, train_ex, args.out, val_examples=val_ex,
        max_steps=args.max_steps, epochs=args.epochs)
    print(json.dumps({"checkpoint": result.checkpoint_path,
                      "epochs": len(result.history),
                      "final_train_loss": result.history[-1]["train_loss"]}))
    return 0


def cmd_estimate(args) -> int:
    model = load_model(args.checkpoint)
    clip = load_wav(args.speech, resample=args.resample)
    result = estimate_from_clip(model, clip, noise_seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wav_path = out / "rir_estimate.wav"
    json_path = out / "rir_estimate.json"
    save_wav(wav_path, result.rir)
    sidecar = dict(result.sidecar)
    sidecar["wav"] = str(wav_path)
    with open(json_path, "w") as f:
        json.dump(sidecar, f, indent=2)
        f.write("\n")
    print(json.dumps(sidecar))
    return 0


def cmd_analyze_rir(args) -> int:
    clip = load_wav(args.rir, resample=args.resample)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    flags: list[str] = []
    try:
        rt60, rt_flags = acoustics.rt60_with_fallback(clip)
        flags += rt_flags
    except ValueError:
        rt60 = None
        flags.append("rt60-unmeasurable")
    drr_db, drr_flags = acoustics.drr(clip)
    flags += drr_flags
    bp = acoustics.boundary_point(clip)
    flags += bp.flags
    profile = acoustics.ned_curve(clip)
    edc = acoustics.energy_decay_curve(clip)
    stem = Path(args.rir).stem
    ned_path = out / f"{stem}_ned.csv"
    edc_path = out / f"{stem}_edc.csv"
    np.savetxt(ned_path, profile.ned, delimiter=",", header="ned", comments="")
    np.savetxt(edc_path, edc.edc_db, delimiter=",", header="edc_db", comments="")
    payload = {
        "rt60_s": rt60,
        "drr_db": float(drr_db),
        "bp_samples": int(bp.bp_samples),
        "bp_ms": bp.bp_samples / clip.sample_rate * 1000.0,
        "ned_curve_path": str(ned_path),
        "edc_path": str(edc_path),
        "flags": flags,
    }
    print(json.dumps(payload))
    return 0


def cmd_evaluate(args) -> int:
    model = load_model(args.checkpoint)
    entries = [e for e in read_manifest(args.manifest) if e.split == "test"]
    if not entries:
        raise DataError("manifest has no test entries")
    if args.max_pairs:
        entries = entries[: args.max_pairs]
    h_true, h_est, pair_ids = [], [], []
    true_params, est_params = [], []
    for i, entry in enumerate(entries):
        clip = load_wav(entry.speech_path)
        lp = log_map(entry.params)
        gt = torch.tensor([lp.log_v, lp.log_rt], dtype=torch.float32)
        result = estimate_from_clip(model, clip, noise_seed=args.seed + i,
                                    gt_logs=gt)
        rir = fix_length(load_wav(entry.rir_path))
        h_true.append(rir.samples)
        h_est.append(result.rir.samples)
        pair_ids.append(f"{entry.params.room_id}_{i}")
        true_params.append((entry.params.volume_m3, entry.params.rt60_s,
                            entry.params.bp_samples))
        if "log_v_hat" in result.sidecar:
            est_params.append((10.0 ** result.sidecar["log_v_hat"],
                               10.0 ** result.sidecar["log_rt_hat"] / lp.kappa,
                               10.0 ** result.sidecar["log_bp_hat"]))

    report: dict = {"n_pairs": len(entries)}
    scatters: dict = {}
    if len(est_params) == len(entries) and len(entries) >= 2:
        tv, tr, tb = (np.array(x) for x in zip(*true_params))
        ev, er, eb = (np.array(x) for x in zip(*est_params))
        report["params"] = {
            "volume": {**log_scale_metrics(ev, tv),
                       "linear_m3": linear_scale_metrics(ev, tv)},
            "rt60": {**log_scale_metrics(er, tr),
                     "linear_s": linear_scale_metrics(er, tr)},
            "bp": {**log_scale_metrics(eb, tb),
                   "linear_ms": linear_scale_metrics(eb / 16.0, tb / 16.0)},
        }
        scatters = {"volume": (tv, ev), "rt60": (tr, er), "bp": (tb, eb)}
    rir_report = rir_acoustic_metrics(h_est, h_true)
    report["rir"] = rir_report.to_dict()
    pairs = [(pair_ids[i], h_true[i], h_est[i])
             for i in range(min(args.figures, len(entries)))]
    written = export_report(report, scatters, pairs, args.out)
    print(json.dumps({"out": args.out,
                      "metrics_json": written["json"][0],
                      "stft_loss": rir_report.stft_loss,
                      "n_pairs": rir_report.n_pairs,
                      "n_excluded": rir_report.n_excluded}))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is None:
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except (ConfigError, DataError, AudioError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BrpeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 — CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
