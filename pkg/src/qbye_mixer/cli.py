"""Command-line entry point: ``qbye <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 profile/model
fingerprint mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .evaluation import load_eval_dataset, run_eval, write_report_json, write_roc_csv
from .frontend import FrontendConfig, WavError, apply_cmvn, compute_mfcc, load_wav
from .mixer import MixerConfig, count_macs, count_params
from .runtime import (FingerprintMismatchError, ProfileFormatError, detect, embed_utterance, enroll,
                      load_profile, save_profile)
from .synthetic import generate_dataset
from .training import ManifestError, TrainConfig, TrainingError, load_manifest, train, write_metrics

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_FINGERPRINT = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _read_json(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc


def cmd_gen_synthetic(args) -> int:
    if args.classes < 2:
        raise UsageError("--classes must be at least 2")
    manifest = generate_dataset(args.out_dir, args.classes, args.per_class, seed=args.seed,
                                noise_files=args.noise_files, eval_classes=args.eval_classes,
                                eval_per_class=args.eval_per_class, eval_negatives=args.eval_negatives)
    print(f"wrote {args.classes * args.per_class} clips, manifest {manifest}")
    return EXIT_OK


def cmd_featurize(args) -> int:
    fe = FrontendConfig.from_dict(_read_json(args.frontend_config)) if args.frontend_config else FrontendConfig()
    feat = compute_mfcc(load_wav(args.wav), fe)
    if not args.no_cmvn:
        feat = apply_cmvn(feat, fe.cmvn_eps)
    np.save(args.out, feat)
    print(f"features {feat.shape[0]}x{feat.shape[1]} -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    if not Path(args.manifest).is_file():
        raise UsageError(f"manifest not found: {args.manifest}")
    tc = _read_json(args.train_config)
    overrides = {"epochs": args.epochs, "seed": args.seed, "batch_size": args.batch_size,
                 "learning_rate": args.lr, "noise_dir": args.noise_dir, "noise_prob": args.noise_prob,
                 "threads": args.threads}
    tc.update({k: v for k, v in overrides.items() if v is not None})
    mc = _read_json(args.model_config)
    if args.n_blocks is not None:
        mc["n_blocks"] = args.n_blocks
    train_cfg, model_cfg = TrainConfig.from_dict(tc), MixerConfig.from_dict(mc)

    entries, labels = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def report(row):
        valid = "n/a" if row["valid_acc"] is None else f"{row['valid_acc']:.3f}"
        print(f"epoch {row['epoch']:3d}  loss {row['train_loss']:.4f}  "
              f"train_acc {row['train_acc']:.3f}  valid_acc {valid}")

    result = train(entries, labels, train_cfg, model_cfg, on_epoch=report)
    save_checkpoint(result.checkpoint, out / "model.qbem")
    write_metrics(result.metrics, out / "metrics.jsonl")
    print(f"checkpoint {out / 'model.qbem'} (step {result.checkpoint.step}, "
          f"fingerprint {result.checkpoint.fingerprint})")
    return EXIT_OK


def cmd_info(args) -> int:
    if args.checkpoint:
        cfg = load_checkpoint(args.checkpoint).mixer_config
    else:
        cfg = MixerConfig.from_dict(_read_json(args.config))
    params, macs = count_params(cfg), count_macs(cfg)
    full = count_params(cfg, include_decoder=True)
    print(f"params: {params} ({params / 1e6:.2f}M), macs: {macs} ({macs / 1e6:.2f}M)")
    print(f"params incl. decoder ({cfg.num_classes} classes): {full}")
    print("convention: params count encoder tensors only; macs count linear-layer "
          "multiply-accumulates for one window (LayerNorm, activation, pooling excluded)")
    return EXIT_OK


def cmd_embed(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    seq = embed_utterance(load_wav(args.wav), ckpt)
    np.save(args.out, seq.vectors)
    print(f"{len(seq)} windows at offsets {seq.window_offsets_ms} ms -> {args.out}")
    return EXIT_OK


def cmd_enroll(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    profile = enroll(args.keyword, [load_wav(p) for p in args.wavs], ckpt)
    save_profile(profile, args.out)
    print(f"enrolled {args.keyword!r} from {profile.n} clips -> {args.out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    profile = load_profile(args.profile)
    result = detect(profile, embed_utterance(load_wav(args.wav), ckpt), args.threshold, ckpt.fingerprint)
    verdict = "TRIGGERED" if result.triggered else "NO"
    print(f"{verdict} score={result.score:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not Path(args.dataset).is_file():
        raise UsageError(f"dataset not found: {args.dataset}")
    ckpt = load_checkpoint(args.checkpoint)
    report = run_eval(ckpt, load_eval_dataset(args.dataset), args.target_fa, args.threads)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_roc_csv(report, out / "roc.csv")
    write_report_json(report, out / "report.json")
    note = "" if report.target_reachable else " (target not reachable)"
    print(f"FRR {report.frr_at_target:.2f}% at {report.target_fa_per_hour} FA/hr{note}; "
          f"{report.n_pos} positives, {report.n_neg} negative pairs over {report.negative_hours:.4f} h")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qbye", description="Query-by-example keyword spotting with an MLP mixer.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic tone-word dataset")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--noise-files", type=int, default=4)
    p.add_argument("--eval-classes", type=int, default=0, help="held-out keywords for eval.jsonl")
    p.add_argument("--eval-per-class", type=int, default=10)
    p.add_argument("--eval-negatives", type=int, default=40)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("featurize", help="81x81 MFCC(+CMVN) matrix of a 1 s WAV as .npy")
    p.add_argument("wav")
    p.add_argument("--out", required=True)
    p.add_argument("--no-cmvn", action="store_true")
    p.add_argument("--frontend-config")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train encoder + decoder on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--train-config")
    p.add_argument("--model-config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--noise-dir")
    p.add_argument("--noise-prob", type=float)
    p.add_argument("--n-blocks", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("info", help="parameter and MAC counts")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--config", help="MixerConfig JSON (defaults to the 12-block reference model)")
    g.add_argument("--checkpoint")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("embed", help="sliding-window embeddings of a WAV as .npy")
    p.add_argument("wav")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("enroll", help="build a keyword profile from enrollment WAVs")
    p.add_argument("wavs", nargs="+")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--keyword", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("detect", help="score a query WAV against a profile")
    p.add_argument("wav")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="FRR at a target FA/hr over an eval JSONL")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--target-fa", type=float, default=0.3)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FingerprintMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FINGERPRINT
    except (CheckpointError, ProfileFormatError, WavError, ManifestError, TrainingError,
            ValueError, KeyError, OSError, NotImplementedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
