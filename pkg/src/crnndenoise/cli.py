"""Command-line interface.

Four subcommands cover the pipeline end to end:

    synth    synthesize a corpus (WAV pairs + manifest + overview figure)
    train    run the training schedule (checkpoints + CSV log + curves)
    eval     score a checkpoint on one split (CSV + JSON + figures)
    enhance  denoise a single WAV file with a trained checkpoint

Settings come from a preset (``--preset desk`` or ``--preset paper``),
optionally overridden by a ``--config`` file and then by individual
flags. Each directory-producing command writes a ``run.json`` manifest
recording the command line, the resolved config snapshot, and the
artifacts produced.

Exit codes: 0 success, 2 configuration error (also argparse usage
errors), 3 I/O error, 4 numeric failure, 5 checkpoint error. The
``CRNNDENOISE_LOG`` environment variable sets the log level (debug,
info, warning, error; default info).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__, config as cfgmod
from .checkpoint import apply_params, load_checkpoint
from .corpus import build_corpus, load_corpus_meta, load_manifest
from .dsp import FeatureSequence, Waveform, features_of, read_wav, reconstruct, write_wav
from .errors import CheckpointError, ConfigError, NumericsError
from .metrics import evaluate, write_report
from .model import crnn_forward, init_model_params, named_parameters
from .plots import (
    save_corpus_overview,
    save_metric_histograms,
    save_spectrogram_example,
    save_training_curves,
)
from .training import train

__all__ = ["main", "entrypoint", "build_parser"]

log = logging.getLogger("crnndenoise.cli")


def _setup_logging() -> None:
    level_name = os.environ.get("CRNNDENOISE_LOG", "info").strip().lower()
    levels = {"debug": logging.DEBUG, "info": logging.INFO, "warning": logging.WARNING, "error": logging.ERROR}
    if level_name not in levels:
        raise ConfigError(
            f"CRNNDENOISE_LOG must be one of {', '.join(levels)}; got {level_name!r}"
        )
    logging.basicConfig(
        level=levels[level_name], format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crnndenoise",
        description="Speech denoiser with a word-decoder head: corpus synthesis, training, evaluation, enhancement.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--preset", choices=cfgmod.PRESETS, default="desk", help="built-in settings bundle")
        p.add_argument("--config", help="config file overriding preset values key by key")
        p.add_argument("--seed", type=int, help="override train.seed / the synthesis seed")

    p_synth = sub.add_parser("synth", help="synthesize a corpus of clean/noisy WAV pairs")
    common(p_synth)
    p_synth.add_argument("--out", required=True, help="corpus output directory")

    p_train = sub.add_parser("train", help="train on a synthesized corpus")
    common(p_train)
    p_train.add_argument("--corpus", required=True, help="corpus directory from synth")
    p_train.add_argument("--out", required=True, help="run output directory")
    p_train.add_argument("--lm", choices=["on", "off"], help="override train.lm")
    p_train.add_argument("--curriculum", choices=["on", "off"], help="override train.curriculum")
    p_train.add_argument("--epochs", type=int, help="override train.epochs_max")
    p_train.add_argument("--init", help="checkpoint to warm-start parameters from")

    p_eval = sub.add_parser("eval", help="score a checkpoint on one corpus split")
    p_eval.add_argument("--corpus", required=True, help="corpus directory from synth")
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint file from train")
    p_eval.add_argument("--out", required=True, help="report output directory")
    p_eval.add_argument("--split", default="test", help="manifest split to score (default test)")
    p_eval.add_argument(
        "--estimate-source",
        choices=["model", "noisy", "clean"],
        default="model",
        help="what stands in as the enhanced signal (default model)",
    )
    p_eval.add_argument("--lm", choices=["on", "off"], help="override recognizer scoring on/off")

    p_enh = sub.add_parser("enhance", help="denoise one WAV file")
    p_enh.add_argument("--checkpoint", required=True, help="checkpoint file from train")
    p_enh.add_argument("--in", dest="input", required=True, help="noisy input WAV (16 kHz mono PCM16)")
    p_enh.add_argument("--out", required=True, help="enhanced output WAV path")
    return parser


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_run_manifest(
    out_dir: str, command: str, argv: list[str], snapshot: str, seed: int | None, outputs: list[str], started: str
) -> None:
    payload = {
        "command": command,
        "argv": argv,
        "package_version": __version__,
        "seed": seed,
        "config": snapshot,
        "outputs": sorted(outputs),
        "started_utc": started,
        "finished_utc": _utc_now(),
    }
    cfgmod.write_json_atomic(os.path.join(out_dir, "run.json"), payload)


def _merged_kv(args: argparse.Namespace, overrides: dict[str, str]) -> dict[str, str]:
    layers = [cfgmod.load_preset(args.preset)]
    if getattr(args, "config", None):
        layers.append(cfgmod.read_config_file(args.config))
    layers.append(overrides)
    kv = cfgmod.merge_config(*layers)
    cfgmod.validate_config_keys(kv)
    return kv


def _flag_overrides(args: argparse.Namespace) -> dict[str, str]:
    overrides: dict[str, str] = {}
    if getattr(args, "seed", None) is not None:
        overrides["train.seed"] = str(args.seed)
    if getattr(args, "lm", None) is not None:
        overrides["train.lm"] = args.lm
    if getattr(args, "curriculum", None) is not None:
        overrides["train.curriculum"] = args.curriculum
    if getattr(args, "epochs", None) is not None:
        overrides["train.epochs_max"] = str(args.epochs)
    return overrides


def cmd_synth(args: argparse.Namespace, argv: list[str]) -> int:
    started = _utc_now()
    kv = _merged_kv(args, _flag_overrides(args))
    corpus_cfg = cfgmod.corpus_config_from(kv)
    train_cfg = cfgmod.train_config_from(kv)
    seed = args.seed if args.seed is not None else train_cfg.seed
    os.makedirs(args.out, exist_ok=True)
    manifest_path = build_corpus(corpus_cfg, seed, args.out)
    rows = load_manifest(args.out)
    figure = save_corpus_overview(rows, os.path.join(args.out, "corpus_overview.png"))
    log.info("synthesized %d utterances under %s", len(rows), args.out)
    model_cfg, lm_cfg = cfgmod.model_configs_from(kv)
    snapshot = cfgmod.snapshot_text(model_cfg, lm_cfg, train_cfg, corpus_cfg)
    outputs = [os.path.basename(manifest_path), "corpus.json", "wav", os.path.basename(figure)]
    _write_run_manifest(args.out, "synth", argv, snapshot, seed, outputs, started)
    return 0


def _check_corpus_compatible(corpus_dir: str, lm_vocab: int, lm_max_words: int, lm_on: bool) -> None:
    meta = load_corpus_meta(corpus_dir)
    if not lm_on:
        return
    if int(meta["vocab_size"]) != lm_vocab:
        raise ConfigError(
            f"model.vocab_size is {lm_vocab} but corpus {corpus_dir} was built with "
            f"vocab_size {meta['vocab_size']}"
        )
    if int(meta["words_max"]) > lm_max_words:
        raise ConfigError(
            f"model.max_words is {lm_max_words} but corpus {corpus_dir} holds transcripts "
            f"up to {meta['words_max']} words"
        )


def cmd_train(args: argparse.Namespace, argv: list[str]) -> int:
    started = _utc_now()
    kv = _merged_kv(args, _flag_overrides(args))
    model_cfg, lm_cfg = cfgmod.model_configs_from(kv)
    train_cfg = cfgmod.train_config_from(kv)
    _check_corpus_compatible(args.corpus, lm_cfg.vocab_size, lm_cfg.max_words, train_cfg.lm)
    snapshot = cfgmod.snapshot_text(model_cfg, lm_cfg, train_cfg)
    result = train(
        args.corpus,
        args.out,
        model_cfg,
        lm_cfg,
        train_cfg,
        init_checkpoint=args.init,
        config_text=snapshot,
    )
    figure = save_training_curves(
        result.history, os.path.join(args.out, "training_curves.png"), result.switched_epoch
    )
    outputs = [os.path.basename(p) for p in (result.best_path, result.last_path, result.log_path, figure)]
    if result.phase1_path:
        outputs.append(os.path.basename(result.phase1_path))
    _write_run_manifest(args.out, "train", argv, snapshot, train_cfg.seed, outputs, started)
    log.info(
        "training finished: %d epochs, final phase %s, best score %.6g",
        result.epochs_run, result.final_phase, result.best_score,
    )
    return 0


def _load_model(checkpoint_path: str):
    ckpt = load_checkpoint(checkpoint_path)
    model_cfg, lm_cfg, train_cfg = cfgmod.configs_from_snapshot(ckpt.config_text)
    params = init_model_params(model_cfg, lm_cfg, train_cfg.seed)
    apply_params(ckpt.params, named_parameters(params))
    return ckpt, params, model_cfg, lm_cfg, train_cfg


def cmd_eval(args: argparse.Namespace, argv: list[str]) -> int:
    started = _utc_now()
    _, params, model_cfg, lm_cfg, train_cfg = _load_model(args.checkpoint)
    lm_enabled = train_cfg.lm if args.lm is None else args.lm == "on"
    _check_corpus_compatible(args.corpus, lm_cfg.vocab_size, lm_cfg.max_words, lm_enabled)
    report = evaluate(
        args.corpus,
        args.split,
        params,
        model_cfg,
        lm_cfg,
        estimate_source=args.estimate_source,
        lm_enabled=lm_enabled,
    )
    os.makedirs(args.out, exist_ok=True)
    csv_path, json_path = write_report(report, args.out)
    hist = save_metric_histograms(report, os.path.join(args.out, "metrics_hist.png"))

    first = load_manifest(args.corpus, split=args.split)[0]
    noisy_feats = features_of(read_wav(os.path.join(args.corpus, first.noisy_path)))
    clean_feats = features_of(read_wav(os.path.join(args.corpus, first.clean_path)))
    denoised, _ = crnn_forward(noisy_feats, params.crnn, model_cfg)
    spec = save_spectrogram_example(
        noisy_feats.magnitudes,
        denoised.data,
        clean_feats.magnitudes,
        os.path.join(args.out, "spectrogram_example.png"),
        utterance_id=first.utt_id,
    )
    snapshot = cfgmod.snapshot_text(model_cfg, lm_cfg, train_cfg)
    outputs = [os.path.basename(p) for p in (csv_path, json_path, hist, spec)]
    _write_run_manifest(args.out, "eval", argv, snapshot, train_cfg.seed, outputs, started)
    agg = report.aggregates()
    wer_txt = "n/a" if agg["wer"] is None else f"{agg['wer']:.4f}"
    log.info(
        "eval %s/%s: snr %.2f dB, lsd %.2f dB, wer %s",
        args.estimate_source, args.split, agg["snr"], agg["lsd"], wer_txt,
    )
    return 0


def cmd_enhance(args: argparse.Namespace, argv: list[str]) -> int:
    _, params, model_cfg, _, _ = _load_model(args.checkpoint)
    wave = read_wav(args.input)
    feats = features_of(wave)
    denoised, _ = crnn_forward(feats, params.crnn, model_cfg)
    est = reconstruct(FeatureSequence(denoised.data.astype(np.float64), feats.phases))
    out = np.zeros(len(wave.samples), dtype=np.float64)
    out[: len(est.samples)] = est.samples
    write_wav(args.out, Waveform(out, wave.sample_rate))
    log.info("enhanced %s -> %s (%d samples)", args.input, args.out, len(out))
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        if args.command == "synth":
            return cmd_synth(args, argv)
        if args.command == "train":
            return cmd_train(args, argv)
        if args.command == "eval":
            return cmd_eval(args, argv)
        return cmd_enhance(args, argv)
    except CheckpointError as exc:
        log.error("checkpoint error: %s", exc)
        return 5
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return 2
    except NumericsError as exc:
        log.error("numeric failure: %s", exc)
        return 4
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return 3
    except ValueError as exc:
        log.error("invalid value: %s", exc)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
