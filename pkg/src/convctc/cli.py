"""Command-line entry point: prepare, train, eval, transcribe, translit.

Exit codes: 0 success, 1 validation / row-level failures, 2 usage errors.
"""

from __future__ import annotations

import argparse
import collections
import csv
import datetime
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from . import corpus
from .dsp import FeatureConfig, read_wav
from .model import NetworkConfig, param_count
from .training import (
    CheckpointError,
    EvalReport,
    TrainConfig,
    Trainer,
    Utterance,
    evaluate,
    featurize,
    load_checkpoint,
    params_from_checkpoint,
    save_checkpoint,
    transcribe_features,
)
from .translit import Alphabet, TranslitError, TranslitTable, arabic_to_roman, decode_ids, encode_labels, roman_to_arabic

OUTPUT_DIR_ENV = "CONVCTC_OUTPUT_DIR"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# run configuration


@dataclass
class ManifestSource:
    path: Path
    audio_root: Path
    train_fraction: float = 0.9


@dataclass
class RunConfig:
    features: FeatureConfig
    network: NetworkConfig
    training: TrainConfig
    manifests: list[ManifestSource]
    output_dir: Path
    split_seed: int = 0
    noise_dir: Path | None = None
    translit_table: Path | None = None

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        base = path.parent

        def resolve(p):
            return None if p is None else (base / p).resolve()

        try:
            table_path = resolve(doc.get("translit_table"))
            table = TranslitTable.load(table_path)
            features = FeatureConfig.from_dict(doc.get("features", {}))
            features.validate(16000)
            net = dict(doc.get("network", {}))
            net.setdefault("alphabet_size", Alphabet.from_table(table).size)
            net.setdefault("mel_bins", features.mel_bins)
            network = NetworkConfig.from_dict(net)
            training = TrainConfig.from_dict(doc.get("training", {}))
            manifests = [
                ManifestSource(resolve(m["path"]), resolve(m.get("audio_root", ".")), m.get("train_fraction", 0.9))
                for m in doc.get("manifests", [])
            ]
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"invalid config {path}: {exc}") from exc
        if network.mel_bins != features.mel_bins:
            raise ConfigError(f"network.mel_bins {network.mel_bins} != features.mel_bins {features.mel_bins}")
        out = os.environ.get(OUTPUT_DIR_ENV) or doc.get("output_dir", "out")
        cfg = cls(features, network, training, manifests, resolve(out), int(doc.get("split_seed", 0)),
                  resolve(doc.get("noise_dir")), table_path)
        cfg.validate_paths()
        return cfg

    def validate_paths(self) -> None:
        for m in self.manifests:
            if not m.path.is_file():
                raise ConfigError(f"manifest not found: {m.path}")
            if not m.audio_root.is_dir():
                raise ConfigError(f"audio root not found: {m.audio_root}")
        if self.noise_dir is not None and not self.noise_dir.is_dir():
            raise ConfigError(f"noise directory not found: {self.noise_dir}")

    def table(self) -> TranslitTable:
        return TranslitTable.load(self.translit_table)


def load_utterances(entries, audio_root: Path, table: TranslitTable, alphabet: Alphabet) -> list[Utterance]:
    out = []
    for e in entries:
        roman = arabic_to_roman(e.transcript, table)
        out.append(Utterance(e.audio_path, read_wav(audio_root / e.audio_path), encode_labels(roman, alphabet), roman))
    return out


def split_utterances(cfg: RunConfig) -> tuple[list[Utterance], list[Utterance]]:
    table = cfg.table()
    alphabet = Alphabet.from_table(table)
    parts = []
    for m in cfg.manifests:
        entries = corpus.load_manifest(m.path)
        tagged = [(m.audio_root, e) for e in entries]
        parts.append((tagged, corpus.SplitSpec(m.train_fraction, cfg.split_seed)))
    train, held_out = corpus.merge_splits(parts)

    def build(items):
        return [u for root, e in items for u in load_utterances([e], root, table, alphabet)]

    return build(train), build(held_out)


# --------------------------------------------------------------------------
# commands


def cmd_prepare(args) -> int:
    table = TranslitTable.load(args.table)
    entries = corpus.load_manifest(args.manifest)
    root = Path(args.audio_root)
    out = Path(os.environ.get(OUTPUT_DIR_ENV) or args.out)
    out.mkdir(parents=True, exist_ok=True)
    ok, failed = [], 0
    total_seconds = 0.0
    histogram = collections.Counter()
    for row, e in enumerate(entries, 1):
        try:
            clip = read_wav(root / e.audio_path)
            roman = arabic_to_roman(e.transcript, table)
        except (OSError, ValueError) as exc:
            failed += 1
            print(f"row {row}: {e.audio_path}: {exc}", file=sys.stderr)
            continue
        ok.append(e)
        total_seconds += clip.duration_s
        histogram.update(roman)
    corpus.write_manifest(out / "manifest.csv", ok)
    duration = str(datetime.timedelta(seconds=round(total_seconds)))
    lines = [f"files {len(ok)}", f"failed {failed}", f"total_duration {duration}", "character_histogram:"]
    lines += [f"  {ch!r}\t{n}" for ch, n in sorted(histogram.items())]
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"{len(ok)} ok, {failed} failed")
    print(f"total duration {duration}")
    return EXIT_FAIL if failed else EXIT_OK


def _load_noises(cfg: RunConfig):
    if cfg.noise_dir is None:
        return []
    return [read_wav(p) for p in sorted(cfg.noise_dir.glob("*.wav"))]


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    train_utts, eval_utts = split_utterances(cfg)
    alphabet = Alphabet.from_table(cfg.table())
    trainer = Trainer(train_utts, cfg.network, cfg.training, cfg.features, alphabet, _load_noises(cfg))
    if args.resume:
        try:
            trainer.restore(load_checkpoint(args.resume))
        except CheckpointError as exc:
            print(f"cannot resume: {exc}", file=sys.stderr)
            return EXIT_FAIL
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    print(f"network: {cfg.network.num_stacks} stacks x {cfg.network.blocks_per_stack} blocks, "
          f"dilations {list(cfg.network.dilations)}, params {param_count(cfg.network)}")
    print(f"data: {len(train_utts)} train / {len(eval_utts)} eval utterances, starting at step {trainer.step}")
    log_path = cfg.output_dir / "train_log.csv"
    ckpt_path = cfg.output_dir / "checkpoint.bin"
    mode = "a" if args.resume and log_path.exists() else "w"
    t0 = time.monotonic()
    with open(log_path, mode, newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if mode == "w":
            writer.writerow(["step", "mean_nll", "wall_seconds"])

        def on_step(step, res):
            writer.writerow([step, repr(res.loss), f"{time.monotonic() - t0:.3f}"])
            if cfg.training.checkpoint_every and step % cfg.training.checkpoint_every == 0:
                save_checkpoint(ckpt_path, trainer.checkpoint())
            if eval_utts and cfg.training.eval_every and step % cfg.training.eval_every == 0:
                rep = evaluate(eval_utts, trainer.params, alphabet, cfg.features)
                print(f"step {step}: loss {res.loss:.4f}, eval LER {rep.ler_percent:.2f}%")

        trainer.run(on_step=on_step)
    save_checkpoint(ckpt_path, trainer.checkpoint())
    if trainer.skipped:
        print(f"skipped {trainer.skipped} infeasible utterances", file=sys.stderr)
    print(f"wrote {ckpt_path} at step {trainer.step}")
    return EXIT_OK


def format_report(report: EvalReport) -> str:
    return (f"LER {report.ler_percent:.2f}% / Accuracy {report.accuracy_percent:.2f}%\n"
            f"utterances {len(report.keys)}, reference symbols {report.total_reference_symbols}, "
            f"edits {report.total_edits}\n")


def write_report_files(report: EvalReport, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "eval_utterances.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["key", "reference_length", "distance", "reference", "hypothesis"])
        for row in zip(report.keys, report.references, report.hypotheses, report.distances):
            key, ref, hyp, dist = row
            writer.writerow([key, len(ref), dist, ref, hyp])
    kv = {
        "ler_percent": f"{report.ler_percent:.2f}",
        "accuracy_percent": f"{report.accuracy_percent:.2f}",
        "utterances": len(report.keys),
        "reference_symbols": report.total_reference_symbols,
        "edits": report.total_edits,
    }
    (out_dir / "eval_report.txt").write_text("".join(f"{k}={v}\n" for k, v in kv.items()), encoding="utf-8")


def cmd_eval(args) -> int:
    cfg = RunConfig.load(args.config)
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError) as exc:
        print(f"cannot load checkpoint: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if ckpt.network_config != cfg.network:
        print("checkpoint architecture does not match the config", file=sys.stderr)
        return EXIT_FAIL
    train_utts, eval_utts = split_utterances(cfg)
    utts = eval_utts if args.split == "eval" else train_utts
    if not utts:
        print(f"the {args.split} split is empty", file=sys.stderr)
        return EXIT_FAIL
    report = evaluate(utts, params_from_checkpoint(ckpt), Alphabet.from_table(cfg.table()), cfg.features)
    sys.stdout.write(format_report(report))
    write_report_files(report, cfg.output_dir)
    return EXIT_OK


def cmd_transcribe(args) -> int:
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError) as exc:
        print(f"cannot load checkpoint: {exc}", file=sys.stderr)
        return EXIT_FAIL
    table = TranslitTable.load(args.table)
    alphabet = Alphabet(ckpt.alphabet) if ckpt.alphabet else Alphabet.from_table(table)
    params = params_from_checkpoint(ckpt)
    failures = 0
    for path in args.wavs:
        try:
            feats = featurize(read_wav(path), ckpt.feature_config)
        except (OSError, ValueError) as exc:
            failures += 1
            print(f"{path}: {exc}", file=sys.stderr)
            continue
        roman = decode_ids(transcribe_features(feats, params), alphabet)
        print(f"{path}\t{roman_to_arabic(roman, table)}\t{roman}")
    return EXIT_FAIL if failures else EXIT_OK


def cmd_translit(args) -> int:
    table = TranslitTable.load(args.table)
    convert = arabic_to_roman if args.to == "roman" else roman_to_arabic
    for lineno, line in enumerate(sys.stdin, 1):
        text = line.rstrip("\n")
        try:
            sys.stdout.write(convert(text, table) + ("\n" if line.endswith("\n") else ""))
        except TranslitError as exc:
            print(f"line {lineno}, column {exc.position + 1}: {exc}", file=sys.stderr)
            return EXIT_FAIL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convctc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="validate a manifest and summarise the corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--audio-root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--table", default=None, help="transliteration table (default: bundled Buckwalter)")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train from a JSON run configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="report label error rate of a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("eval", "train"), default="eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transcribe", help="greedy-decode WAV files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--table", default=None)
    p.add_argument("wavs", nargs="+")
    p.set_defaults(func=cmd_transcribe)

    p = sub.add_parser("translit", help="Buckwalter conversion of standard input")
    p.add_argument("--to", choices=("roman", "arabic"), required=True)
    p.add_argument("--table", default=None)
    p.set_defaults(func=cmd_translit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    for stream in (sys.stdin, sys.stdout):
        if hasattr(stream, "reconfigure"):
            stream.reconfigure(encoding="utf-8")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, corpus.ManifestError, TranslitError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
