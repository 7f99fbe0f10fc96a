"""Batch command-line entry point for the preprocessing/decoding pipeline.

Exit codes: 0 success, 1 usage error, 2 data or parse error, 3 internal error.
Diagnostics go to stderr; data goes to stdout or to --out paths. Every
subcommand is deterministic for a fixed --seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__, audio_io, augment, corpus, evaluate, lm as lm_mod
from . import decode as decode_mod
from . import features, testkit

log = logging.getLogger("medspeech")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

_DATA_ERRORS = (
    audio_io.AudioIOError,
    corpus.ManifestError,
    lm_mod.ArpaParseError,
    decode_mod.LogitFormatError,
    FileNotFoundError,
    ValueError,
    json.JSONDecodeError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _setup_logging():
    level = os.environ.get("MEDSPEECH_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(
        stream=sys.stderr,
        level=levels.get(level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


# desk-scale symptom vocabulary for the synthetic corpus
DEFAULT_VOCAB = ("মাথা", "ব্যথা", "জ্বর", "কাশি", "পেট", "গলা", "সর্দি", "বমি")


@dataclass
class PipelineConfig:
    work_dir: str
    seed: int
    n_utterances: int = 20
    vocab: list = field(default_factory=lambda: list(DEFAULT_VOCAB))
    confidence: float = 1.0
    target_rate: int = 16000
    synth_rate: int = 22050
    lm_order: int = 3
    lm_mode: str = "word"
    beam: int = 16
    alpha: float = 0.75
    beta: float = 1.85
    augment_config: str | None = None

    @classmethod
    def load(cls, path, overrides: dict) -> "PipelineConfig":
        doc = {}
        if path is not None:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
            nested_lm = doc.pop("lm", {})
            doc.setdefault("lm_order", nested_lm.get("order", 3))
            doc.setdefault("lm_mode", nested_lm.get("mode", "word"))
            nested_dec = doc.pop("decode", {})
            for k in ("beam", "alpha", "beta"):
                if k in nested_dec:
                    doc.setdefault(k, nested_dec[k])
            doc.pop("split", None)
        doc.update({k: v for k, v in overrides.items() if v is not None})
        unknown = set(doc) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        if "work_dir" not in doc:
            raise _UsageError("pipeline needs a work dir (--work-dir or config)")
        if "seed" not in doc:
            raise _UsageError("pipeline needs an explicit seed (--seed or config)")
        return cls(**doc)


def _build_parser() -> _Parser:
    p = _Parser(prog="medspeech", description=__doc__)
    p.add_argument("--version", action="version", version=f"medspeech {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    c = sub.add_parser("convert", help="convert a WAV tree to 16 kHz mono")
    c.add_argument("--in", dest="in_dir", required=True)
    c.add_argument("--out", dest="out_dir", required=True)
    c.add_argument("--manifest", required=True)
    c.add_argument("--rate", type=int, default=16000)
    c.add_argument("--tag", default="standard")
    c.add_argument("--transcripts", help="CSV of wav_filename,transcript")
    c.add_argument("--jobs", type=int, default=1)

    c = sub.add_parser("stats", help="duration statistics over a manifest")
    c.add_argument("--manifest", required=True)
    c.add_argument("--audio-root", help="defaults to the manifest directory")
    c.add_argument("--out", help="also write the table here")

    c = sub.add_parser("split", help="train/dev/test split of a manifest")
    c.add_argument("--manifest", required=True)
    c.add_argument("--ratios", default="0.8,0.1,0.1")
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--out-prefix", required=True)

    c = sub.add_parser("augment", help="apply the noise augmentation pipeline")
    c.add_argument("--manifest", required=True)
    c.add_argument("--audio-root")
    c.add_argument("--out-dir", required=True)
    c.add_argument("--out-manifest")
    c.add_argument("--config", help="augmentation config JSON")
    c.add_argument("--noise-dir", help="directory of 16 kHz noise WAVs")
    c.add_argument("--spec-dir", help="also dump augmented spectrograms here")
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--jobs", type=int, default=1)

    c = sub.add_parser("lm-train", help="train a Kneser-Ney n-gram model")
    src = c.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest")
    src.add_argument("--text", help="plain text, one sentence per line")
    c.add_argument("--order", type=int, default=3)
    c.add_argument("--mode", choices=("word", "char"), default="word")
    c.add_argument("--discount", type=float)
    c.add_argument("--out", required=True)

    c = sub.add_parser("lm-score", help="log10 scores (or perplexity) of text")
    c.add_argument("--lm", required=True)
    src = c.add_mutually_exclusive_group(required=True)
    src.add_argument("--text")
    src.add_argument("--in", dest="in_file", help="one sentence per line")
    c.add_argument("--mode", choices=("auto", "word", "char"), default="auto")
    c.add_argument("--perplexity", action="store_true")

    c = sub.add_parser("decode", help="decode a logit file")
    c.add_argument("--logits", required=True)
    c.add_argument("--alphabet", required=True)
    c.add_argument("--lm")
    c.add_argument("--lm-mode", choices=("auto", "word", "char"), default="auto")
    c.add_argument("--alpha", type=float, default=0.75)
    c.add_argument("--beta", type=float, default=1.85)
    c.add_argument("--beam", type=int, default=128)
    c.add_argument("--greedy", action="store_true")
    c.add_argument("--scores", action="store_true",
                   help="append the combined score, tab-separated")

    c = sub.add_parser("eval", help="WER/CER over a ref,hyp pairs CSV")
    c.add_argument("--pairs", required=True)

    c = sub.add_parser("report", help="per-dataset WER table")
    c.add_argument("--group", action="append", required=True,
                   metavar="TAG=PAIRS.csv")
    c.add_argument("--csv", help="also write the table as CSV here")

    c = sub.add_parser("synth", help="generate the synthetic tone corpus")
    c.add_argument("--out-dir", required=True)
    c.add_argument("--n", type=int, default=20)
    c.add_argument("--vocab", help="comma-separated words")
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--rate", type=int, default=22050)

    c = sub.add_parser("pipeline", help="synthetic end-to-end run")
    c.add_argument("--config", help="pipeline config JSON")
    c.add_argument("--work-dir")
    c.add_argument("--seed", type=int)
    c.add_argument("--n", type=int, dest="n_utterances")
    c.add_argument("--confidence", type=float)
    c.add_argument("--beam", type=int)
    c.add_argument("--alpha", type=float)
    c.add_argument("--beta", type=float)
    c.add_argument("--order", type=int, dest="lm_order")
    c.add_argument("--mode", choices=("word", "char"), dest="lm_mode")

    c = sub.add_parser("serve", help="run the HTTP service")
    c.add_argument("--host", default="127.0.0.1")
    c.add_argument("--port", type=int, default=8000)
    return p


# ---------------------------------------------------------------------------
# subcommand bodies


def _read_transcript_map(path) -> dict:
    import csv as _csv

    out = {}
    with open(path, encoding="utf-8", newline="") as f:
        for row in _csv.reader(f):
            if len(row) < 2:
                raise corpus.ManifestError(
                    f"transcript row needs wav_filename,transcript: {row!r}"
                )
            out[row[0]] = row[1]
    return out


def _cmd_convert(args) -> int:
    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        raise FileNotFoundError(f"no such input directory: {in_dir}")
    transcripts = _read_transcript_map(args.transcripts) if args.transcripts else {}
    wavs = sorted(p.relative_to(in_dir).as_posix() for p in in_dir.rglob("*.wav"))
    if not wavs:
        raise ValueError(f"no .wav files under {in_dir}")
    out_dir = Path(args.out_dir)

    def one(rel: str):
        audio_io.convert(in_dir / rel, out_dir / rel, args.rate)
        return rel

    with ThreadPoolExecutor(max_workers=max(args.jobs, 1)) as pool:
        list(pool.map(one, wavs))
    entries = []
    for rel in wavs:
        text = corpus.normalize_transcript(transcripts.get(rel, ""))
        size = (out_dir / rel).stat().st_size
        entries.append(corpus.ManifestEntry(rel, size, text, args.tag))
    corpus.write_manifest(entries, args.manifest)
    log.info("converted %d files into %s", len(wavs), out_dir)
    return EXIT_OK


def _manifest_durations(manifest_path, audio_root) -> list[float]:
    entries = corpus.read_manifest(manifest_path)
    root = Path(audio_root) if audio_root else Path(manifest_path).parent
    return [
        audio_io.load_wav(root / e.wav_filename).duration_seconds for e in entries
    ]


def _cmd_stats(args) -> int:
    stats = audio_io.duration_stats(_manifest_durations(args.manifest, args.audio_root))
    table = audio_io.render_stats(stats)
    sys.stdout.write(table)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    return EXIT_OK


def _cmd_split(args) -> int:
    try:
        ratios = tuple(float(x) for x in args.ratios.split(","))
    except ValueError:
        raise _UsageError(f"bad --ratios value: {args.ratios!r}") from None
    if len(ratios) != 3:
        raise _UsageError("--ratios needs exactly three comma-separated numbers")
    entries = corpus.read_manifest(args.manifest)
    train, dev, test = corpus.split_manifest(entries, ratios, args.seed)
    for name, part in (("train", train), ("dev", dev), ("test", test)):
        corpus.write_manifest(part, f"{args.out_prefix}.{name}.csv")
    log.info("split %d entries into %d/%d/%d", len(entries),
             len(train), len(dev), len(test))
    return EXIT_OK


def _cmd_augment(args) -> int:
    entries = corpus.read_manifest(args.manifest)
    root = Path(args.audio_root) if args.audio_root else Path(args.manifest).parent
    config = (
        augment.AugmentConfig.from_file(args.config)
        if args.config
        else augment.AugmentConfig.from_json(augment.default_config_json())
    )
    bank = augment.NoiseBank.from_dir(args.noise_dir) if args.noise_dir else None
    out_dir = Path(args.out_dir)

    def one(item):
        index, entry = item
        clip = audio_io.load_wav(root / entry.wav_filename)
        result = augment.apply_pipeline(clip, config, bank, seed=(args.seed, index))
        audio_io.save_wav(result.clip, out_dir / entry.wav_filename)
        if args.spec_dir:
            spec_path = Path(args.spec_dir) / Path(entry.wav_filename).with_suffix(".spec")
            features.write_spectrogram(result.spec, spec_path)
        return entry

    with ThreadPoolExecutor(max_workers=max(args.jobs, 1)) as pool:
        processed = list(pool.map(one, enumerate(entries)))
    if args.out_manifest:
        new_entries = [
            corpus.ManifestEntry(
                e.wav_filename,
                (out_dir / e.wav_filename).stat().st_size,
                e.transcript,
                e.dataset_tag,
            )
            for e in processed
        ]
        corpus.write_manifest(new_entries, args.out_manifest)
    log.info("augmented %d files into %s", len(entries), out_dir)
    return EXIT_OK


def _load_transcripts(args) -> list[str]:
    if args.manifest:
        return [e.transcript for e in corpus.read_manifest(args.manifest)]
    lines = Path(args.text).read_text(encoding="utf-8").splitlines()
    return [corpus.normalize_transcript(line) for line in lines]


def _cmd_lm_train(args) -> int:
    texts = [t for t in _load_transcripts(args) if t]
    model = lm_mod.train_lm(texts, args.order, args.mode, args.discount)
    lm_mod.write_arpa(model, args.out)
    log.info("trained order-%d %s model over %d sentences", args.order,
             args.mode, len(texts))
    return EXIT_OK


def _cmd_lm_score(args) -> int:
    model = lm_mod.read_arpa(args.lm, token_mode=args.mode)
    lines = (
        [args.text]
        if args.text is not None
        else Path(args.in_file).read_text(encoding="utf-8").splitlines()
    )
    lines = [corpus.normalize_transcript(line) for line in lines]
    if args.perplexity:
        print(f"{lm_mod.perplexity(model, lines):.6f}")
        return EXIT_OK
    for line in lines:
        print(f"{lm_mod.sentence_logprob(model, line):.6f}")
    return EXIT_OK


def _cmd_decode(args) -> int:
    logits = decode_mod.read_logits(args.logits)
    alphabet = corpus.read_alphabet(args.alphabet)
    if args.greedy:
        print(decode_mod.greedy_decode(logits, alphabet))
        return EXIT_OK
    model = lm_mod.read_arpa(args.lm, token_mode=args.lm_mode) if args.lm else None
    hyps = decode_mod.beam_search(
        logits, alphabet, args.beam, model, args.alpha, args.beta
    )
    top = hyps[0]
    if args.scores:
        print(f"{top.text}\t{top.log_score:.6f}")
    else:
        print(top.text)
    return EXIT_OK


def _cmd_eval(args) -> int:
    pairs = evaluate.read_pairs(args.pairs)
    print(f"WER\t{evaluate.wer(pairs) * 100:.2f}%")
    print(f"CER\t{evaluate.cer(pairs) * 100:.2f}%")
    return EXIT_OK


def _cmd_report(args) -> int:
    groups = {}
    for spec_arg in args.group:
        tag, _, path = spec_arg.partition("=")
        if not path:
            raise _UsageError(f"--group must be TAG=PAIRS.csv, got {spec_arg!r}")
        groups[tag] = evaluate.read_pairs(path)
    report = evaluate.build_report(groups)
    sys.stdout.write(report.render_text())
    if args.csv:
        Path(args.csv).write_text(report.render_csv(), encoding="utf-8")
    return EXIT_OK


def _cmd_synth(args) -> int:
    vocab = args.vocab.split(",") if args.vocab else list(DEFAULT_VOCAB)
    manifest = testkit.synth_corpus(args.out_dir, args.n, vocab, args.seed, args.rate)
    log.info("wrote synthetic corpus manifest %s", manifest)
    return EXIT_OK


def _cmd_pipeline(args) -> int:
    overrides = {
        k: getattr(args, k, None)
        for k in ("work_dir", "seed", "n_utterances", "confidence",
                  "beam", "alpha", "beta", "lm_order", "lm_mode")
    }
    cfg = PipelineConfig.load(args.config, overrides)
    work = Path(cfg.work_dir)
    work.mkdir(parents=True, exist_ok=True)

    log.info("pipeline: synthesizing %d utterances", cfg.n_utterances)
    raw_manifest = testkit.synth_corpus(
        work / "raw", cfg.n_utterances, cfg.vocab, cfg.seed, cfg.synth_rate
    )
    raw_entries = corpus.read_manifest(raw_manifest)

    log.info("pipeline: converting to %d Hz", cfg.target_rate)
    wav16 = work / "wav16"
    entries = []
    for e in raw_entries:
        audio_io.convert(work / "raw" / e.wav_filename, wav16 / e.wav_filename,
                         cfg.target_rate)
        size = (wav16 / e.wav_filename).stat().st_size
        entries.append(corpus.ManifestEntry(e.wav_filename, size, e.transcript,
                                            e.dataset_tag))
    manifest_path = work / "manifest.csv"
    corpus.write_manifest(entries, manifest_path)

    if cfg.augment_config is not None:
        log.info("pipeline: augmenting")
        config = augment.AugmentConfig.from_file(cfg.augment_config)
        aug_dir = work / "augmented"
        for index, e in enumerate(entries):
            clip = audio_io.load_wav(wav16 / e.wav_filename)
            result = augment.apply_pipeline(clip, config, None, seed=(cfg.seed, index))
            audio_io.save_wav(result.clip, aug_dir / e.wav_filename)

    durations = [
        audio_io.load_wav(wav16 / e.wav_filename).duration_seconds for e in entries
    ]
    stats_table = audio_io.render_stats(audio_io.duration_stats(durations))
    (work / "stats.txt").write_text(stats_table, encoding="utf-8")
    sys.stdout.write(stats_table + "\n")

    log.info("pipeline: training order-%d %s LM", cfg.lm_order, cfg.lm_mode)
    model = lm_mod.train_lm(
        [e.transcript for e in entries], cfg.lm_order, cfg.lm_mode
    )
    lm_mod.write_arpa(model, work / "lm.arpa")

    alphabet = corpus.read_alphabet(work / "raw" / "alphabets.csv")
    corpus.write_alphabet(alphabet, work / "alphabets.csv")

    log.info("pipeline: synthesizing logits and decoding")
    logit_dir = work / "logits"
    groups: dict[str, list] = {}
    for index, e in enumerate(entries):
        spec = testkit.SynthSpec(
            e.transcript, confidence=cfg.confidence, seed=cfg.seed + index
        )
        logits = testkit.synth_logits(spec, alphabet)
        decode_mod.write_logits(
            logits, logit_dir / Path(e.wav_filename).with_suffix(".ctcl").name
        )
        hyp = decode_mod.beam_search(
            logits, alphabet, cfg.beam, model, cfg.alpha, cfg.beta
        )[0].text
        groups.setdefault(e.dataset_tag, []).append((e.transcript, hyp))

    for tag, pairs in groups.items():
        evaluate.write_pairs(pairs, work / f"pairs.{tag}.csv")
    report = evaluate.build_report(groups)
    sys.stdout.write(report.render_text())
    (work / "report.csv").write_text(report.render_csv(), encoding="utf-8")
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


_COMMANDS = {
    "convert": _cmd_convert,
    "stats": _cmd_stats,
    "split": _cmd_split,
    "augment": _cmd_augment,
    "lm-train": _cmd_lm_train,
    "lm-score": _cmd_lm_score,
    "decode": _cmd_decode,
    "eval": _cmd_eval,
    "report": _cmd_report,
    "synth": _cmd_synth,
    "pipeline": _cmd_pipeline,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return _COMMANDS[args.command](args)
    except SystemExit as e:  # argparse --help/--version
        return int(e.code or 0)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        return EXIT_INTERNAL
    except Exception as e:  # invariant violations and the genuinely unexpected
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
