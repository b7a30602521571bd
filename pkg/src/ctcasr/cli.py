"""Command-line interface.

Subcommands: prepare | features | train | lm-train | decode | eval | analyze.
Exit codes: 0 success, 1 usage/configuration error, 2 data/format error.
Every run logs one machine-parsable ``CONFIG {json}`` line with the
fully resolved options; ``replay_argv`` turns that line back into an
argument vector, which is how the replay test re-executes a run.
Errors are reported as a single ``ERROR\tkind=...\texit=...\tmsg=...``
line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, complexity, ctc, data, features, figures, lm, numerics, train as train_mod
from .alphabet import build_alphabet, decode as alpha_decode, load_alphabet, save_alphabet
from .errors import ConfigError, CtcAsrError, DataError, FormatError, UsageError
from .model import BLOCKS, MODEL_CONFIGS, get_block, get_config

log = logging.getLogger(__name__)

_POSITIONALS = {"lm-train": ["corpus", "output"]}
_EXIT_USAGE = 1
_EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); keep our code mapping
        raise UsageError(message)


def _common_flags(sub):
    sub.add_argument("--seed", type=int, default=0, help="seed for every random choice in this run")
    sub.add_argument("--threads", type=int, default=1, help="worker threads for feature extraction")
    sub.add_argument("-v", "--verbose", action="count", default=0, help="increase log verbosity")


def build_parser() -> _Parser:
    parser = _Parser(prog="ctcasr", description=__doc__.splitlines()[0] if __doc__ else None)
    parser.add_argument("--version", action="version", version=f"ctcasr {__version__}")
    subs = parser.add_subparsers(dest="cmd", metavar="COMMAND")

    p = subs.add_parser("prepare", help="index TSV + audio dir -> manifest (optionally split)")
    p.add_argument("--index", required=True, help="utterance index TSV")
    p.add_argument("--audio-dir", required=True)
    p.add_argument("--out", required=True, help="manifest TSV to write")
    p.add_argument("--id-col", type=int, default=0)
    p.add_argument("--text-col", type=int, default=2)
    p.add_argument("--ext", default=".wav")
    p.add_argument("--split-dir", default=None, help="also write train/val/test manifests here")
    p.add_argument("--ratios", default="0.68,0.12,0.20")
    _common_flags(p)

    p = subs.add_parser("features", help="precompute the feature cache for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache-dir", required=True)
    _common_flags(p)

    p = subs.add_parser("train", help="train an acoustic model")
    p.add_argument("--config", required=True, help=f"one of {sorted(MODEL_CONFIGS)}")
    p.add_argument("--train", dest="train_manifest", required=True)
    p.add_argument("--val", dest="val_manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--gamma", type=float, default=1.0 / 1.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--clip", type=float, default=400.0)
    p.add_argument("--batch-size", type=int, default=data.BATCH_SIZE)
    p.add_argument("--max-epochs", type=int, default=30)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--precision", choices=["float32", "float64"], default="float32")
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--alphabet", default=None, help="alphabet file (default: build from train set)")
    _common_flags(p)

    p = subs.add_parser("lm-train", help="train a Kneser-Ney n-gram model, write ARPA")
    p.add_argument("corpus", help="text corpus, one sentence per line")
    p.add_argument("output", help="ARPA file to write")
    p.add_argument("--order", type=int, default=4)
    p.add_argument("--discount", type=float, default=0.75)
    _common_flags(p)

    p = subs.add_parser("decode", help="transcribe WAV files with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav", required=True, action="append", help="repeatable")
    p.add_argument("--lm", default=None, help="ARPA language model (implies beam search)")
    p.add_argument("--beam", type=int, default=None, help="beam width; enables beam search without an LM")
    p.add_argument("--alpha", type=float, default=0.75)
    p.add_argument("--beta", type=float, default=1.0)
    _common_flags(p)

    p = subs.add_parser("eval", help="score a model over a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--lm", default=None)
    p.add_argument("--beam", type=int, default=100)
    p.add_argument("--alpha", type=float, default=0.75)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--out-dir", default=None, help="write per-utterance TSVs, summary and figure here")
    p.add_argument("--cache-dir", default=None)
    _common_flags(p)

    p = subs.add_parser("analyze", help="parameter/FLOP accounting for a block or full config")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--block", help=f"one of {sorted(BLOCKS)}")
    group.add_argument("--config", help=f"one of {sorted(MODEL_CONFIGS)}")
    p.add_argument("--frames", type=int, default=complexity.DEFAULT_FRAMES)
    p.add_argument("--classes", type=int, default=None, help="include the output layer sized to this")
    p.add_argument("--out-dir", default=None, help="write report.txt, report.kv and report.png here")
    _common_flags(p)

    return parser


def _resolved_options(args) -> dict:
    skip = {"cmd"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def _log_config(args) -> None:
    doc = {"cmd": args.cmd, "options": _resolved_options(args)}
    print(f"CONFIG {json.dumps(doc, sort_keys=True)}", file=sys.stderr)


def replay_argv(config_line: str) -> list[str]:
    """Invert a logged CONFIG line back into an argument vector."""
    doc = json.loads(config_line.removeprefix("CONFIG").strip())
    cmd = doc["cmd"]
    options = dict(doc["options"])
    argv = [cmd]
    for name in _POSITIONALS.get(cmd, []):
        argv.append(str(options.pop(name)))
    verbose = options.pop("verbose", 0)
    for _ in range(verbose):
        argv.append("-v")
    for dest, value in sorted(options.items()):
        if value is None or value is False:
            continue
        flag = "--" + dest.replace("_", "-")
        if dest == "train_manifest":
            flag = "--train"
        elif dest == "val_manifest":
            flag = "--val"
        if value is True:
            argv.append(flag)
        elif isinstance(value, list):
            for item in value:
                argv.extend([flag, str(item)])
        else:
            argv.extend([flag, str(value)])
    return argv


def _cmd_prepare(args) -> int:
    manifest = data.scan_corpus(args.index, args.audio_dir, id_col=args.id_col,
                                text_col=args.text_col, ext=args.ext)
    data.write_manifest(manifest, args.out)
    print(f"manifest.rows={len(manifest)}")
    print(f"manifest.hours={manifest.total_hours:.4f}")
    if args.split_dir:
        ratios = tuple(float(x) for x in args.ratios.split(","))
        parts = data.split(manifest, ratios=ratios, seed=args.seed)
        split_dir = Path(args.split_dir)
        split_dir.mkdir(parents=True, exist_ok=True)
        for name, part in zip(("train", "val", "test"), parts):
            data.write_manifest(part, split_dir / f"{name}.tsv")
            print(f"split.{name}.rows={len(part)}")
    return 0


def _cmd_features(args) -> int:
    manifest = data.read_manifest(args.manifest)
    Path(args.cache_dir).mkdir(parents=True, exist_ok=True)
    paths = [rec.path for rec in manifest]
    if args.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            list(pool.map(lambda p: features.extract_features(p, cache_dir=args.cache_dir), paths))
    else:
        for path in paths:
            features.extract_features(path, cache_dir=args.cache_dir)
    print(f"features.cached={len(paths)}")
    print(f"features.cache_dir={args.cache_dir}")
    return 0


def _cmd_train(args) -> int:
    numerics.set_precision(args.precision)
    config = get_config(args.config)
    train_manifest = data.read_manifest(args.train_manifest)
    val_manifest = data.read_manifest(args.val_manifest)
    if args.alphabet:
        alphabet = load_alphabet(args.alphabet)
    else:
        alphabet = build_alphabet(train_manifest.transcripts())
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_alphabet(alphabet, out_dir / "alphabet.txt")
    tcfg = train_mod.TrainConfig(
        lr=args.lr, gamma=args.gamma, momentum=args.momentum, clip_norm=args.clip,
        batch_size=args.batch_size, max_epochs=args.max_epochs, patience=args.patience,
        seed=args.seed,
    )
    best, history = train_mod.train(config, train_manifest, val_manifest, alphabet,
                                    out_dir, tcfg, cache_dir=args.cache_dir, resume=args.resume)
    print(f"train.best_checkpoint={best}")
    print(f"train.epochs={len(history)}")
    if history:
        print(f"train.best_val_wer={min(h.val_wer for h in history):.4f}")
    return 0


def _cmd_lm_train(args) -> int:
    with open(args.corpus, encoding="utf-8") as f:
        model = lm.train_kn(f, order=args.order, discount=args.discount)
    lm.write_arpa(model, args.output)
    print(f"lm.order={model.order}")
    print(f"lm.vocab={len(model.vocab)}")
    for n, count in enumerate(model.counts(), start=1):
        print(f"lm.ngrams.{n}={count}")
    return 0


def _load_net(checkpoint_path):
    net, alphabet, _, _, _ = train_mod.load_checkpoint(checkpoint_path)
    return net, alphabet


def _make_decoders(alphabet, args, lm_model):
    decoders = {"greedy": lambda lp: alpha_decode(alphabet, ctc.greedy_decode(lp))}
    if lm_model is not None:
        width = args.beam if args.beam else 100
        decoders["beam+lm"] = lambda lp: ctc.beam_search(
            lp, alphabet, beam_width=width, lm=lm_model, alpha=args.alpha, beta=args.beta
        )
    return decoders


def _cmd_decode(args) -> int:
    net, alphabet = _load_net(args.checkpoint)
    lm_model = lm.read_arpa(args.lm) if args.lm else None
    for wav in args.wav:
        spec = features.log_spectrogram(features.resample(features.load_wav(wav)))
        log_probs = net.predict(spec.values)
        if lm_model is not None:
            width = args.beam if args.beam else 100
            text = ctc.beam_search(log_probs, alphabet, beam_width=width,
                                   lm=lm_model, alpha=args.alpha, beta=args.beta)
        elif args.beam:
            text = ctc.beam_search(log_probs, alphabet, beam_width=args.beam)
        else:
            text = alpha_decode(alphabet, ctc.greedy_decode(log_probs))
        print(text)
    return 0


def _cmd_eval(args) -> int:
    from .evaluate import evaluate, format_summary, write_per_utterance_tsv

    net, alphabet = _load_net(args.checkpoint)
    manifest = data.read_manifest(args.manifest)
    lm_model = lm.read_arpa(args.lm) if args.lm else None
    decoders = _make_decoders(alphabet, args, lm_model)
    results = evaluate(net.predict, alphabet, manifest, decoders, cache_dir=args.cache_dir)
    summary = format_summary(results)
    print(summary)
    for mode, res in results.items():
        print(f"eval.{mode}.wer={res.wer:.4f}")
        print(f"eval.{mode}.cer={res.cer:.4f}")
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for mode, res in results.items():
            write_per_utterance_tsv(res, out_dir / f"per_utterance_{mode.replace('+', '_')}.tsv")
        (out_dir / "summary.txt").write_text(summary + "\n", encoding="utf-8")
        figures.plot_eval(results, out_dir / "eval.png")
        print(f"eval.out_dir={out_dir}")
    return 0


def _cmd_analyze(args) -> int:
    if args.frames < 1:
        raise UsageError(f"--frames must be positive, got {args.frames}")
    if args.block:
        report = complexity.block_report(get_block(args.block), args.frames)
    else:
        report = complexity.model_report(get_config(args.config), args.frames, classes=args.classes)
    print(complexity.format_report(report))
    for line in complexity.report_keyvalues(report):
        print(line)
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.txt").write_text(complexity.format_report(report) + "\n", encoding="utf-8")
        (out_dir / "report.kv").write_text("\n".join(complexity.report_keyvalues(report)) + "\n", encoding="utf-8")
        figures.plot_complexity(report, out_dir / "report.png")
        print(f"analyze.out_dir={out_dir}")
    return 0


_HANDLERS = {
    "prepare": _cmd_prepare,
    "features": _cmd_features,
    "train": _cmd_train,
    "lm-train": _cmd_lm_train,
    "decode": _cmd_decode,
    "eval": _cmd_eval,
    "analyze": _cmd_analyze,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.cmd is None:
            parser.print_usage(sys.stderr)
            raise UsageError("no command given; see --help")
        level = logging.WARNING - 10 * min(args.verbose, 2)
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
        _log_config(args)
        return _HANDLERS[args.cmd](args)
    except UsageError as exc:
        _report_error(exc, _EXIT_USAGE)
        return _EXIT_USAGE
    except (FormatError, DataError, OSError) as exc:
        _report_error(exc, _EXIT_DATA)
        return _EXIT_DATA
    except CtcAsrError as exc:
        _report_error(exc, _EXIT_USAGE)
        return _EXIT_USAGE


def _report_error(exc, code) -> None:
    msg = str(exc).replace("\t", " ").replace("\n", " ")
    print(f"ERROR\tkind={type(exc).__name__}\texit={code}\tmsg={msg}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
