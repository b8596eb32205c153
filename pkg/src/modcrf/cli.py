"""Command line: train, eval, predict, experiment, verify, defaults.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 data error, 4 checkpoint error.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import verify as verify_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, default_manifest, load_config, manifest_lines
from .data import (
    Availability,
    Corpus,
    SynthSpec,
    Vocabulary,
    generate_synthetic_corpus,
    load_embeddings,
    read_conll,
    scan_types,
    write_conll,
)
from .errors import CheckpointError, ConfigError, ParseError, ValidationError
from .evaluation import EvalMode, span_f1
from .experiments import ExperimentSpec, Protocol, format_rows, run_experiment
from .labels import build_label_space
from .models import build_model, seg_to_bio2
from .training import train

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 0, 1, 2, 3, 4


class DataError(Exception):
    """Unreadable or invalid input data (exit code 3)."""


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value configuration file")
    group = parser.add_argument_group("run configuration (overrides the config file)")
    for f in fields(RunConfig):
        group.add_argument("--" + f.name.replace("_", "-"), dest=f"cfg_{f.name}", metavar=f.type.upper())


def _config_from_args(args) -> RunConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return load_config(args.config, overrides)


def _need_file(path: str, what: str) -> Path:
    if not path:
        raise DataError(f"no {what} path given")
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what} file not found: {path}")
    return p


def _read(path, space, availability=None) -> Corpus:
    try:
        return read_conll(path, space, availability)
    except (ParseError, ValidationError, OSError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from None


def cmd_train(args) -> int:
    config = _config_from_args(args)
    train_path = _need_file(config.train, "training")
    dev_path = _need_file(config.dev, "dev")
    if not config.output:
        raise ConfigError("no output checkpoint path (--output)")
    types = config.type_list()
    if not types:
        try:
            types = scan_types([train_path, dev_path])
        except (OSError, UnicodeDecodeError) as exc:
            raise DataError(str(exc)) from None
        config = replace(config, types=",".join(types))
    space = build_label_space("BIO2", types)
    train_corpus = _read(train_path, space, args.train_availability)
    dev_corpus = _read(dev_path, space)
    embeddings = None
    if config.embeddings:
        try:
            embeddings = load_embeddings(_need_file(config.embeddings, "embedding"), config.word_embed_dim, config.seed)
        except (ParseError, OSError) as exc:
            raise DataError(f"{config.embeddings}: {exc}") from None
    vocab = Vocabulary.build([train_corpus, dev_corpus], embeddings)
    model = build_model(config.model_config(), space, vocab, config.seed, embeddings)
    log_path = Path(config.output + ".log")
    with log_path.open("w", encoding="utf-8") as log:
        log.write("epoch\tloss\tdev_f1\n")

        def on_epoch(record):
            log.write(record.line() + "\n")
            log.flush()
            if not args.quiet:
                print(record.line(), flush=True)

        result = train(model, train_corpus, dev_corpus, config.train_config(), on_epoch)
    facts = {"best_epoch": result.best_epoch, "best_dev_f1": f"{result.best_dev_f1:.6f}", "epochs_run": len(result.history)}
    save_checkpoint(config.output, model, config, facts)
    Path(config.output + ".manifest").write_text("\n".join(manifest_lines(replace(config, types=",".join(types)), facts)) + "\n")
    print(f"best dev F1 {result.best_dev_f1:.4f} at epoch {result.best_epoch}; checkpoint {config.output}")
    return EXIT_OK


def _load(path):
    if not Path(path).is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_eval(args) -> int:
    model, _, _ = _load(args.checkpoint)
    mode = EvalMode.parse(args.mode)
    if mode is not EvalMode.FULL and not model.variant.modular:
        raise ConfigError(f"{model.variant.value} has no head for {mode.value} evaluation")
    corpus = _read(_need_file(args.test, "test"), model.eval_space)
    sents = list(corpus)
    if mode is EvalMode.FULL:
        if not corpus.fully_labeled:
            raise DataError("Full evaluation needs fully labeled data")
        gold = [s.full_labels() for s in sents]
        pred = model.predict(sents)
    elif mode is EvalMode.SEG:
        if not all(s.has_seg for s in sents):
            raise DataError("SegOnly evaluation needs segmentation labels")
        gold = [s.seg_labels() for s in sents]
        pred = [seg_to_bio2(p) for p in model.predict_partial(sents, "seg")]
    else:
        if not all(s.has_typ for s in sents):
            raise DataError("TypeOnly evaluation needs type labels")
        gold = [s.type_labels() for s in sents]
        pred = model.predict_partial(sents, "typ")
    result = span_f1(gold, pred, mode)
    print(f"mode={mode.value}\tsentences={len(sents)}")
    print(result.report())
    return EXIT_OK


def cmd_predict(args) -> int:
    model, _, _ = _load(args.checkpoint)
    corpus = _read(_need_file(args.input, "input"), model.eval_space, Availability.NONE)
    preds = model.predict(list(corpus))
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for sent, labels in zip(corpus, preds):
            for tok, y in zip(sent.tokens, labels):
                out.write(f"{tok.surface} {y}\n")
            out.write("\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _floats(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"bad number list {text!r}") from None


def _ints(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"bad integer list {text!r}") from None


def cmd_experiment(args) -> int:
    config = _config_from_args(args)
    spec = ExperimentSpec(
        Protocol.parse(args.protocol), _floats(args.grid), args.partial, _ints(args.seeds), args.full_fraction
    )
    spec.validate()
    source = None
    if config.train:
        types = config.type_list() or scan_types([_need_file(p, "data") for p in (config.train, config.dev, config.test)])
        space = build_label_space("BIO2", types)
        pool, dev, test = (_read(_need_file(p, "data"), space) for p in (config.train, config.dev, config.test))
        if args.source:
            source = _read(_need_file(args.source, "source"), space)
    else:
        synth = SynthSpec(n_sentences=args.synthetic_sentences, lexicon_seed=args.synthetic_seed)
        corpus = generate_synthetic_corpus(synth, args.synthetic_seed)
        n = len(corpus)
        n_eval = max(1, n // 6)
        pool = corpus.subset(range(n - 2 * n_eval))
        dev = corpus.subset(range(n - 2 * n_eval, n - n_eval))
        test = corpus.subset(range(n - n_eval, n))
        if spec.protocol is Protocol.DOMAIN_TRANSFER:
            other = replace(synth, lexicon_seed=args.synthetic_seed + 1, n_sentences=len(pool))
            source = generate_synthetic_corpus(other, args.synthetic_seed + 1)
    rows = run_experiment(spec, config, pool, dev, test, source)
    text = format_rows(rows)
    if args.output_table:
        Path(args.output_table).write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verify_mod.run_verification()
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("verification failed: " + ", ".join(failed))
        return EXIT_VERIFY
    print("all checks passed")
    return EXIT_OK


def cmd_defaults(args) -> int:
    print(default_manifest(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modcrf", description="Modular BiLSTM-CRF taggers with partial labels.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint, log and manifest")
    _add_config_flags(p)
    p.add_argument("--train-availability", choices=[a.value for a in Availability if a is not Availability.NONE])
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on labeled data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--mode", default="Full", choices=[m.value for m in EvalMode])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="tag unlabeled CoNLL-style input")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("experiment", help="run a weak-supervision protocol")
    _add_config_flags(p)
    p.add_argument("--protocol", default="PartialCurve", choices=[m.value for m in Protocol])
    p.add_argument("--grid", default="0,0.2,0.4,0.6,0.8")
    p.add_argument("--partial", default="SegOnly", choices=["SegOnly", "TypeOnly"])
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--full-fraction", type=float, default=0.2)
    p.add_argument("--source", help="out-of-domain corpus for DomainTransfer")
    p.add_argument("--synthetic-sentences", type=int, default=300)
    p.add_argument("--synthetic-seed", type=int, default=0)
    p.add_argument("--output-table", help="write the results table here as well")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("verify", help="run the oracle suite")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("defaults", help="print the default manifest")
    p.set_defaults(func=cmd_defaults)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
