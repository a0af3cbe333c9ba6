"""Command-line surface.

Subcommands: pinyinize, make-data, pretrain-data, train, eval, correct,
dump-attn. Exit codes: 0 success, 1 usage/config, 2 data, 3 numeric.
Setting DORM_DETERMINISTIC=1 forces deterministic numeric mode process-wide.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import (
    CorruptionPolicy,
    DataError,
    make_pretrain_corpus,
    make_toy_corpus,
    read_dataset,
)
from .evaluator import EvalError, evaluate, phonetic_recall
from .model import (
    CheckpointError,
    ConfigError,
    correct_sentences,
    dump_attention,
    load_checkpoint,
    params_from_tensors,
    save_checkpoint,
)
from .numeric import NumericError
from .pinyin import PinyinError, TableError, default_table_path, load_pinyin_table
from .textcodec import CharVocab, CodecError, PhonemeVocab, build_char_vocab
from .trainer import (
    TrainError,
    configs_from_dict,
    parse_config_file,
    run_training,
)

USAGE_EXIT, DATA_EXIT, NUMERIC_EXIT = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the documented code is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _check_text(text: str, origin: str) -> str:
    """Reject surrogate code points early with a data error.

    Malformed UTF-8 on argv or stdin arrives via surrogateescape and would
    otherwise surface as an encode crash deep inside the pipeline.
    """
    try:
        text.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise DataError(f"{origin}: not valid UTF-8 text ({exc})") from exc
    return text


def _read_lines(path: str | None) -> list[str]:
    if path is None:
        return [_check_text(line, "stdin").rstrip("\n") for line in sys.stdin]
    return Path(path).read_text(encoding="utf-8").splitlines()


def _load_assets(args) -> tuple[CharVocab, PhonemeVocab, object]:
    table_path = getattr(args, "table", None) or default_table_path()
    table = load_pinyin_table(table_path)
    cv = CharVocab.load(args.vocab)
    return cv, PhonemeVocab(), table


def _load_model(args):
    cfg, tensors, manifest = load_checkpoint(args.checkpoint)
    return params_from_tensors(cfg, tensors), cfg, manifest


def cmd_pinyinize(args) -> int:
    table = load_pinyin_table(args.table)
    out = sys.stdout if args.out is None else open(args.out, "w", encoding="utf-8")
    try:
        if args.text is None:
            lines = _read_lines(args.input)
        else:
            lines = [_check_text(args.text, "--text")]
        for line in lines:
            for ch in line:
                syl = table.get(ch)
                if syl is None:
                    out.write(f"{ch}\t[NOPY]\t[NOPY]\t-\n")
                else:
                    out.write(f"{ch}\t{syl.initial}\t{syl.final}\t{syl.tone}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_make_data(args) -> int:
    paths = make_toy_corpus(
        args.out,
        vocab_size=args.vocab_size,
        n_examples=args.examples,
        length_range=(args.min_len, args.max_len),
        seed=args.seed,
        n_test=args.test_examples,
    )
    cv = build_char_vocab([paths["train"], paths["test"]])
    vocab_path = Path(args.out) / "vocab.txt"
    cv.save(vocab_path)
    for key in ("train", "test", "table", "manifest"):
        print(f"{key}: {paths[key]}")
    print(f"vocab: {vocab_path}")
    return 0


def cmd_pretrain_data(args) -> int:
    table = load_pinyin_table(args.table or default_table_path())
    cv = CharVocab.load(args.vocab)
    policy = CorruptionPolicy(
        select_rate=args.select_rate,
        p_confusion=args.p_confusion,
        p_random=args.p_random,
        p_keep=args.p_keep,
        seed=args.seed,
    )
    count = make_pretrain_corpus(
        args.raw, args.out, policy, table, cv, max_fragment=args.max_fragment
    )
    print(f"wrote {count} fragments to {args.out}")
    return 0


def cmd_train(args) -> int:
    cv, pv, table = _load_assets(args)
    raw = parse_config_file(args.config) if args.config else {}
    mcfg, tcfg = configs_from_dict(raw, vocab_size=len(cv), pv=pv)
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)
    if args.mode is not None:
        tcfg = replace(tcfg, mode=args.mode)
    result = run_training(
        args.train, args.dev, mcfg, tcfg, args.out, cv, pv, table,
        resume=args.resume,
    )
    print(f"steps: {result.steps}")
    print(f"best dev correction F1: {result.best_f1:.4f}")
    print(f"best checkpoint: {result.best_checkpoint}")
    print(f"log: {result.log_path}")
    return 0


def cmd_eval(args) -> int:
    cv, pv, table = _load_assets(args)
    params, mcfg, _ = _load_model(args)
    examples = read_dataset(args.test)
    predictions = correct_sentences(
        [ex.source for ex in examples], params, mcfg, cv, pv, table
    )
    triples = [
        (ex.source, ex.target, pred) for ex, pred in zip(examples, predictions)
    ]
    report = evaluate(triples, postproc13=args.postproc13)
    extra = {"phonetic_recall": phonetic_recall(triples, table)}
    text = report.to_text() + f"phonetic_recall: {extra['phonetic_recall']}\n"
    record = report.to_dict() | extra
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        Path(str(args.out) + ".json").write_text(
            json.dumps(record, sort_keys=True) + "\n", encoding="utf-8"
        )
    sys.stdout.write(text)
    return 0


def cmd_correct(args) -> int:
    cv, pv, table = _load_assets(args)
    params, mcfg, _ = _load_model(args)
    lines = _read_lines(args.input)
    corrected = []
    for line in lines:
        if line:
            corrected.append(
                correct_sentences([line], params, mcfg, cv, pv, table)[0]
            )
        else:
            corrected.append("")
    payload = "".join(line + "\n" for line in corrected)
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)
    return 0


def cmd_dump_attn(args) -> int:
    text = _check_text(args.text, "--text")
    cv, pv, table = _load_assets(args)
    params, mcfg, _ = _load_model(args)
    layers = dump_attention(text, params, mcfg, cv, pv, table)
    n = len(text)
    tensors = {}
    for l, att in enumerate(layers):
        block = att[:, n:, :n]
        if not (block == 0).all():
            raise NumericError(
                f"layer {l}: pinyin-to-text attention block is not all zero"
            )
        tensors[f"attn.layer{l}"] = att.astype(np.float32)
    save_checkpoint(args.out, mcfg, tensors, {"sentence": text, "n": n})
    print(f"wrote {len(layers)} layers of ({mcfg.heads}, {2*n}, {2*n}) weights "
          f"to {args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="pinspell", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pinyinize", help="per-character syllable listing")
    p.add_argument("--table", required=True, help="pinyin table TSV")
    p.add_argument("--text", help="inline text (default: read stdin)")
    p.add_argument("--input", help="input file instead of stdin")
    p.add_argument("--out", help="output file instead of stdout")
    p.set_defaults(func=cmd_pinyinize)

    p = sub.add_parser("make-data", help="generate the synthetic toy task")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--vocab-size", type=int, default=100)
    p.add_argument("--examples", type=int, default=64)
    p.add_argument("--test-examples", type=int, default=16)
    p.add_argument("--min-len", type=int, default=8)
    p.add_argument("--max-len", type=int, default=16)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("pretrain-data", help="corrupt raw text into a dataset")
    p.add_argument("raw", nargs="+", help="raw UTF-8 text files")
    p.add_argument("--out", required=True, help="output dataset file")
    p.add_argument("--table", help="pinyin table (default: bundled)")
    p.add_argument("--vocab", required=True, help="character vocab file")
    p.add_argument("--max-fragment", type=int, default=256)
    p.add_argument("--select-rate", type=float, default=0.15)
    p.add_argument("--p-confusion", type=float, default=0.80)
    p.add_argument("--p-random", type=float, default=0.10)
    p.add_argument("--p-keep", type=float, default=0.10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pretrain_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--train", required=True, help="training dataset TSV")
    p.add_argument("--dev", required=True, help="dev dataset TSV")
    p.add_argument("--vocab", required=True, help="character vocab file")
    p.add_argument("--table", help="pinyin table (default: bundled)")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--mode", choices=("pretrain", "finetune"),
                   help="pretrain forces beta=gamma=0")
    p.add_argument("--resume", action="store_true",
                   help="continue from last.ckpt in --out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a test set")
    p.add_argument("--test", required=True, help="test dataset TSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--table", help="pinyin table (default: bundled)")
    p.add_argument("--postproc13", action="store_true",
                   help="copy source at 的/得/地 positions before scoring")
    p.add_argument("--out", help="write report here (plus .json sidecar)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("correct", help="correct sentences (stdin to stdout)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--table", help="pinyin table (default: bundled)")
    p.add_argument("--input", help="input file instead of stdin")
    p.add_argument("--out", help="output file instead of stdout")
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("dump-attn", help="write attention weights for a sentence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--table", help="pinyin table (default: bundled)")
    p.add_argument("--out", required=True, help="output container file")
    p.set_defaults(func=cmd_dump_attn)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TrainError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (DataError, CodecError, PinyinError, TableError, EvalError,
            CheckpointError, FileNotFoundError, OSError, UnicodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NUMERIC_EXIT


if __name__ == "__main__":
    sys.exit(main())
