"""Overfit the desk-scale model on the synthetic toy task.

Generates a small toy corpus (default: 100 characters, 64 fragments of
length 8-16), trains for --steps optimizer steps through the standard
training loop, then scores the model on its own training set. A healthy
build memorizes the corpus: text-position token accuracy ~1.0 and
sentence-level correction F1 ~1.0 within 500 steps of CPU time.

Usage:
  python scripts/overfit_toy.py --out runs/overfit_toy
  python scripts/overfit_toy.py --steps 300 --lr 1e-3 --seed 5
"""
import argparse
import json
import math
import time
from pathlib import Path

from pinspell.data import make_toy_corpus, read_dataset
from pinspell.evaluator import evaluate
from pinspell.model import ModelConfig, correct_sentences, forward_phonetics
from pinspell.pinyin import load_pinyin_table
from pinspell.textcodec import CharVocab, PhonemeVocab, encode_example, pad_batch
from pinspell.trainer import TrainConfig, run_training


def token_accuracy(encoded, params, cfg, batch_size=32):
    correct = total = 0
    for start in range(0, len(encoded), batch_size):
        batch = pad_batch(encoded[start:start + batch_size])
        n = batch.width
        logits, _ = forward_phonetics(batch, params, cfg)
        labels = batch.labels[:, :n]
        pred = logits.data.argmax(-1)
        mask = labels != -1
        correct += int((pred[mask] == labels[mask]).sum())
        total += int(mask.sum())
    return correct / total


def main():
    ap = argparse.ArgumentParser(
        description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter
    )
    ap.add_argument("--out", default="runs/overfit_toy")
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--lr", type=float, default=2e-3)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--vocab-size", type=int, default=100)
    ap.add_argument("--examples", type=int, default=64)
    args = ap.parse_args()

    out = Path(args.out)
    paths = make_toy_corpus(out / "data", vocab_size=args.vocab_size,
                            n_examples=args.examples, length_range=(8, 16),
                            seed=7)
    table = load_pinyin_table(paths["table"])
    cv = CharVocab(["[PAD]", "[UNK]"] + list(table.characters()))
    pv = PhonemeVocab()
    mcfg = ModelConfig(vocab_size=len(cv))
    steps_per_epoch = math.ceil(args.examples / args.batch_size)
    tcfg = TrainConfig(
        epochs=math.ceil(args.steps / steps_per_epoch),
        batch_size=args.batch_size,
        peak_lr=args.lr,
        seed=args.seed,
        max_steps=args.steps,
    )

    t0 = time.time()
    result = run_training(paths["train"], paths["test"], mcfg, tcfg,
                          out / "run", cv, pv, table)
    elapsed = time.time() - t0

    examples = read_dataset(paths["train"])
    encoded = [encode_example(ex, cv, pv, table, max_len=mcfg.max_len)
               for ex in examples]
    acc = token_accuracy(encoded, result.params, mcfg)
    preds = correct_sentences([ex.source for ex in examples], result.params,
                              mcfg, cv, pv, table)
    report = evaluate([(ex.source, ex.target, p)
                       for ex, p in zip(examples, preds)])

    summary = {
        "steps": result.steps,
        "elapsed_sec": round(elapsed, 1),
        "train_token_accuracy": acc,
        "train_correction_f1": report.correction_f1,
        "train_detection_f1": report.detection_f1,
        "final_l_text": result.history[-1].losses.l_text,
        "final_l_joint": result.history[-1].losses.l_joint,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n",
                                      encoding="utf-8")
    for key, value in summary.items():
        print(f"{key}: {value}")
    print(f"log: {result.log_path}")


if __name__ == "__main__":
    main()
