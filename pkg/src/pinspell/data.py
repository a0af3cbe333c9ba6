"""Dataset I/O, synthetic corpora, and the pretraining corruption procedure.

Datasets are UTF-8 files of `source\ttarget` lines with equal-length halves.
Pretraining data is manufactured by corrupting clean text: a fixed fraction
of the Chinese characters in each fragment is selected, and each selected
position is replaced by a homophone (mostly), a random character, or kept.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .pinyin import PinyinTable, load_pinyin_table
from .textcodec import CharVocab


class DataError(ValueError):
    """Malformed dataset content; messages carry line numbers."""


def is_chinese_char(ch: str) -> bool:
    return 0x4E00 <= ord(ch) <= 0x9FFF


@dataclass(frozen=True)
class CorrectionExample:
    source: str
    target: str

    def __post_init__(self):
        if len(self.source) != len(self.target):
            raise DataError(
                f"source/target length mismatch: "
                f"{len(self.source)} vs {len(self.target)}"
            )

    def error_positions(self) -> tuple[int, ...]:
        return tuple(
            i for i, (a, b) in enumerate(zip(self.source, self.target)) if a != b
        )


@dataclass(frozen=True)
class CorruptionPolicy:
    select_rate: float = 0.15
    p_confusion: float = 0.80
    p_random: float = 0.10
    p_keep: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.select_rate <= 1.0:
            raise DataError(f"select_rate {self.select_rate} outside [0, 1]")
        probs = (self.p_confusion, self.p_random, self.p_keep)
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise DataError(f"branch probabilities {probs} must sum to 1")

    def to_dict(self) -> dict:
        return {
            "select_rate": self.select_rate,
            "p_confusion": self.p_confusion,
            "p_random": self.p_random,
            "p_keep": self.p_keep,
            "seed": self.seed,
        }


def read_dataset(path: str | Path) -> list[CorrectionExample]:
    examples: list[CorrectionExample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(
                    f"{path}: line {lineno}: expected source<TAB>target, "
                    f"got {len(parts)} fields"
                )
            source, target = parts
            if len(source) != len(target):
                raise DataError(
                    f"{path}: line {lineno}: length mismatch "
                    f"({len(source)} vs {len(target)})"
                )
            examples.append(CorrectionExample(source, target))
    if not examples:
        raise DataError(f"{path}: empty dataset")
    return examples


def write_dataset(path: str | Path, examples: Iterable[CorrectionExample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(f"{ex.source}\t{ex.target}\n")


@dataclass(frozen=True)
class DatasetStats:
    sentences: int
    errors: int
    avg_length: float


def dataset_stats(examples: Sequence[CorrectionExample]) -> DatasetStats:
    sentences = len(examples)
    errors = sum(len(ex.error_positions()) for ex in examples)
    avg = sum(len(ex.source) for ex in examples) / sentences if sentences else 0.0
    return DatasetStats(sentences=sentences, errors=errors, avg_length=avg)


def _chinese_pool(vocab) -> tuple[str, ...]:
    chars = vocab.tokens if isinstance(vocab, CharVocab) else vocab
    return tuple(sorted(ch for ch in chars if len(ch) == 1 and is_chinese_char(ch)))


def corrupt_fragment_traced(
    clean: str,
    policy: CorruptionPolicy,
    table: PinyinTable,
    vocab,
    rng: np.random.Generator | None = None,
) -> tuple[CorrectionExample, tuple[tuple[int, str], ...]]:
    """Corrupt one fragment and report which branch fired per selection.

    Selection: ceil(select_rate * n_chinese) Chinese positions, uniform
    without replacement. Branches per selected position: a homophone from
    the confusion set (p_confusion), a uniform random Chinese vocab
    character (p_random), or unchanged (p_keep). An empty confusion set
    falls through to the random branch so the corruption rate holds.
    Non-Chinese positions are never touched.

    Returns (example with source=corrupted/target=clean, ((position,
    branch-name), ...)).
    """
    if rng is None:
        rng = np.random.default_rng(policy.seed)
    chinese_positions = [i for i, ch in enumerate(clean) if is_chinese_char(ch)]
    if not chinese_positions:
        return CorrectionExample(clean, clean), ()
    n_pick = int(np.ceil(policy.select_rate * len(chinese_positions)))
    if n_pick == 0:
        return CorrectionExample(clean, clean), ()
    picked = rng.choice(len(chinese_positions), size=n_pick, replace=False)
    pool = _chinese_pool(vocab)

    chars = list(clean)
    trace: list[tuple[int, str]] = []
    for pos in sorted(chinese_positions[k] for k in picked):
        ch = clean[pos]
        draw = rng.random()
        branch = (
            "confusion"
            if draw < policy.p_confusion
            else "random"
            if draw < policy.p_confusion + policy.p_random
            else "keep"
        )
        if branch == "confusion":
            candidates = table.confusion_candidates(ch) if ch in table else ()
            if not candidates:
                branch = "random"
            else:
                chars[pos] = candidates[int(rng.integers(len(candidates)))]
        if branch == "random":
            if pool:
                chars[pos] = pool[int(rng.integers(len(pool)))]
        trace.append((pos, branch))
    return CorrectionExample("".join(chars), clean), tuple(trace)


def corrupt_fragment(
    clean: str,
    policy: CorruptionPolicy,
    table: PinyinTable,
    vocab,
    rng: np.random.Generator | None = None,
) -> CorrectionExample:
    return corrupt_fragment_traced(clean, policy, table, vocab, rng)[0]


_SENTENCE_ENDS = "。！？；!?;"


def split_fragments(text: str, max_fragment: int = 256) -> list[str]:
    """Greedy cut at sentence-final punctuation, hard cut when none fits."""
    fragments: list[str] = []
    rest = text
    while len(rest) > max_fragment:
        window = rest[:max_fragment]
        cut = max(window.rfind(p) for p in _SENTENCE_ENDS)
        cut = cut + 1 if cut >= 0 else max_fragment
        fragments.append(rest[:cut])
        rest = rest[cut:]
    if rest:
        fragments.append(rest)
    return fragments


def make_pretrain_corpus(
    raw_paths: Sequence[str | Path],
    out_path: str | Path,
    policy: CorruptionPolicy,
    table: PinyinTable,
    vocab,
    max_fragment: int = 256,
) -> int:
    """Cut raw text into fragments, corrupt each, write a dataset file.

    Each fragment gets its own rng stream derived from (policy.seed,
    fragment index), so output is deterministic regardless of how the
    fragment loop is scheduled. Returns the number of examples written.
    """
    pool = _chinese_pool(vocab)
    fragments: list[str] = []
    for path in raw_paths:
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line:
                fragments.extend(split_fragments(line, max_fragment))
    examples = []
    for idx, frag in enumerate(fragments):
        rng = np.random.default_rng(np.random.SeedSequence([policy.seed, idx]))
        examples.append(corrupt_fragment(frag, policy, table, pool, rng))
    if not examples:
        raise DataError("no fragments found in raw corpus")
    write_dataset(out_path, examples)
    return len(examples)


# Sounds for the synthetic toy language; chars cycling through this list get
# tones 1..4, so each sound forms a homophone/confusion group.
_TOY_SOUNDS = (
    "hu", "tu", "ma", "an", "zhuang", "lüe", "de", "shi", "xi", "qu",
    "zhong", "wen", "bei", "pa", "mo", "fo", "da", "ti", "ne", "lu",
    "gan", "ke", "hao", "ji", "qi",
)


def make_toy_corpus(
    out_dir: str | Path,
    vocab_size: int = 100,
    n_examples: int = 64,
    length_range: tuple[int, int] = (8, 16),
    seed: int = 7,
    policy: CorruptionPolicy | None = None,
    n_test: int = 16,
) -> dict[str, Path]:
    """Generate a self-contained synthetic correction task.

    Characters chr(0x4E00+i) are assigned syllables cycling through a fixed
    sound list with rotating tones, so homophone groups exist and the
    corruption procedure behaves as on real text. Writes train.tsv,
    test.tsv, table.tsv, and manifest.json into out_dir.
    """
    if min(vocab_size, n_examples, length_range[0]) < 1:
        raise DataError("toy corpus parameters must be positive")
    if length_range[0] > length_range[1]:
        raise DataError(f"bad length range {length_range}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    policy = policy or CorruptionPolicy(seed=seed)

    chars = [chr(0x4E00 + i) for i in range(vocab_size)]
    char_map = {
        ch: f"{_TOY_SOUNDS[i % len(_TOY_SOUNDS)]}{1 + (i // len(_TOY_SOUNDS)) % 4}"
        for i, ch in enumerate(chars)
    }
    table_path = out_dir / "table.tsv"
    table_path.write_text(
        "".join(f"{ch}\t{syl}\n" for ch, syl in char_map.items()), encoding="utf-8"
    )
    table = load_pinyin_table(table_path)

    rng = np.random.default_rng(seed)
    lo, hi = length_range

    def sample_split(count: int, stream: np.random.Generator):
        examples = []
        for idx in range(count):
            n = int(stream.integers(lo, hi + 1))
            clean = "".join(chars[k] for k in stream.integers(0, vocab_size, size=n))
            frag_rng = np.random.default_rng(
                np.random.SeedSequence([policy.seed, int(stream.integers(1 << 30))])
            )
            examples.append(corrupt_fragment(clean, policy, table, chars, frag_rng))
        return examples

    train_path = out_dir / "train.tsv"
    test_path = out_dir / "test.tsv"
    write_dataset(train_path, sample_split(n_examples, rng))
    write_dataset(test_path, sample_split(n_test, rng))

    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps(
            {
                "seed": seed,
                "policy": policy.to_dict(),
                "vocab_size": vocab_size,
                "n_examples": n_examples,
                "n_test": n_test,
                "length_range": list(length_range),
                "char_map": char_map,
                "files": {
                    "train": train_path.name,
                    "test": test_path.name,
                    "table": table_path.name,
                },
            },
            ensure_ascii=False,
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    return {
        "train": train_path,
        "test": test_path,
        "table": table_path,
        "manifest": manifest_path,
    }
