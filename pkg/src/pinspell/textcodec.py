"""Vocabularies and phonetics-aware sequence assembly.

An example of length n becomes a model sequence of length 2n: the n
characters followed by n pinyin slots, one per character, sharing the
character's position id. A separation mask keeps pinyin slots from attending
back into the text half, so their states carry phonetic information only.
Training labels are the target characters duplicated across both halves.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .numeric import NEG_INF
from .pinyin import EMPTY_INITIAL, FINALS, INITIALS, PinyinTable, char_to_syllable

PAD = "[PAD]"
UNK = "[UNK]"
NOPY = "[NOPY]"  # phoneme slot for characters without a pinyin reading


class CodecError(ValueError):
    """Vocabulary or sequence-assembly contract violation."""


class EncodeError(CodecError):
    """An example cannot be encoded (length mismatch, empty source...)."""


class TruncationError(EncodeError):
    """Source exceeds the length budget; never truncated silently."""


class CharVocab:
    """Dense character ids with [PAD]=0 and [UNK]=1 reserved."""

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if len(tokens) < 2 or tokens[0] != PAD or tokens[1] != UNK:
            raise CodecError(f"vocab must start with {PAD}, {UNK}")
        if len(set(tokens)) != len(tokens):
            raise CodecError("vocab contains duplicate tokens")
        self.tokens = tokens
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, ch: str) -> bool:
        return ch in self._ids

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    def encode_char(self, ch: str) -> int:
        return self._ids.get(ch, 1)

    def encode_text(self, text: str) -> np.ndarray:
        return np.array([self.encode_char(ch) for ch in text], dtype=np.int64)

    def decode_id(self, idx: int) -> str:
        if not 0 <= idx < len(self.tokens):
            raise CodecError(f"id {idx} outside vocab of size {len(self.tokens)}")
        return self.tokens[idx]

    @classmethod
    def from_counts(cls, counts: Counter) -> "CharVocab":
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], ord(kv[0])))
        return cls([PAD, UNK] + [ch for ch, _ in ranked])

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CharVocab":
        text = Path(path).read_text(encoding="utf-8")
        tokens = text.splitlines()
        if not tokens:
            raise CodecError(f"empty vocab file: {path}")
        return cls(tokens)


def build_char_vocab(
    corpus_paths: Iterable[str | Path], min_count: int = 1
) -> CharVocab:
    """Count characters across raw-text files and keep frequent ones.

    Whitespace (including the tabs of dataset files) is structural and never
    enters the vocabulary. Ordering is frequency descending, ties broken by
    code point, so equal corpora produce byte-identical vocab files.
    """
    counts: Counter = Counter()
    for path in corpus_paths:
        for ch in Path(path).read_text(encoding="utf-8"):
            if not ch.isspace():
                counts[ch] += 1
    if not counts:
        raise CodecError("no characters found in corpus")
    kept = Counter({ch: c for ch, c in counts.items() if c >= min_count})
    return CharVocab.from_counts(kept)


class PhonemeVocab:
    """Dense ids for syllable initials and finals, [NOPY]=0 in both."""

    def __init__(self):
        self.initials = (NOPY, EMPTY_INITIAL) + INITIALS
        self.finals = (NOPY,) + FINALS
        self._initial_ids = {tok: i for i, tok in enumerate(self.initials)}
        self._final_ids = {tok: i for i, tok in enumerate(self.finals)}

    @property
    def n_initials(self) -> int:
        return len(self.initials)

    @property
    def n_finals(self) -> int:
        return len(self.finals)

    @property
    def nopy_id(self) -> int:
        return 0

    def initial_id(self, token: str) -> int:
        if token not in self._initial_ids:
            raise CodecError(f"unknown initial: {token!r}")
        return self._initial_ids[token]

    def final_id(self, token: str) -> int:
        if token not in self._final_ids:
            raise CodecError(f"unknown final: {token!r}")
        return self._final_ids[token]

    def encode_syllable(self, syllable) -> tuple[int, int]:
        """Map a Syllable (or None for unpronounceable) to (initial, final) ids."""
        if syllable is None:
            return 0, 0
        return self.initial_id(syllable.initial), self.final_id(syllable.final)


def build_separation_mask(n: int) -> np.ndarray:
    """Additive 2n x 2n mask blocking pinyin-to-text attention.

    Rows n..2n-1 (pinyin queries) get the -1e9 surrogate at columns 0..n-1
    (text keys); everything else is 0. The surrogate underflows softmax to an
    exactly zero weight.
    """
    if n < 1:
        raise CodecError(f"separation mask needs n >= 1, got {n}")
    mask = np.zeros((2 * n, 2 * n), dtype=np.float32)
    mask[n:, :n] = NEG_INF
    return mask


@dataclass(frozen=True)
class PhoneticsAwareBatch:
    """One encoded example: text half plus aligned pinyin half.

    Arrays of length n: char_ids, initial_ids, final_ids. Arrays of length
    2n: positions (1-based, repeated across halves), segments (0 text,
    1 pinyin), labels_z (target ids duplicated; None at inference). The mask
    is the 2n x 2n separation mask.
    """

    char_ids: np.ndarray
    initial_ids: np.ndarray
    final_ids: np.ndarray
    positions: np.ndarray
    segments: np.ndarray
    mask: np.ndarray
    labels_z: np.ndarray | None

    @property
    def n(self) -> int:
        return self.char_ids.shape[0]


def encode_example(
    ex,
    cv: CharVocab,
    pv: PhonemeVocab,
    table: PinyinTable,
    with_labels: bool = True,
    max_len: int = 140,
) -> PhoneticsAwareBatch:
    """Assemble the phonetics-aware sequence for one source/target pair.

    ``ex`` is anything with ``source`` and ``target`` string attributes.
    Characters without a table reading (punctuation, rare symbols) get
    [NOPY] placeholders for both phonemes.
    """
    source = ex.source
    n = len(source)
    if n == 0:
        raise EncodeError("empty source sentence")
    if n > max_len:
        raise TruncationError(f"source length {n} exceeds max_len {max_len}")
    if with_labels:
        target = ex.target
        if target is None or len(target) != n:
            raise EncodeError(
                f"source/target length mismatch: {n} vs "
                f"{'none' if target is None else len(target)}"
            )

    initial_ids = np.empty(n, dtype=np.int64)
    final_ids = np.empty(n, dtype=np.int64)
    for i, ch in enumerate(source):
        initial_ids[i], final_ids[i] = pv.encode_syllable(char_to_syllable(table, ch))

    pos = np.arange(1, n + 1, dtype=np.int64)
    labels_z = None
    if with_labels:
        target_ids = cv.encode_text(target)
        labels_z = np.concatenate([target_ids, target_ids])
    return PhoneticsAwareBatch(
        char_ids=cv.encode_text(source),
        initial_ids=initial_ids,
        final_ids=final_ids,
        positions=np.concatenate([pos, pos]),
        segments=np.concatenate(
            [np.zeros(n, dtype=np.int64), np.ones(n, dtype=np.int64)]
        ),
        mask=build_separation_mask(n),
        labels_z=labels_z,
    )


@dataclass(frozen=True)
class PaddedBatch:
    """Examples padded to a common length N for dense computation.

    Layout per example: text slots 0..N-1, pinyin slots N..2N-1; real
    content occupies the first n of each half. Padded key columns are masked
    with -1e9 for every query and padded label slots carry -1 (loss-ignored).
    """

    char_ids: np.ndarray  # (B, N) int, PAD at padding
    initial_ids: np.ndarray  # (B, N) int, NOPY at padding
    final_ids: np.ndarray  # (B, N) int
    positions: np.ndarray  # (B, 2N) int, 0 at padding
    segments: np.ndarray  # (B, 2N) int
    mask: np.ndarray  # (B, 2N, 2N) float32 additive
    labels: np.ndarray | None  # (B, 2N) int, -1 ignored
    lengths: np.ndarray  # (B,) true n per example

    @property
    def batch_size(self) -> int:
        return self.char_ids.shape[0]

    @property
    def width(self) -> int:
        return self.char_ids.shape[1]

    def text_valid(self) -> np.ndarray:
        """(B, N) bool: True at real (unpadded) character positions."""
        return np.arange(self.width)[None, :] < self.lengths[:, None]


def pad_batch(examples: Sequence[PhoneticsAwareBatch]) -> PaddedBatch:
    if not examples:
        raise CodecError("cannot pad an empty batch")
    labelled = [ex.labels_z is not None for ex in examples]
    if any(labelled) and not all(labelled):
        raise CodecError("cannot mix labelled and unlabelled examples")
    B = len(examples)
    N = max(ex.n for ex in examples)

    char_ids = np.zeros((B, N), dtype=np.int64)
    initial_ids = np.zeros((B, N), dtype=np.int64)
    final_ids = np.zeros((B, N), dtype=np.int64)
    positions = np.zeros((B, 2 * N), dtype=np.int64)
    segments = np.zeros((B, 2 * N), dtype=np.int64)
    mask = np.zeros((B, 2 * N, 2 * N), dtype=np.float32)
    labels = np.full((B, 2 * N), -1, dtype=np.int64) if all(labelled) else None
    lengths = np.array([ex.n for ex in examples], dtype=np.int64)

    for b, ex in enumerate(examples):
        n = ex.n
        char_ids[b, :n] = ex.char_ids
        initial_ids[b, :n] = ex.initial_ids
        final_ids[b, :n] = ex.final_ids
        positions[b, :n] = ex.positions[:n]
        positions[b, N : N + n] = ex.positions[n:]
        segments[b, N : N + n] = 1
        mask[b, N:, :N] = NEG_INF  # pinyin queries never see text keys
        mask[b, :, n:N] = NEG_INF  # padded text keys
        mask[b, :, N + n :] = NEG_INF  # padded pinyin keys
        if labels is not None:
            labels[b, :n] = ex.labels_z[:n]
            labels[b, N : N + n] = ex.labels_z[n:]

    return PaddedBatch(
        char_ids=char_ids,
        initial_ids=initial_ids,
        final_ids=final_ids,
        positions=positions,
        segments=segments,
        mask=mask,
        labels=labels,
        lengths=lengths,
    )
