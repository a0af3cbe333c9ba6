"""Pinyin syllable decomposition, character lookup, and homophone sets.

A syllable splits into an initial (onset, possibly empty), a final (rime)
and a tone digit. Decomposition is orthographic: the initial is the longest
matching prefix from the standard 23-initial inventory and the remainder
must be a standard final, so re-concatenating initial and final always
reproduces the toneless spelling.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

EMPTY_INITIAL = "∅"

INITIALS = (
    "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h",
    "j", "q", "x", "zh", "ch", "sh", "r", "z", "c", "s", "y", "w",
)
# zh/ch/sh must win over z/c/s during prefix matching
_INITIALS_BY_LENGTH = tuple(sorted(INITIALS, key=len, reverse=True))

FINALS = (
    "a", "ai", "an", "ang", "ao", "e", "ei", "en", "eng", "er",
    "i", "ia", "ian", "iang", "iao", "ie", "in", "ing", "iong", "iu",
    "o", "ong", "ou", "u", "ua", "uai", "uan", "uang", "ue", "ui", "un", "uo",
    "ü", "üe",
)
_FINALS_SET = frozenset(FINALS)

_ASSET_PACKAGE = "pinspell.assets"
TABLE_ASSET = "pinyin_table.tsv"
INVENTORY_ASSET = "syllables.txt"


class PinyinError(ValueError):
    """Base class for pinyin parsing and table errors."""


class DecomposeError(PinyinError):
    """Raised when a string is not a valid pinyin syllable."""


class TableError(PinyinError):
    """Raised when a pinyin table file cannot be loaded."""


@dataclass(frozen=True)
class Syllable:
    """One pinyin syllable split into initial, final and tone (0 = neutral)."""

    initial: str
    final: str
    tone: int

    def toneless(self) -> str:
        onset = "" if self.initial == EMPTY_INITIAL else self.initial
        return onset + self.final

    @property
    def sound(self) -> tuple[str, str]:
        """(initial, final) with the tone erased; the homophone key."""
        return (self.initial, self.final)

    def __str__(self) -> str:
        return f"{self.toneless()}{self.tone}"


@lru_cache(maxsize=1)
def syllable_inventory() -> frozenset[str]:
    """The toneless syllables of standard Mandarin, from the shipped golden file."""
    text = resources.files(_ASSET_PACKAGE).joinpath(INVENTORY_ASSET).read_text("utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


def _normalize(text: str) -> str:
    return text.lower().replace("u:", "ü").replace("v", "ü")


def decompose(syllable_text: str) -> Syllable:
    """Split a pinyin string (optionally tone-numbered) into a Syllable.

    Accepts "v"/"u:" as aliases for "ü". Rejects strings whose toneless form
    is not a syllable of standard Mandarin.
    """
    s = _normalize(syllable_text)
    if not s:
        raise DecomposeError("empty syllable string")
    tone = 0
    if s[-1].isdigit():
        if s[-1] not in "01234":
            raise DecomposeError(f"bad tone digit in {syllable_text!r}")
        tone = int(s[-1])
        s = s[:-1]
    if not s or not all("a" <= c <= "z" or c == "ü" for c in s):
        raise DecomposeError(f"not a pinyin syllable: {syllable_text!r}")
    if s not in syllable_inventory():
        raise DecomposeError(f"unknown syllable: {syllable_text!r}")
    initial = EMPTY_INITIAL
    final = s
    for candidate in _INITIALS_BY_LENGTH:
        if s.startswith(candidate):
            initial, final = candidate, s[len(candidate):]
            break
    if not final:
        raise DecomposeError(f"syllable {syllable_text!r} has an empty final")
    if final not in _FINALS_SET:
        raise DecomposeError(f"no valid final in {syllable_text!r} (got {final!r})")
    return Syllable(initial, final, tone)


class PinyinTable:
    """Immutable character -> readings map with a homophone reverse index.

    The reverse index is keyed on the (initial, final) of each character's
    default (first-listed) reading, tones erased.
    """

    def __init__(self, readings: dict[str, tuple[Syllable, ...]]):
        self._readings = readings
        reverse: dict[tuple[str, str], list[str]] = {}
        for ch, sylls in readings.items():
            reverse.setdefault(sylls[0].sound, []).append(ch)
        self._reverse = {k: tuple(sorted(v)) for k, v in reverse.items()}

    def __len__(self) -> int:
        return len(self._readings)

    def __contains__(self, ch: str) -> bool:
        return ch in self._readings

    def characters(self) -> tuple[str, ...]:
        return tuple(sorted(self._readings))

    def readings(self, ch: str) -> tuple[Syllable, ...]:
        return self._readings.get(ch, ())

    def get(self, ch: str) -> Syllable | None:
        """Default reading of ``ch``, or None for characters not in the table."""
        sylls = self._readings.get(ch)
        return sylls[0] if sylls else None

    def homophones(self, sound: tuple[str, str]) -> tuple[str, ...]:
        """All characters whose default reading has this (initial, final)."""
        return self._reverse.get(sound, ())

    def confusion_candidates(self, ch: str) -> tuple[str, ...]:
        """Characters sharing ch's default (initial, final), excluding ch.

        Ordered by code point. Raises TableError for characters not in the
        table.
        """
        syll = self.get(ch)
        if syll is None:
            raise TableError(f"character {ch!r} not in pinyin table")
        return tuple(c for c in self._reverse[syll.sound] if c != ch)


def char_to_syllable(table: PinyinTable, ch: str) -> Syllable | None:
    """Default reading for ``ch``; None for characters outside the table."""
    return table.get(ch)


def load_pinyin_table(path: str | Path) -> PinyinTable:
    """Load a table file: one `<char>\\t<reading>[,<reading>...]` per line."""
    path = Path(path)
    readings: dict[str, tuple[Syllable, ...]] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise TableError(f"{path}:{lineno}: missing tab separator")
            ch, field = line.split("\t", 1)
            if len(ch) != 1:
                raise TableError(f"{path}:{lineno}: key must be a single character")
            if ch in readings:
                raise TableError(f"{path}:{lineno}: duplicate entry for {ch!r}")
            if not field:
                raise TableError(f"{path}:{lineno}: no readings listed")
            try:
                sylls = tuple(decompose(part) for part in field.split(","))
            except DecomposeError as exc:
                raise TableError(f"{path}:{lineno}: {exc}") from exc
            readings[ch] = sylls
    if not readings:
        raise TableError(f"{path}: empty pinyin table")
    return PinyinTable(readings)


def default_table_path() -> Path:
    """Path of the shipped full-coverage table asset."""
    return Path(str(resources.files(_ASSET_PACKAGE).joinpath(TABLE_ASSET)))


def default_inventory_path() -> Path:
    return Path(str(resources.files(_ASSET_PACKAGE).joinpath(INVENTORY_ASSET)))


@lru_cache(maxsize=1)
def load_default_table() -> PinyinTable:
    return load_pinyin_table(default_table_path())
