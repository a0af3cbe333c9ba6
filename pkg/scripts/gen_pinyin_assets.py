#!/usr/bin/env python3
"""Regenerate the shipped pinyin assets from a raw readings dump.

Input: the TSV produced by dump_readings.js (char -> tone-numbered readings).
Output:
  src/pinspell/assets/pinyin_table.tsv  -- one character per line, readings
                                           with tone digits, default first
  src/pinspell/assets/syllables.txt     -- the toneless syllable inventory,
                                           one syllable per line, sorted

A reading survives only if it splits into a known initial (possibly empty)
plus a standard final. Interjection-only readings such as "m", "n" and "ng"
are dropped, and characters left without any reading are omitted. The
inventory file is the set of surviving toneless syllables.
"""
import re
import sys
from pathlib import Path

INITIALS = (
    "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h",
    "j", "q", "x", "zh", "ch", "sh", "r", "z", "c", "s", "y", "w",
)
FINALS = frozenset((
    "a", "ai", "an", "ang", "ao", "e", "ei", "en", "eng", "er",
    "i", "ia", "ian", "iang", "iao", "ie", "in", "ing", "iong", "iu",
    "o", "ong", "ou", "u", "ua", "uai", "uan", "uang", "ue", "ui", "un", "uo",
    "ü", "üe",
))
_BY_LENGTH = sorted(INITIALS, key=len, reverse=True)


def splits(toneless: str) -> bool:
    for ini in _BY_LENGTH:
        if toneless.startswith(ini):
            return toneless[len(ini):] in FINALS
    return toneless in FINALS


def main() -> None:
    raw = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("raw_readings.tsv")
    assets = Path(__file__).resolve().parent.parent / "src" / "pinspell" / "assets"
    assets.mkdir(parents=True, exist_ok=True)

    table_lines = []
    inventory: set[str] = set()
    dropped_chars = 0
    dropped_readings: set[str] = set()
    for line in raw.read_text(encoding="utf-8").splitlines():
        ch, readings_field = line.split("\t")
        kept = []
        for reading in readings_field.split(","):
            toneless = re.sub(r"[0-4]$", "", reading)
            if splits(toneless):
                if reading not in kept:
                    kept.append(reading)
                inventory.add(toneless)
            else:
                dropped_readings.add(toneless)
        if kept:
            table_lines.append(f"{ch}\t{','.join(kept)}")
        else:
            dropped_chars += 1

    (assets / "pinyin_table.tsv").write_text("\n".join(table_lines) + "\n", encoding="utf-8")
    (assets / "syllables.txt").write_text("\n".join(sorted(inventory)) + "\n", encoding="utf-8")
    print(f"characters kept: {len(table_lines)} (dropped {dropped_chars})")
    print(f"inventory size:  {len(inventory)}")
    print(f"dropped readings: {sorted(dropped_readings)}")


if __name__ == "__main__":
    main()
