"""Sentence-level detection/correction metrics and error accounting.

Conventions: a sentence is predicted-positive when the prediction differs
from the source anywhere; detection credits a sentence only when the
predicted error-position set equals the gold set exactly; correction credits
only exact sentence matches. Zero denominators yield 0, not NaN.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from .pinyin import PinyinTable


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class EvalReport:
    detection_precision: float
    detection_recall: float
    detection_f1: float
    correction_precision: float
    correction_recall: float
    correction_f1: float
    overcorrections: int
    undercorrections: int
    sentences: int
    with_errors: int
    predicted_positive: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_text(self) -> str:
        lines = [f"{key}: {value}" for key, value in self.to_dict().items()]
        return "\n".join(lines) + "\n"


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _ratio(num: int, den: int) -> float:
    return num / den if den > 0 else 0.0


def postprocess_sighan13(source: str, prediction: str) -> str:
    """Ignore predictions at 的/得/地 positions: copy the source character.

    The rule keys on the source character alone, so even positions the gold
    standard corrects are reverted. Idempotent.
    """
    if len(source) != len(prediction):
        raise EvalError(
            f"length mismatch: {len(source)} vs {len(prediction)}"
        )
    return "".join(
        s if s in "的得地" else p for s, p in zip(source, prediction)
    )


def evaluate(
    triples: Sequence[tuple[str, str, str]], postproc13: bool = False
) -> EvalReport:
    """Score (source, gold, prediction) triples at sentence level.

    With ``postproc13`` the SIGHAN13 rule rewrites each prediction first.
    """
    sentences = len(triples)
    with_errors = 0
    predicted_positive = 0
    detection_tp = 0
    correction_tp = 0
    overcorrections = 0
    undercorrections = 0

    for idx, (source, gold, prediction) in enumerate(triples):
        if len(source) != len(gold) or len(source) != len(prediction):
            raise EvalError(
                f"sentence {idx}: lengths differ "
                f"({len(source)}/{len(gold)}/{len(prediction)})"
            )
        if postproc13:
            prediction = postprocess_sighan13(source, prediction)
        gold_set = {i for i, (x, y) in enumerate(zip(source, gold)) if x != y}
        pred_set = {i for i, (x, p) in enumerate(zip(source, prediction)) if x != p}
        if gold_set:
            with_errors += 1
        if pred_set:
            predicted_positive += 1
        if gold_set and pred_set == gold_set:
            detection_tp += 1
        if gold_set and prediction == gold:
            correction_tp += 1
        for x, y, p in zip(source, gold, prediction):
            if x == y and p != y:
                overcorrections += 1
            elif x != y and p != y:
                undercorrections += 1

    dp = _ratio(detection_tp, predicted_positive)
    dr = _ratio(detection_tp, with_errors)
    cp = _ratio(correction_tp, predicted_positive)
    cr = _ratio(correction_tp, with_errors)
    return EvalReport(
        detection_precision=dp,
        detection_recall=dr,
        detection_f1=_f1(dp, dr),
        correction_precision=cp,
        correction_recall=cr,
        correction_f1=_f1(cp, cr),
        overcorrections=overcorrections,
        undercorrections=undercorrections,
        sentences=sentences,
        with_errors=with_errors,
        predicted_positive=predicted_positive,
    )


def phonetic_recall(
    triples: Sequence[tuple[str, str, str]], table: PinyinTable
) -> float:
    """Character-level recall on misspellings that sound like their fix.

    Denominator: positions where source != gold and the two characters share
    a default (initial, final). Numerator: those restored to gold.
    """
    total = 0
    restored = 0
    for source, gold, prediction in triples:
        for x, y, p in zip(source, gold, prediction):
            if x == y:
                continue
            sx, sy = table.get(x), table.get(y)
            if sx is None or sy is None or sx.sound != sy.sound:
                continue
            total += 1
            if p == y:
                restored += 1
    return _ratio(restored, total)
