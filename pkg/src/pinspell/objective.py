"""The four training losses and their weighted combination.

All four are means over valid (non-padded) positions. The text, pinyin, and
raw losses are cross-entropy against the target characters; the
self-distillation loss is a symmetric KL between the two passes' text
distributions. Padded positions carry label -1 and are excluded everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .numeric import NumericError, Tensor


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.2
    gamma: float = 0.97

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.gamma)
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ValueError(f"loss weights must be finite and >= 0, got {vals}")


@dataclass(frozen=True)
class LossBreakdown:
    l_text: float
    l_pinyin: float
    l_kl: float
    l_raw: float
    l_joint: float

    def to_dict(self) -> dict[str, float]:
        return {
            "l_text": self.l_text,
            "l_pinyin": self.l_pinyin,
            "l_kl": self.l_kl,
            "l_raw": self.l_raw,
            "l_joint": self.l_joint,
        }


def _flatten(logits: Tensor) -> Tensor:
    B, N, V = logits.shape
    return nm.reshape(logits, (B * N, V))


def loss_text(text_logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean -log P(y_i | S) over text positions; -1 labels are ignored."""
    return nm.cross_entropy(_flatten(text_logits), labels.reshape(-1))


def loss_pinyin(pinyin_logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean -log P(z_i | S) over pinyin slots; labels are y duplicated."""
    return nm.cross_entropy(_flatten(pinyin_logits), labels.reshape(-1))


def loss_raw(raw_logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean -log Q(y_i | X) over the raw pass's text positions."""
    return nm.cross_entropy(_flatten(raw_logits), labels.reshape(-1))


def loss_selfdistill(
    text_logits: Tensor, raw_logits: Tensor, valid: np.ndarray
) -> Tensor:
    """Mean over text positions of (KL(P||Q) + KL(Q||P)) / 2."""
    return nm.bidirectional_kl(
        _flatten(text_logits), _flatten(raw_logits), valid.reshape(-1)
    )


def loss_joint(
    l_text: Tensor,
    l_pinyin: Tensor,
    l_kl: Tensor | None,
    l_raw: Tensor | None,
    w: LossWeights,
) -> tuple[Tensor, LossBreakdown]:
    """L = L_text + alpha L_pinyin + beta L_kl + gamma L_raw.

    l_kl and l_raw may be None only when their weights are 0 (single-pass
    training); their logged values are then 0. A non-finite component fails
    fast, naming the term.
    """
    parts: dict[str, Tensor | None] = {
        "l_text": l_text,
        "l_pinyin": l_pinyin,
        "l_kl": l_kl,
        "l_raw": l_raw,
    }
    for name, term in parts.items():
        if term is None:
            weight = {"l_kl": w.beta, "l_raw": w.gamma}.get(name)
            if weight != 0.0:
                raise NumericError(f"{name} missing but its weight is {weight}")
            continue
        if not np.isfinite(term.data):
            raise NumericError(f"non-finite loss term: {name}")

    total = nm.add(l_text, nm.scale(l_pinyin, w.alpha))
    if l_kl is not None and w.beta != 0.0:
        total = nm.add(total, nm.scale(l_kl, w.beta))
    if l_raw is not None and w.gamma != 0.0:
        total = nm.add(total, nm.scale(l_raw, w.gamma))
    breakdown = LossBreakdown(
        l_text=l_text.item(),
        l_pinyin=l_pinyin.item(),
        l_kl=0.0 if l_kl is None else l_kl.item(),
        l_raw=0.0 if l_raw is None else l_raw.item(),
        l_joint=total.item(),
    )
    return total, breakdown
