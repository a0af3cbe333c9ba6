"""Two-pass training loop: AdamW, warmup/decay schedule, checkpoints.

Each step runs the phonetics-aware pass (text + pinyin losses) and, when the
self-distillation weights are active, a second raw-text pass feeding the KL
and raw losses. Pretraining mode zeroes both second-pass weights, which
also skips the pass entirely. Epoch-boundary checkpoints carry optimizer
moments and rng states, so interrupted runs resume bit-identically in
deterministic mode.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numeric as nm
from .data import read_dataset
from .evaluator import EvalReport, evaluate
from .model import (
    ModelConfig,
    ModelParams,
    correct_sentences,
    forward_phonetics,
    forward_raw,
    init_params,
    load_checkpoint,
    param_shapes,
    params_from_tensors,
    params_to_tensors,
    save_checkpoint,
)
from .numeric import NumericError
from .objective import (
    LossBreakdown,
    LossWeights,
    loss_joint,
    loss_pinyin,
    loss_raw,
    loss_selfdistill,
    loss_text,
)
from .pinyin import PinyinTable
from .textcodec import CharVocab, PhonemeVocab, encode_example, pad_batch


class TrainError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    batch_size: int = 32
    peak_lr: float = 75e-6
    warmup_frac: float = 0.1
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    deterministic: bool = False
    mode: str = "finetune"
    max_steps: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.warmup_frac < 1.0:
            raise TrainError(f"warmup_frac {self.warmup_frac} outside [0, 1)")
        if self.peak_lr <= 0:
            raise TrainError(f"peak_lr must be positive, got {self.peak_lr}")
        if self.batch_size < 1 or self.epochs < 1:
            raise TrainError("batch_size and epochs must be >= 1")
        if self.mode not in ("pretrain", "finetune"):
            raise TrainError(f"mode must be pretrain or finetune, got {self.mode}")

    def effective_weights(self) -> LossWeights:
        """Pretraining never uses the self-distillation terms."""
        if self.mode == "pretrain":
            return replace(self.weights, beta=0.0, gamma=0.0)
        return self.weights


@dataclass(frozen=True)
class TrainLogRecord:
    step: int
    lr: float
    losses: LossBreakdown
    wall_time: float
    eval_report: EvalReport | None = None

    def to_json_line(self) -> str:
        record: dict = {"step": self.step, "lr": self.lr, "wall_time": self.wall_time}
        record.update(self.losses.to_dict())
        if self.eval_report is not None:
            record["eval"] = self.eval_report.to_dict()
        return json.dumps(record, sort_keys=True)


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Piecewise-linear: 0 -> peak over the warmup steps, then peak -> 0."""
    if total_steps <= 0:
        raise TrainError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise TrainError(f"step {step} outside [0, {total_steps}]")
    warmup = int(round(cfg.warmup_frac * total_steps))
    if warmup > 0 and step <= warmup:
        return cfg.peak_lr * step / warmup
    return cfg.peak_lr * (total_steps - step) / (total_steps - warmup)


@dataclass
class AdamWState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def fresh(cls, params: ModelParams) -> "AdamWState":
        return cls(
            step=0,
            m={k: np.zeros_like(t.data) for k, t in params.tensors.items()},
            v={k: np.zeros_like(t.data) for k, t in params.tensors.items()},
        )


_BETA1, _BETA2, _EPS = 0.9, 0.999, 1e-8


def optimizer_update(
    params: ModelParams, state: AdamWState, lr: float, weight_decay: float
) -> None:
    """One AdamW step with bias correction and decoupled weight decay."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - _BETA1**t
    bc2 = 1.0 - _BETA2**t
    for name, p in params.named():
        g = p.grad
        if g is None:
            continue
        if g.shape != p.data.shape or state.m[name].shape != p.data.shape:
            raise NumericError(f"gradient/moment shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= _BETA1
        m += (1.0 - _BETA1) * g
        v *= _BETA2
        v += (1.0 - _BETA2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + _EPS)
        if weight_decay:
            update = update + weight_decay * p.data
        p.data -= (lr * update).astype(p.data.dtype)


def train_step(
    batch,
    params: ModelParams,
    cfg: TrainConfig,
    state: AdamWState,
    lr: float,
    rng: np.random.Generator,
) -> LossBreakdown:
    """Forward (one or two passes), backward, clip, optimizer update."""
    mcfg = params.cfg
    w = cfg.effective_weights()
    params.zero_grad()

    N = batch.width
    text_logits, pinyin_logits = forward_phonetics(
        batch, params, mcfg, train=True, rng=rng
    )
    l_text = loss_text(text_logits, batch.labels[:, :N])
    l_pinyin = loss_pinyin(pinyin_logits, batch.labels[:, N:])

    l_kl = l_raw = None
    if w.beta != 0.0 or w.gamma != 0.0:
        raw_logits = forward_raw(batch, params, mcfg, train=True, rng=rng)
        l_raw = loss_raw(raw_logits, batch.labels[:, :N])
        l_kl = loss_selfdistill(text_logits, raw_logits, batch.text_valid())

    total, breakdown = loss_joint(l_text, l_pinyin, l_kl, l_raw, w)
    total.backward()
    nm.clip_grad_norm(list(params.tensors.values()), cfg.clip_norm)
    optimizer_update(params, state, lr, cfg.weight_decay)
    return breakdown


def _vocab_hash(cv: CharVocab) -> str:
    return hashlib.sha256("\n".join(cv.tokens).encode("utf-8")).hexdigest()


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


@dataclass
class TrainResult:
    params: ModelParams
    best_f1: float
    steps: int
    history: list[TrainLogRecord]
    last_checkpoint: Path
    best_checkpoint: Path
    log_path: Path


def _save_training_checkpoint(
    path: Path,
    params: ModelParams,
    state: AdamWState,
    cv: CharVocab,
    extra: dict,
) -> None:
    tensors = params_to_tensors(params)
    for name, arr in state.m.items():
        tensors[f"opt.m.{name}"] = arr
    for name, arr in state.v.items():
        tensors[f"opt.v.{name}"] = arr
    save_checkpoint(
        path,
        params.cfg,
        tensors,
        {"vocab_hashes": {"char": _vocab_hash(cv)}, "train": extra},
    )


def load_training_checkpoint(
    path: str | Path,
) -> tuple[ModelParams, AdamWState, dict]:
    cfg, tensors, manifest = load_checkpoint(path)
    params = params_from_tensors(cfg, tensors)
    extra = manifest.get("train", {})
    state = AdamWState(
        step=int(extra.get("opt_step", 0)),
        m={
            name: tensors[f"opt.m.{name}"].copy()
            for name in param_shapes(cfg)
            if f"opt.m.{name}" in tensors
        },
        v={
            name: tensors[f"opt.v.{name}"].copy()
            for name in param_shapes(cfg)
            if f"opt.v.{name}" in tensors
        },
    )
    if not state.m:
        state = AdamWState.fresh(params)
    return params, state, manifest


def run_training(
    train_file: str | Path,
    dev_file: str | Path,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    out_dir: str | Path,
    cv: CharVocab,
    pv: PhonemeVocab,
    table: PinyinTable,
    resume: bool = False,
) -> TrainResult:
    """Epochs of shuffled batches with per-epoch dev evaluation.

    Writes train_log.jsonl (appended on resume), last.ckpt at every epoch
    boundary (with optimizer moments and rng states), and best.ckpt whenever
    dev correction F1 improves.
    """
    nm.set_deterministic(cfg.deterministic)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    last_path = out_dir / "last.ckpt"
    best_path = out_dir / "best.ckpt"
    log_path = out_dir / "train_log.jsonl"

    train_examples = read_dataset(train_file)
    dev_examples = read_dataset(dev_file)
    encoded = [
        encode_example(ex, cv, pv, table, max_len=model_cfg.max_len)
        for ex in train_examples
    ]
    n = len(encoded)
    steps_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    total_steps = (
        cfg.max_steps if cfg.max_steps is not None else cfg.epochs * steps_per_epoch
    )

    if resume and last_path.exists():
        params, opt_state, manifest = load_training_checkpoint(last_path)
        if params.cfg != model_cfg:
            raise TrainError("checkpoint model config differs from requested config")
        extra = manifest["train"]
        start_epoch = int(extra["epoch"])
        step = int(extra["step"])
        best_f1 = float(extra["best_f1"])
        rng_data = _restore_rng(extra["rng_data"])
        rng_drop = _restore_rng(extra["rng_dropout"])
    else:
        params = init_params(model_cfg, seed=cfg.seed)
        opt_state = AdamWState.fresh(params)
        start_epoch = 0
        step = 0
        best_f1 = -1.0
        rng_data = np.random.default_rng(cfg.seed)
        rng_drop = np.random.default_rng(cfg.seed + 1)
        log_path.write_text("", encoding="utf-8")

    history: list[TrainLogRecord] = []
    start_time = time.monotonic()
    done = step >= total_steps

    with open(log_path, "a", encoding="utf-8") as log:
        for epoch in range(start_epoch, cfg.epochs):
            if done:
                break
            order = rng_data.permutation(n)
            for lo in range(0, n, cfg.batch_size):
                if step >= total_steps:
                    done = True
                    break
                batch = pad_batch([encoded[i] for i in order[lo : lo + cfg.batch_size]])
                lr = lr_at(step, total_steps, cfg)
                breakdown = train_step(batch, params, cfg, opt_state, lr, rng_drop)
                step += 1
                record = TrainLogRecord(
                    step=step,
                    lr=lr,
                    losses=breakdown,
                    wall_time=time.monotonic() - start_time,
                )
                history.append(record)
                log.write(record.to_json_line() + "\n")

            sources = [ex.source for ex in dev_examples]
            predictions = correct_sentences(
                sources, params, model_cfg, cv, pv, table, batch_size=cfg.batch_size
            )
            report = evaluate(
                [
                    (ex.source, ex.target, pred)
                    for ex, pred in zip(dev_examples, predictions)
                ]
            )
            eval_record = TrainLogRecord(
                step=step,
                lr=lr_at(min(step, total_steps), total_steps, cfg),
                losses=history[-1].losses if history else LossBreakdown(0, 0, 0, 0, 0),
                wall_time=time.monotonic() - start_time,
                eval_report=report,
            )
            log.write(eval_record.to_json_line() + "\n")
            if report.correction_f1 > best_f1:
                best_f1 = report.correction_f1
                _save_training_checkpoint(
                    best_path, params, opt_state, cv,
                    {"step": step, "epoch": epoch + 1, "best_f1": best_f1,
                     "opt_step": opt_state.step},
                )
            _save_training_checkpoint(
                last_path, params, opt_state, cv,
                {
                    "step": step,
                    "epoch": epoch + 1,
                    "best_f1": best_f1,
                    "opt_step": opt_state.step,
                    "rng_data": _rng_state(rng_data),
                    "rng_dropout": _rng_state(rng_drop),
                },
            )

    if not best_path.exists():
        _save_training_checkpoint(
            best_path, params, opt_state, cv,
            {"step": step, "epoch": cfg.epochs, "best_f1": best_f1,
             "opt_step": opt_state.step},
        )
    return TrainResult(
        params=params,
        best_f1=best_f1,
        steps=step,
        history=history,
        last_checkpoint=last_path,
        best_checkpoint=best_path,
        log_path=log_path,
    )


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat `key = value` lines; # starts a comment; blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise TrainError(f"{path}: line {lineno}: expected key = value")
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out


_TRAIN_KEYS = {
    "epochs": int,
    "batch_size": int,
    "peak_lr": float,
    "warmup_frac": float,
    "weight_decay": float,
    "clip_norm": float,
    "alpha": float,
    "beta": float,
    "gamma": float,
    "seed": int,
    "deterministic": lambda s: s.lower() in ("1", "true", "yes"),
    "mode": str,
    "max_steps": int,
}

_MODEL_KEYS = {
    "layers": int,
    "heads": int,
    "d_model": int,
    "ffn": int,
    "dropout": float,
    "max_len": int,
}


def configs_from_dict(
    raw: dict[str, str], vocab_size: int, pv: PhonemeVocab
) -> tuple[ModelConfig, TrainConfig]:
    """Build both configs from flat key/value text, rejecting unknown keys."""
    unknown = set(raw) - set(_TRAIN_KEYS) - set(_MODEL_KEYS)
    if unknown:
        raise TrainError(f"unknown config keys: {sorted(unknown)}")
    model_kwargs = {
        key: _MODEL_KEYS[key](raw[key]) for key in _MODEL_KEYS if key in raw
    }
    mcfg = ModelConfig(
        vocab_size=vocab_size,
        n_initials=pv.n_initials,
        n_finals=pv.n_finals,
        **model_kwargs,
    )
    weights = LossWeights(
        alpha=float(raw.get("alpha", 1.0)),
        beta=float(raw.get("beta", 1.2)),
        gamma=float(raw.get("gamma", 0.97)),
    )
    train_kwargs = {
        key: _TRAIN_KEYS[key](raw[key])
        for key in _TRAIN_KEYS
        if key in raw and key not in ("alpha", "beta", "gamma")
    }
    tcfg = TrainConfig(weights=weights, **train_kwargs)
    return mcfg, tcfg
