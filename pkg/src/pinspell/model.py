"""Phonetics-aware transformer encoder with a tied output head.

The model runs in two modes over shared parameters: a phonetics-aware pass
whose input is the character sequence plus its aligned pinyin slots (with the
separation mask keeping pinyin states purely phonetic), and a raw-text pass
over the characters alone. The output head reuses the word embedding table,
so every position is scored against the same |V| characters.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numeric as nm
from .numeric import NEG_INF, ShapeError, Tensor
from .pinyin import PinyinTable
from .textcodec import (
    CharVocab,
    PaddedBatch,
    PhonemeVocab,
    encode_example,
    pad_batch,
)


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_initials: int = 25
    n_finals: int = 35
    layers: int = 2
    heads: int = 2
    d_model: int = 64
    ffn: int = 256
    dropout: float = 0.1
    max_len: int = 140

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by heads {self.heads}"
            )
        if min(self.vocab_size, self.layers, self.heads, self.ffn) < 1:
            raise ConfigError("all size fields must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout {self.dropout} outside [0, 1)")

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical parameter name -> shape map; also the checkpoint schema."""
    D, F = cfg.d_model, cfg.ffn
    shapes: dict[str, tuple[int, ...]] = {
        "emb.word": (cfg.vocab_size, D),
        "emb.initial": (cfg.n_initials, D),
        "emb.final": (cfg.n_finals, D),
        "emb.position": (cfg.max_len + 1, D),
        "emb.segment": (2, D),
        "out.bias": (cfg.vocab_size,),
    }
    for l in range(cfg.layers):
        p = f"layer{l}."
        shapes.update(
            {
                p + "attn.wq": (D, D),
                p + "attn.bq": (D,),
                p + "attn.wk": (D, D),
                p + "attn.bk": (D,),
                p + "attn.wv": (D, D),
                p + "attn.bv": (D,),
                p + "attn.wo": (D, D),
                p + "attn.bo": (D,),
                p + "ln1.gain": (D,),
                p + "ln1.bias": (D,),
                p + "ffn.w1": (D, F),
                p + "ffn.b1": (F,),
                p + "ffn.w2": (F, D),
                p + "ffn.b2": (D,),
                p + "ln2.gain": (D,),
                p + "ln2.bias": (D,),
            }
        )
    return shapes


@dataclass
class ModelParams:
    """Named parameter tensors; the output head shares storage with emb.word."""

    cfg: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def named(self) -> list[tuple[str, Tensor]]:
        return sorted(self.tensors.items())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Truncated normal (std 0.02) weights, zero biases, unit norm gains."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, Tensor] = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gain"):
            data = np.ones(shape, dtype=dtype)
        elif name.endswith((".bias", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2")):
            data = np.zeros(shape, dtype=dtype)
        else:
            data = nm.truncated_normal(rng, shape, std=0.02, dtype=dtype)
        tensors[name] = Tensor(data, requires_grad=True)
    return ModelParams(cfg, tensors)


def embed(batch: PaddedBatch, params: ModelParams, cfg: ModelConfig) -> Tensor:
    """H^0: word+pos+seg for text slots, initial+final+pos+seg for pinyin."""
    word = nm.rows(params["emb.word"], batch.char_ids)
    phon = nm.add(
        nm.rows(params["emb.initial"], batch.initial_ids),
        nm.rows(params["emb.final"], batch.final_ids),
    )
    content = nm.concat([word, phon], axis=1)
    pos = nm.rows(params["emb.position"], batch.positions)
    seg = nm.rows(params["emb.segment"], batch.segments)
    return nm.add(nm.add(content, pos), seg)


def encode(
    h0: Tensor,
    mask: np.ndarray,
    params: ModelParams,
    cfg: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
    capture: list | None = None,
) -> Tensor:
    """Stack of post-norm attention blocks with the additive mask.

    mask: (B, T, T) additive, broadcast across heads. With ``train`` and a
    rate > 0 a generator must be supplied for the dropout draws. ``capture``
    (a list) receives each layer's attention weights (B, heads, T, T).
    """
    B, T, D = h0.shape
    if mask.shape != (B, T, T):
        raise ShapeError(f"mask shape {mask.shape} does not match batch ({B},{T},{T})")
    rate = cfg.dropout if train else 0.0
    if rate > 0 and rng is None:
        raise ConfigError("training-mode encode needs an rng for dropout")
    inv_sqrt_d = 1.0 / np.sqrt(cfg.d_head)

    h = nm.dropout(h0, rate, rng) if rate > 0 else h0
    head_shape = (B, T, cfg.heads, cfg.d_head)
    for l in range(cfg.layers):
        p = f"layer{l}."

        def proj(which: str) -> Tensor:
            x = nm.add(
                nm.matmul(h, params[p + "attn.w" + which]),
                params[p + "attn.b" + which],
            )
            return nm.permute(nm.reshape(x, head_shape), (0, 2, 1, 3))

        q, k, v = proj("q"), proj("k"), proj("v")
        scores = nm.scale(nm.matmul(q, nm.transpose_last(k)), inv_sqrt_d)
        att = nm.masked_softmax(scores, mask[:, None, :, :])
        if capture is not None:
            capture.append(att.data.copy())
        ctx = nm.reshape(nm.permute(nm.matmul(att, v), (0, 2, 1, 3)), (B, T, D))
        out = nm.add(nm.matmul(ctx, params[p + "attn.wo"]), params[p + "attn.bo"])
        out = nm.dropout(out, rate, rng)
        h = nm.layer_norm(
            nm.add(h, out), params[p + "ln1.gain"], params[p + "ln1.bias"]
        )

        inner = nm.gelu(nm.add(nm.matmul(h, params[p + "ffn.w1"]), params[p + "ffn.b1"]))
        ff = nm.add(nm.matmul(inner, params[p + "ffn.w2"]), params[p + "ffn.b2"])
        ff = nm.dropout(ff, rate, rng)
        h = nm.layer_norm(
            nm.add(h, ff), params[p + "ln2.gain"], params[p + "ln2.bias"]
        )
    return h


def predict_logits(h: Tensor, params: ModelParams) -> Tensor:
    """Tied head: logits_i = E · h_i + b; same head for every position."""
    B, T, D = h.shape
    flat = nm.reshape(h, (B * T, D))
    logits = nm.matmul(flat, nm.transpose_last(params["emb.word"]))
    return nm.reshape(
        nm.add(logits, params["out.bias"]), (B, T, params["emb.word"].shape[0])
    )


def forward_phonetics(
    batch: PaddedBatch,
    params: ModelParams,
    cfg: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
    capture: list | None = None,
) -> tuple[Tensor, Tensor]:
    """One pass over the joined sequence; logits split at the half point.

    Returns (text_logits, pinyin_logits), each (B, N, |V|).
    """
    h = encode(embed(batch, params, cfg), batch.mask, params, cfg, train, rng, capture)
    logits = predict_logits(h, params)
    N = batch.width
    return nm.narrow(logits, 1, 0, N), nm.narrow(logits, 1, N, N)


def _half_mask(lengths: np.ndarray, N: int) -> np.ndarray:
    """(B, N, N) additive mask hiding padded key columns."""
    padded_key = np.arange(N)[None, :] >= lengths[:, None]  # (B, N)
    per_row = np.where(padded_key[:, None, :], np.float32(NEG_INF), np.float32(0.0))
    return np.broadcast_to(per_row, (lengths.shape[0], N, N))


def forward_raw(
    batch: PaddedBatch,
    params: ModelParams,
    cfg: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Second pass: characters alone, no pinyin half, no separation mask."""
    N = batch.width
    word = nm.rows(params["emb.word"], batch.char_ids)
    pos = nm.rows(params["emb.position"], batch.positions[:, :N])
    seg = nm.rows(params["emb.segment"], np.zeros_like(batch.char_ids))
    h0 = nm.add(nm.add(word, pos), seg)
    h = encode(h0, _half_mask(batch.lengths, N), params, cfg, train, rng)
    return predict_logits(h, params)


def forward_pinyin_only(
    batch: PaddedBatch, params: ModelParams, cfg: ModelConfig
) -> Tensor:
    """Encode just the pinyin sub-sequence; used to check the separation
    property (those rows of the full pass can only attend to each other)."""
    N = batch.width
    phon = nm.add(
        nm.rows(params["emb.initial"], batch.initial_ids),
        nm.rows(params["emb.final"], batch.final_ids),
    )
    pos = nm.rows(params["emb.position"], batch.positions[:, N:])
    seg = nm.rows(params["emb.segment"], np.ones_like(batch.initial_ids))
    h0 = nm.add(nm.add(phon, pos), seg)
    return encode(h0, _half_mask(batch.lengths, N), params, cfg)


class _Plain:
    def __init__(self, source: str):
        self.source = source
        self.target = None


def correct_sentences(
    sentences: Sequence[str],
    params: ModelParams,
    cfg: ModelConfig,
    cv: CharVocab,
    pv: PhonemeVocab,
    table: PinyinTable,
    batch_size: int = 32,
) -> list[str]:
    """Argmax decoding of text positions; pinyin-part predictions discarded.

    Output length always equals input length; positions whose argmax is a
    reserved token keep the source character (the model cannot emit [PAD] or
    [UNK] as a correction).
    """
    out: list[str] = []
    for start in range(0, len(sentences), batch_size):
        chunk = sentences[start : start + batch_size]
        encoded = [
            encode_example(_Plain(s), cv, pv, table, with_labels=False, max_len=cfg.max_len)
            for s in chunk
        ]
        batch = pad_batch(encoded)
        text_logits, _ = forward_phonetics(batch, params, cfg)
        pred = text_logits.data.argmax(axis=-1)
        for b, sentence in enumerate(chunk):
            chars = []
            for i, ch in enumerate(sentence):
                token = cv.decode_id(int(pred[b, i]))
                chars.append(ch if token in ("[PAD]", "[UNK]") else token)
            out.append("".join(chars))
    return out


def infer_correct(
    sentence: str,
    params: ModelParams,
    cfg: ModelConfig,
    cv: CharVocab,
    pv: PhonemeVocab,
    table: PinyinTable,
) -> str:
    return correct_sentences([sentence], params, cfg, cv, pv, table)[0]


def dump_attention(
    sentence: str,
    params: ModelParams,
    cfg: ModelConfig,
    cv: CharVocab,
    pv: PhonemeVocab,
    table: PinyinTable,
) -> list[np.ndarray]:
    """Per-layer attention weights (heads, 2n, 2n) for one sentence."""
    encoded = encode_example(
        _Plain(sentence), cv, pv, table, with_labels=False, max_len=cfg.max_len
    )
    batch = pad_batch([encoded])
    capture: list[np.ndarray] = []
    forward_phonetics(batch, params, cfg, capture=capture)
    return [layer[0] for layer in capture]


_MAGIC = b"PSPCHKPT"
_VERSION = 1


def save_checkpoint(
    path: str | Path,
    cfg: ModelConfig,
    tensors: dict[str, np.ndarray],
    manifest_extra: dict | None = None,
) -> None:
    """Single-file container: JSON manifest + named float32 LE tensors."""
    manifest = {"config": cfg.to_dict()}
    if manifest_extra:
        manifest.update(manifest_extra)
    blob = json.dumps(manifest, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_container(path: str | Path) -> tuple[ModelConfig, dict[str, np.ndarray], dict]:
    """Parse the container bytes without checking the model tensor schema.

    Attention dumps reuse the container format but carry non-model tensors,
    so schema validation lives in load_checkpoint, not here.
    """
    raw = Path(path).read_bytes()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    off = len(_MAGIC)
    version, blob_len = struct.unpack_from("<II", raw, off)
    off += 8
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        manifest = json.loads(raw[off : off + blob_len].decode("utf-8"))
        cfg = ModelConfig.from_dict(manifest["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad checkpoint manifest: {exc}") from exc
    off += blob_len
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        tensors[name] = arr.copy()
    return cfg, tensors, manifest


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, dict[str, np.ndarray], dict]:
    """Read a container and validate model tensor shapes against its config.

    Returns (config, tensors, manifest). Tensors beyond the model schema
    (optimizer state, etc.) pass through, but every schema-named tensor must
    match its expected shape and all model tensors must be present.
    """
    cfg, tensors, manifest = read_container(path)
    expected = param_shapes(cfg)
    for name, shape in expected.items():
        if name not in tensors:
            raise CheckpointError(f"checkpoint missing tensor {name}")
        if tensors[name].shape != shape:
            raise CheckpointError(
                f"tensor {name} has shape {tensors[name].shape}, expected {shape}"
            )
    return cfg, tensors, manifest


def params_to_tensors(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: t.data.astype(np.float32) for name, t in params.tensors.items()}


def params_from_tensors(cfg: ModelConfig, tensors: dict[str, np.ndarray]) -> ModelParams:
    out: dict[str, Tensor] = {}
    for name, shape in param_shapes(cfg).items():
        if name not in tensors:
            raise CheckpointError(f"missing tensor {name}")
        if tensors[name].shape != shape:
            raise CheckpointError(
                f"tensor {name} has shape {tensors[name].shape}, expected {shape}"
            )
        out[name] = Tensor(tensors[name].astype(np.float32), requires_grad=True)
    return ModelParams(cfg, out)
