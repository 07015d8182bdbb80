"""Multi-modal Transformer sequence-to-sequence model.

Three fusion modes for grounding generation in image features:
  - none:  text-only encoder.
  - late:  text-only encoder; projected image rows are appended to the
           encoder output as extra decoder memory.
  - early: projected image rows are concatenated before the text tokens
           (segment id 1 vs 0) and the encoder self-attends over both.

Pre-norm blocks, GELU activations, learned positions, tied input/output
embeddings. Image rows use a dedicated learned position table, switchable
off for unordered region features.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .autograd import (Tensor, NumericsError, matmul, softmax, layer_norm,
                       gelu, embedding, concat, cross_entropy, dropout)
from .imagefeat import FEATURE_DIM, KIND_ROWS, project

FUSIONS = ("none", "late", "early")
NEG_INF = -1e9


@dataclass
class ModelConfig:
    n_enc_layers: int = 2
    n_dec_layers: int = 4
    d_model: int = 128
    n_heads: int = 4
    d_ffn: int = 256
    vocab_size: int = 512
    max_positions: int = 128
    fusion: str = "none"
    feature_kind: str = "global"
    dropout: float = 0.0
    pad_id: int = 0
    use_image_positions: bool = True
    late_pooled: bool = False

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise NumericsError("d_model must be divisible by n_heads")
        if self.fusion not in FUSIONS:
            raise NumericsError(f"unknown fusion {self.fusion!r}")
        if self.feature_kind not in KIND_ROWS:
            raise NumericsError(f"unknown feature_kind {self.feature_kind!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def reference_config(**overrides) -> ModelConfig:
    """Full-scale architecture preset (not trainable at desk scale)."""
    base = dict(n_enc_layers=2, n_dec_layers=24, d_model=2560, n_heads=32,
                d_ffn=10240, vocab_size=8192, max_positions=1024)
    base.update(overrides)
    return ModelConfig(**base)


def desk_config(**overrides) -> ModelConfig:
    """Small preset that trains on a CPU in minutes."""
    base = dict(n_enc_layers=2, n_dec_layers=4, d_model=128, n_heads=4,
                d_ffn=256, vocab_size=512, max_positions=128)
    base.update(overrides)
    return ModelConfig(**base)


def init_params(config: ModelConfig, seed: int = 0,
                dtype=np.float32) -> dict[str, Tensor]:
    """Random initialization; returns a flat name -> Tensor dict."""
    rng = np.random.default_rng(seed)
    d, f = config.d_model, config.d_ffn
    params: dict[str, Tensor] = {}

    def w(name, shape, std=0.02):
        params[name] = Tensor(
            (rng.standard_normal(shape) * std).astype(dtype), requires_grad=True)

    def zeros(name, shape):
        params[name] = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(name, shape):
        params[name] = Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    w("tok_emb", (config.vocab_size, d))
    w("pos_emb", (config.max_positions, d))
    w("seg_emb", (2, d))
    if config.fusion != "none":
        w("img_proj_w", (FEATURE_DIM, d))
        zeros("img_proj_b", (d,))
        w("img_pos_emb", (KIND_ROWS[config.feature_kind], d))

    def block(prefix, cross: bool):
        for side in (["self", "cross"] if cross else ["self"]):
            for mat in ("wq", "wk", "wv", "wo"):
                w(f"{prefix}.{side}.{mat}", (d, d))
            zeros(f"{prefix}.{side}.bo", (d,))
            ones(f"{prefix}.{side}.ln_g", (d,))
            zeros(f"{prefix}.{side}.ln_b", (d,))
        w(f"{prefix}.ffn.w1", (d, f))
        zeros(f"{prefix}.ffn.b1", (f,))
        w(f"{prefix}.ffn.w2", (f, d))
        zeros(f"{prefix}.ffn.b2", (d,))
        ones(f"{prefix}.ffn.ln_g", (d,))
        zeros(f"{prefix}.ffn.ln_b", (d,))

    for i in range(config.n_enc_layers):
        block(f"enc{i}", cross=False)
    ones("enc_ln_g", (d,))
    zeros("enc_ln_b", (d,))
    for i in range(config.n_dec_layers):
        block(f"dec{i}", cross=True)
    ones("dec_ln_g", (d,))
    zeros("dec_ln_b", (d,))
    return params


def param_count(params: dict[str, Tensor]) -> int:
    return int(sum(p.data.size for p in params.values()))


def _attention(params, prefix, config, x: Tensor, kv: Tensor,
               bias: np.ndarray, rng) -> Tensor:
    """Multi-head attention; `bias` is an additive [B,1,Tq,Tk] mask."""
    B, Tq, d = x.shape
    Tk = kv.shape[1]
    H = config.n_heads
    dh = d // H
    q = matmul(x, params[f"{prefix}.wq"])
    k = matmul(kv, params[f"{prefix}.wk"])
    v = matmul(kv, params[f"{prefix}.wv"])
    q = q.reshape(B, Tq, H, dh).transpose(0, 2, 1, 3)
    k = k.reshape(B, Tk, H, dh).transpose(0, 2, 1, 3)
    v = v.reshape(B, Tk, H, dh).transpose(0, 2, 1, 3)
    scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    scores = scores + Tensor(bias.astype(x.dtype))
    attn = softmax(scores, axis=-1)
    attn = dropout(attn, config.dropout, rng)
    out = matmul(attn, v).transpose(0, 2, 1, 3).reshape(B, Tq, d)
    return matmul(out, params[f"{prefix}.wo"]) + params[f"{prefix}.bo"]


def _ffn(params, prefix, config, x: Tensor, rng) -> Tensor:
    h = gelu(matmul(x, params[f"{prefix}.w1"]) + params[f"{prefix}.b1"])
    h = dropout(h, config.dropout, rng)
    return matmul(h, params[f"{prefix}.w2"]) + params[f"{prefix}.b2"]


def _norm(params, g, b, x):
    return layer_norm(x, params[g], params[b])


def _key_bias(key_mask: np.ndarray, Tq: int) -> np.ndarray:
    """[B,Tk] boolean key mask -> additive [B,1,Tq,Tk] bias."""
    B, Tk = key_mask.shape
    bias = np.where(key_mask[:, None, None, :], 0.0, NEG_INF)
    return np.broadcast_to(bias, (B, 1, Tq, Tk)).copy()


def _image_block(params, config, feats_list, rng) -> Tensor:
    """Project per-example features into a [B, R, d] embedding block."""
    rows = []
    for f in feats_list:
        if f.kind != config.feature_kind:
            raise NumericsError(
                f"feature kind {f.kind!r} != config {config.feature_kind!r}")
        rows.append(project(f, params["img_proj_w"], params["img_proj_b"])
                    .reshape(1, KIND_ROWS[config.feature_kind], config.d_model))
    return concat(rows, axis=0)


def encode(params, config: ModelConfig, input_ids: np.ndarray,
           input_mask: np.ndarray, feats_list=None, rng=None):
    """Run the encoder; returns (memory Tensor [B,M,d], memory_mask [B,M]).

    For early fusion the image block precedes the text and is part of the
    self-attention; for late fusion it is appended to the encoder output.
    """
    B, S = input_ids.shape
    if S > config.max_positions:
        raise NumericsError(f"input length {S} exceeds max_positions")
    # feats_list may be None under any fusion mode: text-only episodes
    # train in the same multi-task mix. Batches that do have images must
    # carry one feature block per example.
    if feats_list is not None and len(feats_list) != B:
        raise NumericsError("feats_list must have one entry per example")

    x = embedding(params["tok_emb"], input_ids)
    x = x + embedding(params["pos_emb"], np.arange(S))
    x = x + params["seg_emb"][0].reshape(1, 1, config.d_model)
    attn_mask = input_mask
    R = 0
    if config.fusion == "early" and feats_list is not None:
        img = _image_block(params, config, feats_list, rng)
        R = img.shape[1]
        img = img + params["seg_emb"][1].reshape(1, 1, config.d_model)
        if config.use_image_positions:
            img = img + embedding(params["img_pos_emb"], np.arange(R))
        x = concat([img, x], axis=1)
        attn_mask = np.concatenate(
            [np.ones((B, R), dtype=bool), input_mask], axis=1)

    x = dropout(x, config.dropout, rng)
    bias = _key_bias(attn_mask, x.shape[1])
    for i in range(config.n_enc_layers):
        p = f"enc{i}"
        h = _norm(params, f"{p}.self.ln_g", f"{p}.self.ln_b", x)
        x = x + _attention(params, f"{p}.self", config, h, h, bias, rng)
        h = _norm(params, f"{p}.ffn.ln_g", f"{p}.ffn.ln_b", x)
        x = x + _ffn(params, f"{p}.ffn", config, h, rng)
    x = layer_norm(x, params["enc_ln_g"], params["enc_ln_b"])

    if config.fusion == "late" and feats_list is not None:
        img = _image_block(params, config, feats_list, rng)
        if config.late_pooled:
            img = img.sum(axis=1, keepdims=True) * (1.0 / img.shape[1])
        Ri = img.shape[1]
        x = concat([x, img], axis=1)
        attn_mask = np.concatenate(
            [attn_mask, np.ones((B, Ri), dtype=bool)], axis=1)
    return x, attn_mask


def decoder_forward(params, config: ModelConfig, memory: Tensor,
                    memory_mask: np.ndarray, target_ids: np.ndarray,
                    rng=None) -> Tensor:
    """Teacher-forced decoder; returns logits [B, T, V]."""
    B, T = target_ids.shape
    if T > config.max_positions:
        raise NumericsError(f"prefix length {T} exceeds max_positions")
    x = embedding(params["tok_emb"], target_ids)
    x = x + embedding(params["pos_emb"], np.arange(T))
    x = dropout(x, config.dropout, rng)
    causal = np.where(np.tril(np.ones((T, T), dtype=bool)), 0.0, NEG_INF)
    causal = np.broadcast_to(causal, (B, 1, T, T)).copy()
    cross_bias = _key_bias(memory_mask, T)
    for i in range(config.n_dec_layers):
        p = f"dec{i}"
        h = _norm(params, f"{p}.self.ln_g", f"{p}.self.ln_b", x)
        x = x + _attention(params, f"{p}.self", config, h, h, causal, rng)
        h = _norm(params, f"{p}.cross.ln_g", f"{p}.cross.ln_b", x)
        x = x + _attention(params, f"{p}.cross", config, h, memory,
                           cross_bias, rng)
        h = _norm(params, f"{p}.ffn.ln_g", f"{p}.ffn.ln_b", x)
        x = x + _ffn(params, f"{p}.ffn", config, h, rng)
    x = layer_norm(x, params["dec_ln_g"], params["dec_ln_b"])
    # tied output projection
    return matmul(x, params["tok_emb"].transpose())


def decode_step(params, config, memory, memory_mask, target_prefix,
                rng=None) -> np.ndarray:
    """Next-token logits [B, V] for the given prefix (length >= 1)."""
    if target_prefix.shape[1] < 1:
        raise NumericsError("decode_step: prefix must start with bos")
    logits = decoder_forward(params, config, memory, memory_mask,
                             target_prefix, rng)
    return logits.data[:, -1, :]


def forward_loss(params, config: ModelConfig, batch, rng=None):
    """Teacher-forced mean NLL over non-pad target tokens.

    Returns (loss Tensor, token count).
    """
    memory, memory_mask = encode(
        params, config, batch.input_ids, batch.input_mask,
        feats_list=batch.image_features, rng=rng)
    prefix = batch.target_ids[:, :-1]
    gold = np.where(batch.target_mask[:, 1:], batch.target_ids[:, 1:],
                    config.pad_id)
    logits = decoder_forward(params, config, memory, memory_mask, prefix, rng)
    return cross_entropy(logits, gold, config.pad_id)
