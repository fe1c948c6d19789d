"""A small, self-contained BERT-style encoder with inspectable attention.

Weights are randomly initialized from a seed (there is no training here);
the exporter only needs an encoder whose per-layer, per-head attention
probabilities are real softmax rows over a real sequence.  The forward pass
keeps a full trace: attention probabilities plus the per-head query/key
matrices, so tests can recompute the attention from Q and K independently.

Everything runs in eval mode; there is no dropout, so encoding is
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int
    num_heads: int
    d_head: int = 8
    ffn_multiplier: int = 2
    vocab_size: int = 512
    max_len: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.num_layers < 1 or self.num_heads < 1 or self.d_head < 1:
            raise ValueError("layers, heads and d_head must be >= 1")

    @property
    def hidden(self) -> int:
        return self.num_heads * self.d_head


@dataclass(frozen=True)
class EncoderTrace:
    """attn[l, h] is the softmax weight matrix of head h in layer l;
    q[l, h] / k[l, h] are the matching query/key matrices."""

    attn: np.ndarray  # [L, H, S, S]
    q: np.ndarray     # [L, H, S, d_head]
    k: np.ndarray     # [L, H, S, d_head]
    hidden: np.ndarray  # [S, hidden]


def _layer_norm(x, gamma, beta, eps=1e-12):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


def _softmax_rows(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class TinyEncoder:
    """Randomly initialized multi-layer multi-head self-attention encoder."""

    def __init__(self, config: EncoderConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        h = config.hidden
        scale = 1.0 / np.sqrt(h)

        def w(*shape):
            return rng.normal(0.0, scale, shape)

        self.tok_emb = rng.normal(0.0, 1.0, (config.vocab_size, h))
        self.pos_emb = rng.normal(0.0, 1.0, (config.max_len, h))
        self.seg_emb = rng.normal(0.0, 1.0, (2, h))
        self.emb_ln = (np.ones(h), np.zeros(h))
        self.layers = []
        for _ in range(config.num_layers):
            ffn = config.ffn_multiplier * h
            self.layers.append({
                "wq": w(h, h), "bq": rng.normal(0.0, 0.01, h),
                "wk": w(h, h), "bk": rng.normal(0.0, 0.01, h),
                "wv": w(h, h), "bv": rng.normal(0.0, 0.01, h),
                "wo": w(h, h), "bo": rng.normal(0.0, 0.01, h),
                "w1": w(h, ffn), "b1": rng.normal(0.0, 0.01, ffn),
                "w2": rng.normal(0.0, 1.0 / np.sqrt(ffn), (ffn, h)),
                "b2": rng.normal(0.0, 0.01, h),
                "ln1": (np.ones(h), np.zeros(h)),
                "ln2": (np.ones(h), np.zeros(h)),
            })

    def encode(self, token_ids, segment_ids) -> EncoderTrace:
        cfg = self.config
        ids = np.asarray(token_ids, dtype=int)
        segs = np.asarray(segment_ids, dtype=int)
        if ids.shape != segs.shape or ids.ndim != 1:
            raise ValueError("token and segment ids must be equal-length 1-D")
        S = ids.shape[0]
        if S > cfg.max_len:
            raise ValueError(f"sequence length {S} exceeds max_len {cfg.max_len}")
        if ids.min() < 0 or ids.max() >= cfg.vocab_size:
            raise ValueError("token id outside the vocabulary")

        H, dk = cfg.num_heads, cfg.d_head
        x = self.tok_emb[ids] + self.pos_emb[:S] + self.seg_emb[segs]
        x = _layer_norm(x, *self.emb_ln)

        attn = np.empty((cfg.num_layers, H, S, S))
        qs = np.empty((cfg.num_layers, H, S, dk))
        ks = np.empty((cfg.num_layers, H, S, dk))
        for l, p in enumerate(self.layers):
            q = (x @ p["wq"] + p["bq"]).reshape(S, H, dk).transpose(1, 0, 2)
            k = (x @ p["wk"] + p["bk"]).reshape(S, H, dk).transpose(1, 0, 2)
            v = (x @ p["wv"] + p["bv"]).reshape(S, H, dk).transpose(1, 0, 2)
            probs = _softmax_rows(q @ k.transpose(0, 2, 1) / np.sqrt(dk))
            ctx = (probs @ v).transpose(1, 0, 2).reshape(S, H * dk)
            x = _layer_norm(x + ctx @ p["wo"] + p["bo"], *p["ln1"])
            ff = _gelu(x @ p["w1"] + p["b1"]) @ p["w2"] + p["b2"]
            x = _layer_norm(x + ff, *p["ln2"])
            attn[l], qs[l], ks[l] = probs, q, k
        return EncoderTrace(attn=attn, q=qs, k=ks, hidden=x)


def encoder_from_model_id(model_id: str, seed: int = 0, max_len: int = 64) -> TinyEncoder:
    """Build an encoder from an id like 'tiny-2x2' (layers x heads) or
    'tiny-12x12-d4' (with a head dimension override)."""
    parts = model_id.split("-")
    if len(parts) < 2 or parts[0] != "tiny" or "x" not in parts[1]:
        raise ValueError(
            f"unknown model id {model_id!r}; expected 'tiny-<layers>x<heads>[-d<dim>]'")
    layers_s, heads_s = parts[1].split("x", 1)
    d_head = 8
    for extra in parts[2:]:
        if extra.startswith("d"):
            d_head = int(extra[1:])
        else:
            raise ValueError(f"unknown model id suffix {extra!r}")
    config = EncoderConfig(num_layers=int(layers_s), num_heads=int(heads_s),
                           d_head=d_head, seed=seed, max_len=max_len)
    return TinyEncoder(config)
