"""Synthetic ranker outputs for desk-scale experiments.

gen_miscalibrated models an overconfident ranker: per query, a latent
certainty magnitude is drawn and applied to a fixed logit profile over k+1
classes; the correct class follows softmax(latents) while the reported
scores are the top-k of softmax(latents * T0).  T0 > 1 therefore sharpens the
reported scores without moving the truth.  Because every latent vector is the
shared profile scaled by a per-query magnitude, the top-1 probability is a
strictly increasing function of that magnitude at any temperature, so
temperature scaling provably leaves the confidence ranking (hence AUC)
untouched while the miscalibration gap moves.

gen_flow_signal makes records whose attention flows carry label signal:
correct candidates get peaked (low-entropy) flows, incorrect ones diffuse
(high-entropy) flows, mixed with label-independent noise flows by
signal_strength.  Flows are scaled to a fixed sum so their mean is
uninformative; only their shape (entropy, deltas) carries the signal.
"""

from __future__ import annotations

import numpy as np

from .data_model import AttentionRecord, CandidateAnswer, RankedQueryRecord

# Magnitude scale of the certainty draw; gives ~0.60 top-1 accuracy with the
# default profile.  Reported by the CLI for reproducibility.
LATENT_SCALE = 1.3
FLOW_SUM = 0.5


def latent_profile(k: int) -> np.ndarray:
    """Fixed, strictly decreasing, zero-mean logit profile over k+1 classes."""
    return np.linspace(1.5, -1.5, k + 1)


def _draw_correct_class(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    u = rng.random(probs.shape[0])
    return (probs.cumsum(axis=1) < u[:, None]).sum(axis=1)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def gen_miscalibrated(n: int, k: int = 3, sharpen: float = 2.67, seed: int = 0,
                      layers: int = 4, heads: int = 2) -> list[RankedQueryRecord]:
    """Records whose reported scores are sharpened by a factor `sharpen` (T0)
    relative to the true correctness probabilities.

    Attention here is label-independent noise; use gen_flow_signal when the
    flows should carry signal.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if sharpen <= 0:
        raise ValueError("sharpen must be > 0")
    rng = np.random.default_rng(seed)
    v = latent_profile(k)
    alpha = np.abs(rng.normal(0.0, LATENT_SCALE, n))
    z = alpha[:, None] * v[None, :]
    p_true = _softmax(z)
    c = _draw_correct_class(rng, p_true)
    p_rep = _softmax(sharpen * z)

    query_len = rng.integers(3, 21, n)
    answer_len = rng.integers(5, 61, (n, k))
    attn = rng.uniform(0.0, 1.0, (n, k, layers, heads))

    records = []
    for i in range(n):
        cands = []
        for j in range(k):
            cands.append(CandidateAnswer(
                softmax_score=float(p_rep[i, j]),
                answer_token_length=int(answer_len[i, j]),
                is_correct=bool(c[i] == j),
                attention=AttentionRecord(
                    num_layers=layers, num_heads=heads, cls_to_sep=attn[i, j],
                ),
            ))
        records.append(RankedQueryRecord(
            query_id=f"miscal-{i:06d}",
            query_token_length=int(query_len[i]),
            candidates=tuple(cands),
            label=int(c[i] < k),
        ))
    return records


def _flow_shapes(rng: np.random.Generator, peaked: np.ndarray, layers: int) -> np.ndarray:
    """Row-stochastic flow shapes: one dominant layer when peaked[i], near
    uniform otherwise."""
    m = peaked.shape[0]
    w = rng.uniform(0.8, 1.2, (m, layers))
    spike = rng.uniform(0.01, 0.05, (m, layers))
    spike[np.arange(m), rng.integers(0, layers, m)] = rng.uniform(2.0, 4.0, m)
    w[peaked] = spike[peaked]
    return w / w.sum(axis=1, keepdims=True)


def gen_flow_signal(n: int, layers: int = 12, heads: int = 4,
                    signal_strength: float = 0.7, seed: int = 0,
                    k: int = 3) -> list[RankedQueryRecord]:
    """Records where flow entropy predicts per-candidate correctness.

    With probability signal_strength a candidate's flow shape reflects its
    correctness (peaked iff correct); otherwise the shape is a fair coin,
    independent of the label.  signal_strength 0 decouples entropy from the
    labels entirely; 1 separates them cleanly.
    """
    if not (0.0 <= signal_strength <= 1.0):
        raise ValueError("signal_strength must be in [0, 1]")
    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, 1.0, (n, k + 1))
    z.sort(axis=1)
    z = z[:, ::-1]  # candidates ordered by latent, residual class last
    p_true = _softmax(z)
    c = _draw_correct_class(rng, p_true)
    p_rep = p_true  # scores carry only the latent signal; no sharpening

    correct = c[:, None] == np.arange(k)[None, :]
    use_signal = rng.random((n, k)) < signal_strength
    coin = rng.random((n, k)) < 0.5
    peaked = np.where(use_signal, correct, coin)
    shapes = _flow_shapes(rng, peaked.reshape(-1), layers).reshape(n, k, layers)
    flows = shapes * FLOW_SUM

    query_len = rng.integers(3, 21, n)
    answer_len = rng.integers(5, 61, (n, k))

    records = []
    for i in range(n):
        cands = []
        for j in range(k):
            cls_to_sep = np.repeat(flows[i, j][:, None], heads, axis=1)
            cands.append(CandidateAnswer(
                softmax_score=float(p_rep[i, j]),
                answer_token_length=int(answer_len[i, j]),
                is_correct=bool(correct[i, j]),
                attention=AttentionRecord(
                    num_layers=layers, num_heads=heads, cls_to_sep=cls_to_sep,
                ),
            ))
        records.append(RankedQueryRecord(
            query_id=f"flowsig-{i:06d}",
            query_token_length=int(query_len[i]),
            candidates=tuple(cands),
            label=int(c[i] < k),
        ))
    return records
