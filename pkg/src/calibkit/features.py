"""Feature extraction for the calibrator.

The central object is the attention flow: the sequence of [CLS]->[SEP]
attention weights across encoder layers, treated as a discrete-time signal.
From it we derive a Shannon entropy (how spread the flow is over layers),
first differences, and a mean, alongside the score- and length-based features.

reference_attention is a plain scaled dot-product attention used only by
tests to validate exporter dumps; it is not part of the feature pipeline.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data_model import AttentionRecord, FeatureVector, RankedQueryRecord

# An attention flow is a 1-D array with one value per layer, each in [0, 1].
AttentionFlow = np.ndarray

HeadMode = int | str  # "mean" or a head index


@dataclass(frozen=True)
class FeatureConfig:
    """Which feature blocks to emit and how to aggregate attention heads.

    head_mode is "mean" (average the flow over heads) or an integer head
    index.  The flow-derived blocks can be disabled individually; the base
    configuration (entropy and deltas off, mean on) reproduces the feature
    set of the prior score+attention calibrator.
    """

    head_mode: HeadMode = "mean"
    include_flow_entropy: bool = True
    include_flow_deltas: bool = True
    include_flow_mean: bool = True

    @classmethod
    def base(cls) -> "FeatureConfig":
        return cls(include_flow_entropy=False, include_flow_deltas=False)


def attention_flow(rec: AttentionRecord, head_mode: HeadMode = "mean") -> AttentionFlow:
    """Per-layer [CLS]->[SEP] attention, aggregated over heads.

    head_mode "mean" averages the heads; an integer selects a single head.
    """
    if head_mode == "mean":
        return rec.cls_to_sep.mean(axis=1)
    h = int(head_mode)
    if not (0 <= h < rec.num_heads):
        raise ValueError(f"head index {h} out of range [0, {rec.num_heads})")
    return rec.cls_to_sep[:, h].copy()


def flow_entropy(flow: Sequence[float]) -> float:
    """Shannon entropy (natural log) of the flow, normalized to a distribution.

    0 * ln 0 is taken as 0; the result lies in [0, ln(len(flow))].
    """
    a = np.asarray(flow, dtype=float)
    if a.min() < 0:
        raise ValueError("flow entries must be non-negative")
    total = a.sum()
    if total <= 0:
        raise ValueError("entropy undefined for an all-zero flow")
    p = a / total
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def delta_scores(xs: Sequence[float]) -> np.ndarray:
    """First differences x[i+1] - x[i]; length len(xs) - 1."""
    a = np.asarray(xs, dtype=float)
    if a.shape[0] < 2:
        raise ValueError("need at least 2 values to take deltas")
    return np.diff(a)


def topk_variance(scores: Sequence[float]) -> float:
    """Population variance (divide by k) of the top-k scores."""
    a = np.asarray(scores, dtype=float)
    if a.shape[0] < 2:
        raise ValueError("variance needs at least 2 scores")
    return float(np.mean((a - a.mean()) ** 2))


def feature_names(k: int, num_layers: int, config: FeatureConfig = FeatureConfig()) -> list[str]:
    """The fixed column order for (k, num_layers) under a config.

    Blocks, in order: query length; per-candidate answer lengths; top-k
    scores; score variance; score deltas; per-candidate flow entropy;
    per-candidate flow deltas; per-candidate flow mean.
    """
    names = ["query_len"]
    names += [f"top{i}_answer_len" for i in range(1, k + 1)]
    names += [f"top{i}_softmax" for i in range(1, k + 1)]
    names += ["softmax_variance"]
    names += [f"softmax_delta_{j:02d}" for j in range(1, k)]
    if config.include_flow_entropy:
        names += [f"top{i}_flow_entropy" for i in range(1, k + 1)]
    if config.include_flow_deltas:
        names += [
            f"top{i}_flow_delta_{j:02d}"
            for i in range(1, k + 1)
            for j in range(1, num_layers)
        ]
    if config.include_flow_mean:
        names += [f"top{i}_flowmean" for i in range(1, k + 1)]
    return names


def build_features(rec: RankedQueryRecord, config: FeatureConfig = FeatureConfig()) -> FeatureVector:
    """Assemble the feature vector for one record, in the documented order."""
    k = len(rec.candidates)
    scores = [c.softmax_score for c in rec.candidates]
    values = [float(rec.query_token_length)]
    values += [float(c.answer_token_length) for c in rec.candidates]
    values += scores
    values.append(topk_variance(scores))
    values += delta_scores(scores).tolist()

    flows = []
    for i, cand in enumerate(rec.candidates, start=1):
        try:
            flows.append(attention_flow(cand.attention, config.head_mode))
        except ValueError as e:
            raise ValueError(f"candidate {i}: {e}") from e
    if config.include_flow_entropy:
        for i, flow in enumerate(flows, start=1):
            try:
                values.append(flow_entropy(flow))
            except ValueError as e:
                raise ValueError(f"candidate {i}: {e}") from e
    if config.include_flow_deltas and rec.num_layers >= 2:
        for i, flow in enumerate(flows, start=1):
            try:
                values += delta_scores(flow).tolist()
            except ValueError as e:
                raise ValueError(f"candidate {i}: {e}") from e
    if config.include_flow_mean:
        values += [float(flow.mean()) for flow in flows]

    names = feature_names(k, rec.num_layers, config)
    return FeatureVector(names=tuple(names), values=np.asarray(values))


def write_feature_csv(records: Iterable[RankedQueryRecord], config: FeatureConfig, path,
                      threads: int = 1) -> int:
    """Write the feature matrix as CSV (header of names, final column `label`).

    Column order is fixed by build_features; all records must share (k, N).
    Returns the number of rows written.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to extract features from")
    shapes = {(len(r.candidates), r.num_layers) for r in records}
    if len(shapes) > 1:
        raise ValueError(f"records disagree on (k, num_layers): {sorted(shapes)}")
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            vectors = list(pool.map(lambda r: build_features(r, config), records))
    else:
        vectors = [build_features(r, config) for r in records]
    header = list(vectors[0].names) + ["label"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for rec, vec in zip(records, vectors):
            writer.writerow([repr(v) for v in vec.values.tolist()] + [rec.label])
    return len(records)


def read_feature_csv(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Read a feature CSV back as (names, X, labels)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    if header[-1] != "label":
        raise ValueError("feature CSV must end with a label column")
    data = np.asarray(rows, dtype=float)
    if data.size == 0:
        raise ValueError(f"feature CSV {path} has no rows")
    return header[:-1], data[:, :-1], data[:, -1]


def reference_attention(Q: np.ndarray, K: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Scaled dot-product attention: softmax(Q K^T / sqrt(d_k)) V.

    Test oracle only; row-wise softmax is computed stably so each weight row
    sums to 1 within 1e-9.
    """
    Q, K, V = (np.asarray(m, dtype=float) for m in (Q, K, V))
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise ValueError("Q, K, V must be 2-D matrices")
    if Q.shape[1] != K.shape[1]:
        raise ValueError(f"Q has d_k={Q.shape[1]} but K has d_k={K.shape[1]}")
    if K.shape[0] != V.shape[0]:
        raise ValueError(f"K has {K.shape[0]} rows but V has {V.shape[0]}")
    logits = Q @ K.T / np.sqrt(Q.shape[1])
    logits -= logits.max(axis=1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=1, keepdims=True)
    return weights @ V
