"""Calibration and discrimination metrics.

ACE is the bin-count-weighted mean |accuracy - confidence| over M equal-width
bins (the formula usually called ECE); MCE is the worst gap over non-empty
bins.  AUC is computed from exact concordant/tied pair counts so it matches
a pairwise oracle bit-for-bit, ties counted 1/2.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateDataError

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class BinnedReliability:
    """Per-bin sample count, mean confidence, and empirical accuracy over M
    equal-width bins of [0, 1]; the last bin is right-closed."""

    num_bins: int
    counts: np.ndarray
    conf: np.ndarray
    acc: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def bin_edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.num_bins + 1)


@dataclass(frozen=True)
class RocCurve:
    """ROC points ordered by threshold descending, plus the AUC.

    thresholds[i] is the score cutoff producing (fpr[i], tpr[i]); the first
    point is (0, 0) at threshold +inf and the last is (1, 1).
    """

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


@dataclass(frozen=True)
class EvalReport:
    """The full evaluation battery for one (confidence, label) pairing."""

    ace: float
    mce: float
    auc: float
    nll: float
    brier: float
    n: int
    m_bins: int
    reliability: BinnedReliability
    roc: RocCurve

    def summary(self) -> dict:
        return {
            "ace": self.ace,
            "mce": self.mce,
            "auc": self.auc,
            "nll": self.nll,
            "brier": self.brier,
            "n": self.n,
            "m_bins": self.m_bins,
        }


def _check_binary(labels: np.ndarray) -> None:
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")


def bin_reliability(confidences: Sequence[float], labels: Sequence[int], M: int = 10) -> BinnedReliability:
    """Partition [0, 1] into M equal-width bins; bin m covers
    [(m-1)/M, m/M), with the last bin closed at 1.  Empty bins are recorded
    with count 0 and conf = acc = 0."""
    conf = np.asarray(confidences, dtype=float)
    y = np.asarray(labels, dtype=float)
    if conf.shape != y.shape:
        raise ValueError(f"length mismatch: {conf.shape} confidences vs {y.shape} labels")
    if conf.size == 0:
        raise ValueError("need at least one sample")
    if M < 1:
        raise ValueError("M must be >= 1")
    _check_binary(y)
    if conf.min() < 0 or conf.max() > 1:
        raise ValueError("confidences must lie in [0, 1]")
    idx = np.minimum((conf * M).astype(int), M - 1)
    counts = np.bincount(idx, minlength=M).astype(int)
    conf_sum = np.bincount(idx, weights=conf, minlength=M)
    acc_sum = np.bincount(idx, weights=y, minlength=M)
    nonzero = counts > 0
    mean_conf = np.zeros(M)
    mean_acc = np.zeros(M)
    mean_conf[nonzero] = conf_sum[nonzero] / counts[nonzero]
    mean_acc[nonzero] = acc_sum[nonzero] / counts[nonzero]
    return BinnedReliability(num_bins=M, counts=counts, conf=mean_conf, acc=mean_acc)


def ace(b: BinnedReliability) -> float:
    """Average calibration error: sum_m (|B_m|/n) |acc(B_m) - conf(B_m)|."""
    n = b.n
    if n == 0:
        raise ValueError("reliability has no samples")
    return float(np.sum((b.counts / n) * np.abs(b.acc - b.conf)))


def mce(b: BinnedReliability) -> float:
    """Maximum calibration error over non-empty bins."""
    nonzero = b.counts > 0
    if not nonzero.any():
        raise ValueError("all bins are empty")
    return float(np.max(np.abs(b.acc[nonzero] - b.conf[nonzero])))


def _pair_counts(scores: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Concordant and tied (positive, negative) pair counts, by one sort."""
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    y = labels[order]
    concordant = 0.0
    ties = 0.0
    neg_below = 0.0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        pos = float(y[i:j].sum())
        neg = (j - i) - pos
        concordant += pos * neg_below
        ties += pos * neg
        neg_below += neg
        i = j
    return concordant, ties


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> RocCurve:
    """ROC curve and AUC with ties counted 1/2.

    AUC equals (#concordant + 0.5 #tied) / (#pos * #neg), computed from exact
    integer pair counts; the curve is the tie-grouped staircase from (0, 0)
    at threshold +inf to (1, 1).
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=float)
    if s.shape != y.shape:
        raise ValueError("scores and labels must have the same length")
    _check_binary(y)
    npos = float(y.sum())
    nneg = float(len(y) - npos)
    if npos == 0 or nneg == 0:
        raise DegenerateDataError("ROC needs both classes present")
    concordant, ties = _pair_counts(s, y)
    auc = (2.0 * concordant + ties) / (2.0 * npos * nneg)

    order = np.argsort(-s, kind="stable")
    s_desc = s[order]
    y_desc = y[order]
    distinct = np.nonzero(np.diff(s_desc))[0]
    group_ends = np.r_[distinct, len(s_desc) - 1]
    tp = np.cumsum(y_desc)[group_ends]
    fp = (group_ends + 1) - tp
    thresholds = np.r_[np.inf, s_desc[group_ends]]
    fpr = np.r_[0.0, fp / nneg]
    tpr = np.r_[0.0, tp / npos]
    return RocCurve(thresholds=thresholds, fpr=fpr, tpr=tpr, auc=float(auc))


def nll(probs: Sequence[float], labels: Sequence[int]) -> float:
    """Mean negative log-likelihood, probabilities clamped to
    [1e-12, 1 - 1e-12]."""
    p = np.clip(np.asarray(probs, dtype=float), PROB_FLOOR, 1.0 - PROB_FLOOR)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape:
        raise ValueError("probs and labels must have the same length")
    _check_binary(y)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def brier(probs: Sequence[float], labels: Sequence[int]) -> float:
    """Mean squared error between probabilities and binary outcomes."""
    p = np.asarray(probs, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape:
        raise ValueError("probs and labels must have the same length")
    _check_binary(y)
    return float(np.mean((p - y) ** 2))


def evaluate(confidences: Sequence[float], labels: Sequence[int], M: int = 10) -> EvalReport:
    """Run the whole battery on one (confidence, label) pairing."""
    rel = bin_reliability(confidences, labels, M)
    roc = roc_auc(confidences, labels)
    return EvalReport(
        ace=ace(rel),
        mce=mce(rel),
        auc=roc.auc,
        nll=nll(confidences, labels),
        brier=brier(confidences, labels),
        n=rel.n,
        m_bins=M,
        reliability=rel,
        roc=roc,
    )


def write_reliability_csv(rel: BinnedReliability, path) -> None:
    """CSV: bin_lo,bin_hi,count,conf,acc — one row per bin."""
    edges = rel.bin_edges()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count", "conf", "acc"])
        for m in range(rel.num_bins):
            w.writerow([repr(float(edges[m])), repr(float(edges[m + 1])),
                        int(rel.counts[m]), repr(float(rel.conf[m])), repr(float(rel.acc[m]))])


def write_roc_csv(roc: RocCurve, path) -> None:
    """CSV: threshold,fpr,tpr — one row per curve point."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, tp in zip(roc.thresholds, roc.fpr, roc.tpr):
            w.writerow([repr(float(t)), repr(float(f)), repr(float(tp))])


def write_summary_json(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report.summary(), fh, sort_keys=True)
        fh.write("\n")
