"""The three post-hoc baselines: Platt scaling, temperature scaling, and
isotonic regression.

All three are fit on held-out data and leave the underlying ranker untouched;
they only remap its scores.  Platt fits sigma(a z + b) by Newton iterations
on the NLL; temperature fits a single T > 0 by golden-section search on the
multiclass NLL; isotonic fits a monotone non-decreasing step function by
pool-adjacent-violators.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateDataError, SeparationWarning

PROB_CLAMP = 1e-12
COEF_CLAMP = 30.0
T_MIN, T_MAX = 1e-2, 1e2


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def clamp_prob(p):
    """Clamp probabilities away from 0 and 1 before taking logs."""
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def prob_to_logit(p) -> np.ndarray:
    """Log-odds of a probability, clamped away from +-inf."""
    p = clamp_prob(np.asarray(p, dtype=float))
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class PlattModel:
    """q = sigma(a z + b) applied to a scalar logit z."""

    a: float
    b: float


@dataclass(frozen=True)
class TemperatureModel:
    """q = softmax(z / t) applied to a logit vector z."""

    t: float

    def __post_init__(self):
        if not (self.t > 0):
            raise ValueError("temperature must be > 0")


@dataclass(frozen=True)
class IsotonicModel:
    """Piecewise-constant monotone map: value values[m] on
    [boundaries[m], boundaries[m+1]), last interval right-closed."""

    boundaries: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        v = np.asarray(self.values, dtype=float)
        b.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "values", v)
        if b.shape[0] != v.shape[0] + 1:
            raise ValueError("need one more boundary than values")
        if b[0] != 0.0 or b[-1] != 1.0:
            raise ValueError("boundaries must start at 0 and end at 1")
        if np.any(np.diff(b) < 0):
            raise ValueError("boundaries must be sorted")
        if np.any(np.diff(v) < -1e-12):
            raise ValueError("step values must be non-decreasing")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("step values must lie in [0, 1]")


def _binary_nll(z: np.ndarray, y: np.ndarray, a: float, b: float) -> float:
    p = clamp_prob(_sigmoid(a * z + b))
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def fit_platt(logits: Sequence[float], labels: Sequence[int]) -> PlattModel:
    """Fit (a, b) minimizing the NLL of sigma(a z + b), by damped Newton.

    Raises DegenerateDataError when only one class is present.  On perfectly
    separable data the NLL has no finite minimizer: coefficients are clamped
    at |a|, |b| <= 30 and a SeparationWarning is issued.  A constant logit
    column leaves a unidentifiable; the fit returns a = 0, b = logit(mean y).
    """
    z = np.asarray(logits, dtype=float)
    y = np.asarray(labels, dtype=float)
    if z.shape != y.shape:
        raise ValueError("logits and labels must have the same length")
    if z.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    ybar = y.mean()
    if ybar == 0.0 or ybar == 1.0:
        raise DegenerateDataError("labels contain a single class")
    base_b = float(math.log(ybar / (1.0 - ybar)))
    if np.all(z == z[0]):
        return PlattModel(a=0.0, b=base_b)
    pos, neg = z[y == 1], z[y == 0]
    if pos.min() > neg.max() or pos.max() < neg.min():
        warnings.warn(
            "data is perfectly separable; the NLL has no finite minimizer and "
            "Platt coefficients are capped at 30",
            SeparationWarning,
            stacklevel=2,
        )

    a, b = 0.0, base_b
    nll = _binary_nll(z, y, a, b)
    for _ in range(100):
        p = _sigmoid(a * z + b)
        grad = np.array([np.dot(p - y, z), np.sum(p - y)])
        if max(abs(grad[0]), abs(grad[1])) <= 1e-8:
            break
        w = p * (1.0 - p)
        h11 = np.dot(w, z * z)
        h12 = np.dot(w, z)
        h22 = np.sum(w)
        hess = np.array([[h11, h12], [h12, h22]])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        scale = 1.0
        for _ in range(60):
            na, nb = a - scale * step[0], b - scale * step[1]
            new_nll = _binary_nll(z, y, na, nb)
            if new_nll <= nll + 1e-15:
                break
            scale *= 0.5
        a, b, nll = na, nb, new_nll
        if abs(a) > COEF_CLAMP or abs(b) > COEF_CLAMP:
            a = float(np.clip(a, -COEF_CLAMP, COEF_CLAMP))
            b = float(np.clip(b, -COEF_CLAMP, COEF_CLAMP))
            break
    return PlattModel(a=float(a), b=float(b))


def apply_platt(m: PlattModel, z) -> float | np.ndarray:
    """sigma(a z + b), clamped to [1e-12, 1 - 1e-12]."""
    out = clamp_prob(_sigmoid(m.a * np.asarray(z, dtype=float) + m.b))
    return float(out) if out.ndim == 0 else out


def _multiclass_nll(logits: np.ndarray, labels: np.ndarray, t: float) -> float:
    z = logits / t
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(lse - z[np.arange(z.shape[0]), labels]))


def fit_temperature(logit_vectors: Sequence[Sequence[float]], labels: Sequence[int]) -> TemperatureModel:
    """Fit T > 0 minimizing the multiclass NLL of softmax(z / T).

    Golden-section search on ln T over [ln 0.01, ln 100]; the NLL is smooth
    and unimodal in T, so the bracket shrinks to the minimizer within 1e-4.
    Scaling by 1/T never reorders a logit vector, so each sample keeps its
    argmax.
    """
    z = np.asarray(logit_vectors, dtype=float)
    y = np.asarray(labels, dtype=int)
    if z.ndim != 2 or z.shape[1] < 2:
        raise ValueError("need K >= 2 classes of logits")
    if z.shape[0] != y.shape[0]:
        raise ValueError("logit vectors and labels must have the same length")
    if z.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    if y.min() < 0 or y.max() >= z.shape[1]:
        raise ValueError("labels must index into the K classes")

    lo, hi = math.log(T_MIN), math.log(T_MAX)
    inv_gr = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - inv_gr * (hi - lo)
    d = lo + inv_gr * (hi - lo)
    fc = _multiclass_nll(z, y, math.exp(c))
    fd = _multiclass_nll(z, y, math.exp(d))
    # 1e-7 on ln T gives |T - T*| well under 1e-4 across the whole range
    while hi - lo > 1e-7:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - inv_gr * (hi - lo)
            fc = _multiclass_nll(z, y, math.exp(c))
        else:
            lo, c, fc = c, d, fd
            d = lo + inv_gr * (hi - lo)
            fd = _multiclass_nll(z, y, math.exp(d))
    t = math.exp(0.5 * (lo + hi))
    return TemperatureModel(t=float(t))


def apply_temperature(m: TemperatureModel, z: Sequence[float]) -> np.ndarray:
    """softmax(z / t); sums to 1 and keeps the argmax of z."""
    zz = np.asarray(z, dtype=float) / m.t
    zz = zz - zz.max()
    e = np.exp(zz)
    return e / e.sum()


def temperature_scale_prob(m: TemperatureModel, p) -> float | np.ndarray:
    """Temperature-scale a scalar confidence via its two-class pseudo-logits
    [ln p, ln(1-p)]: sigma(logit(p) / t).

    This is the scalar route the evaluator uses when only a probability is
    stored; it is strictly increasing in p, so rankings (and AUC) are
    preserved exactly.
    """
    out = clamp_prob(_sigmoid(prob_to_logit(p) / m.t))
    return float(out) if out.ndim == 0 else out


def fit_isotonic(scores: Sequence[float], labels: Sequence[int]) -> IsotonicModel:
    """Least-squares monotone step fit by pool-adjacent-violators.

    Samples are sorted by score, ties pooled into one block, then adjacent
    blocks with out-of-order means merged until the block means are
    non-decreasing.  Interval boundaries fall midway between adjacent block
    score ranges, padded to [0, 1].
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=float)
    if s.shape != y.shape:
        raise ValueError("scores and labels must have the same length")
    if s.shape[0] == 0:
        raise DegenerateDataError("cannot fit isotonic regression on no samples")
    if s.min() < 0 or s.max() > 1:
        raise ValueError("scores must lie in [0, 1]")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")

    order = np.argsort(s, kind="stable")
    s = s[order]
    y = y[order]

    # blocks as (value sum, weight, min score, max score); ties pre-pooled
    sums: list[float] = []
    weights: list[float] = []
    los: list[float] = []
    his: list[float] = []
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        sums.append(float(y[i:j].sum()))
        weights.append(float(j - i))
        los.append(float(s[i]))
        his.append(float(s[i]))
        i = j

    merged_sums: list[float] = []
    merged_w: list[float] = []
    merged_lo: list[float] = []
    merged_hi: list[float] = []
    for su, w, lo, hi in zip(sums, weights, los, his):
        merged_sums.append(su)
        merged_w.append(w)
        merged_lo.append(lo)
        merged_hi.append(hi)
        while (
            len(merged_sums) > 1
            and merged_sums[-2] * merged_w[-1] >= merged_sums[-1] * merged_w[-2]
        ):
            su2 = merged_sums.pop()
            w2 = merged_w.pop()
            merged_lo.pop()
            hi2 = merged_hi.pop()
            merged_sums[-1] += su2
            merged_w[-1] += w2
            merged_hi[-1] = hi2

    values = np.array([su / w for su, w in zip(merged_sums, merged_w)])
    boundaries = np.empty(len(values) + 1)
    boundaries[0] = 0.0
    boundaries[-1] = 1.0
    for m in range(1, len(values)):
        boundaries[m] = 0.5 * (merged_hi[m - 1] + merged_lo[m])
    return IsotonicModel(boundaries=boundaries, values=values)


def apply_isotonic(m: IsotonicModel, p) -> float | np.ndarray:
    """Step value for the interval containing p (last interval right-closed),
    clamped to [0, 1]."""
    p = np.asarray(p, dtype=float)
    idx = np.searchsorted(m.boundaries, p, side="right") - 1
    idx = np.clip(idx, 0, len(m.values) - 1)
    out = np.clip(m.values[idx], 0.0, 1.0)
    return float(out) if out.ndim == 0 else out
