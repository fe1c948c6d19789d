"""Domain types, the labeling rule, and (de)serialization of record files.

A record file is newline-delimited JSON, one query per line.  Each query
carries its top-k candidate answers sorted by softmax score, per-candidate
attention summaries, and a binary label: 1 iff at least one of the k
candidates is a correct answer.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import RecordError, ResortWarning

SCORE_SUM_TOL = 1e-6
CLS_ROW_SUM_TOL = 1e-5
CLS_ROW_MATCH_TOL = 1e-6


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AttentionRecord:
    """Per-layer, per-head attention weight from the [CLS] position to the
    chosen [SEP] position, for one (query, candidate) pair.

    cls_to_sep has shape [num_layers, num_heads]; entries are softmax weights
    in [0, 1].  cls_row, when present, holds the full [CLS] attention row
    ([num_layers, num_heads, seq_len]) so the scalar can be re-validated.
    """

    num_layers: int
    num_heads: int
    cls_to_sep: np.ndarray
    sep_index_used: int = 0
    cls_row: np.ndarray | None = None

    def __post_init__(self):
        if self.num_layers < 1 or self.num_heads < 1:
            raise RecordError("num_layers and num_heads must be >= 1")
        cts = _readonly(self.cls_to_sep)
        object.__setattr__(self, "cls_to_sep", cts)
        if cts.shape != (self.num_layers, self.num_heads):
            raise RecordError(
                f"cls_to_sep shape {cts.shape} != ({self.num_layers}, {self.num_heads})"
            )
        if not np.all(np.isfinite(cts)) or cts.min() < 0.0 or cts.max() > 1.0:
            raise RecordError("cls_to_sep entries must be finite and in [0, 1]")
        if self.cls_row is not None:
            row = _readonly(self.cls_row)
            object.__setattr__(self, "cls_row", row)
            if row.ndim != 3 or row.shape[:2] != (self.num_layers, self.num_heads):
                raise RecordError("cls_row must have shape [layers, heads, seq_len]")
            if not (0 <= self.sep_index_used < row.shape[2]):
                raise RecordError("sep_index_used outside cls_row sequence length")
            sums = row.sum(axis=2)
            if sums.max() > 1.0 + CLS_ROW_SUM_TOL:
                raise RecordError("a cls_row slice sums to more than 1")
            if np.max(np.abs(row[:, :, self.sep_index_used] - cts)) > CLS_ROW_MATCH_TOL:
                raise RecordError("cls_to_sep disagrees with cls_row at sep_index_used")


@dataclass(frozen=True)
class CandidateAnswer:
    """One ranked answer: its softmax score, token length, optional
    correctness flag, and attention summary."""

    softmax_score: float
    answer_token_length: int
    attention: AttentionRecord
    is_correct: bool | None = None

    def __post_init__(self):
        s = self.softmax_score
        if not (isinstance(s, (int, float)) and math.isfinite(s) and 0.0 <= s <= 1.0):
            raise RecordError(f"softmax_score {s!r} not a probability")
        if self.answer_token_length < 0:
            raise RecordError("answer_token_length must be >= 0")


@dataclass(frozen=True)
class RankedQueryRecord:
    """One query with its top-k candidates (sorted by score, descending) and
    binary label: 1 iff any candidate is correct."""

    query_id: str
    query_token_length: int
    candidates: tuple[CandidateAnswer, ...]
    label: int

    def __post_init__(self):
        if self.query_token_length < 0:
            raise RecordError("query_token_length must be >= 0")
        if self.label not in (0, 1):
            raise RecordError(f"label must be 0 or 1, got {self.label!r}")
        cands = tuple(self.candidates)
        object.__setattr__(self, "candidates", cands)
        if not cands:
            raise RecordError("record must have at least one candidate")
        scores = [c.softmax_score for c in cands]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise RecordError("candidates must be sorted by score, descending")
        if sum(scores) > 1.0 + SCORE_SUM_TOL:
            raise RecordError(f"candidate scores sum to {sum(scores)} > 1")
        flags = [c.is_correct for c in cands]
        if all(f is not None for f in flags) and self.label != derive_label(cands):
            raise RecordError(
                f"label {self.label} disagrees with is_correct flags for {self.query_id!r}"
            )
        shapes = {(c.attention.num_layers, c.attention.num_heads) for c in cands}
        if len(shapes) > 1:
            raise RecordError(f"attention shape mismatch across candidates of {self.query_id!r}")

    @property
    def num_layers(self) -> int:
        return self.candidates[0].attention.num_layers

    @property
    def num_heads(self) -> int:
        return self.candidates[0].attention.num_heads


@dataclass(frozen=True)
class FeatureVector:
    """Named, ordered numeric features for one record."""

    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        vals = _readonly(self.values)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) != vals.shape[0]:
            raise ValueError("names and values must have the same length")
        if len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique")
        if not np.all(np.isfinite(vals)):
            raise ValueError("feature values must be finite")

    def __len__(self) -> int:
        return len(self.names)


def derive_label(candidates: Sequence[CandidateAnswer]) -> int:
    """1 iff at least one candidate is a right answer, 0 otherwise."""
    if not candidates:
        raise RecordError("cannot derive a label from an empty candidate list")
    return int(any(c.is_correct for c in candidates))


def _attention_from_dict(d: dict) -> AttentionRecord:
    return AttentionRecord(
        num_layers=int(d["num_layers"]),
        num_heads=int(d["num_heads"]),
        cls_to_sep=np.asarray(d["cls_to_sep"], dtype=float),
        sep_index_used=int(d.get("sep_index_used", 0)),
        cls_row=None if d.get("cls_row") is None else np.asarray(d["cls_row"], dtype=float),
    )


def _candidate_from_dict(d: dict) -> CandidateAnswer:
    return CandidateAnswer(
        softmax_score=float(d["softmax_score"]),
        answer_token_length=int(d["answer_token_length"]),
        attention=_attention_from_dict(d["attention"]),
        is_correct=None if d.get("is_correct") is None else bool(d["is_correct"]),
    )


def record_from_dict(d: dict, k: int) -> RankedQueryRecord:
    """Build and validate one record; re-sorts candidates, warning if needed."""
    query_id = str(d["query_id"])
    raw = d.get("candidates", [])
    if len(raw) != k:
        raise RecordError(f"query {query_id!r} has {len(raw)} candidates, expected {k}")
    cands = [_candidate_from_dict(c) for c in raw]
    scores = [c.softmax_score for c in cands]
    if any(a < b for a, b in zip(scores, scores[1:])):
        cands = sorted(cands, key=lambda c: -c.softmax_score)
        warnings.warn(
            f"candidates of query {query_id!r} were not sorted by score; re-sorted",
            ResortWarning,
            stacklevel=2,
        )
    flags = [c.is_correct for c in cands]
    explicit = d.get("label")
    if all(f is not None for f in flags):
        label = derive_label(cands)
        if explicit is not None and int(explicit) != label:
            raise RecordError(
                f"query {query_id!r}: stored label {explicit} disagrees with is_correct flags"
            )
    elif explicit is not None:
        label = int(explicit)
    else:
        raise RecordError(f"query {query_id!r} has neither a label nor complete is_correct flags")
    return RankedQueryRecord(
        query_id=query_id,
        query_token_length=int(d["query_token_length"]),
        candidates=tuple(cands),
        label=label,
    )


def load_records(path, k: int = 3) -> list[RankedQueryRecord]:
    """Load a newline-delimited JSON record file.

    Emits a ResortWarning per record whose candidates arrived unsorted.
    Raises RecordError (with the line number) on any malformed line.
    """
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise RecordError(f"{path}: line {lineno}: invalid JSON ({e.msg})") from e
            try:
                records.append(record_from_dict(d, k))
            except RecordError as e:
                raise RecordError(f"{path}: line {lineno}: {e}") from e
            except (KeyError, TypeError, ValueError) as e:
                raise RecordError(f"{path}: line {lineno}: bad record ({e})") from e
    return records


def _attention_to_dict(a: AttentionRecord) -> dict:
    d = {
        "num_layers": a.num_layers,
        "num_heads": a.num_heads,
        "cls_to_sep": a.cls_to_sep.tolist(),
        "sep_index_used": a.sep_index_used,
    }
    if a.cls_row is not None:
        d["cls_row"] = a.cls_row.tolist()
    return d


def record_to_dict(rec: RankedQueryRecord) -> dict:
    cands = []
    for c in rec.candidates:
        cd = {
            "softmax_score": c.softmax_score,
            "answer_token_length": c.answer_token_length,
            "attention": _attention_to_dict(c.attention),
        }
        if c.is_correct is not None:
            cd["is_correct"] = c.is_correct
        cands.append(cd)
    return {
        "query_id": rec.query_id,
        "query_token_length": rec.query_token_length,
        "label": rec.label,
        "candidates": cands,
    }


def dump_records(records: Iterable[RankedQueryRecord], path) -> None:
    """Write records as newline-delimited JSON (UTF-8, LF line endings)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_dict(rec), sort_keys=True) + "\n")
