"""Run the encoder over (query, paragraph) pairs and emit record files.

Input: CSV with columns query_id,query,paragraph,softmax_score,is_correct,
grouped by query_id with k rows per query.  Output: newline-delimited JSON
records in the calibrator toolkit's format, one per query, candidates sorted
by score descending.  cls_to_sep[l][h] is the attention weight from the
[CLS] position to the chosen [SEP] position in layer l, head h.

Pairs that cannot be encoded (the chosen [SEP] would be truncated away) are
skipped with their whole query and listed in a sidecar JSON report.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

from .encoder import TinyEncoder
from .tokenizer import TruncationError, encode_pair


class PairsFileError(ValueError):
    """The pairs CSV is malformed or violates the k-candidates-per-query rule."""


@dataclass(frozen=True)
class Pair:
    row: int
    query_id: str
    query: str
    paragraph: str
    softmax_score: float
    is_correct: bool


@dataclass(frozen=True)
class ExportResult:
    records_written: int
    queries_skipped: int
    errors: list[dict]


_COLUMNS = ["query_id", "query", "paragraph", "softmax_score", "is_correct"]
_TRUE = {"true", "1", "yes"}
_FALSE = {"false", "0", "no"}


def read_pairs(path) -> list[Pair]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != _COLUMNS:
            raise PairsFileError(
                f"pairs file must have columns {','.join(_COLUMNS)}, got {reader.fieldnames}")
        pairs = []
        for row_no, row in enumerate(reader, start=2):
            flag = row["is_correct"].strip().lower()
            if flag not in _TRUE | _FALSE:
                raise PairsFileError(f"row {row_no}: is_correct {row['is_correct']!r}")
            try:
                score = float(row["softmax_score"])
            except ValueError as e:
                raise PairsFileError(f"row {row_no}: softmax_score {row['softmax_score']!r}") from e
            if not (0.0 <= score <= 1.0):
                raise PairsFileError(f"row {row_no}: softmax_score {score} outside [0, 1]")
            pairs.append(Pair(
                row=row_no,
                query_id=row["query_id"],
                query=row["query"],
                paragraph=row["paragraph"],
                softmax_score=score,
                is_correct=flag in _TRUE,
            ))
    return pairs


def group_pairs(pairs: list[Pair], k: int) -> list[tuple[str, list[Pair]]]:
    groups: dict[str, list[Pair]] = {}
    order: list[str] = []
    for pair in pairs:
        if pair.query_id not in groups:
            groups[pair.query_id] = []
            order.append(pair.query_id)
        groups[pair.query_id].append(pair)
    for qid in order:
        if len(groups[qid]) != k:
            raise PairsFileError(
                f"query {qid!r} has {len(groups[qid])} candidate pairs, expected {k}")
    return [(qid, groups[qid]) for qid in order]


def candidate_payload(encoder: TinyEncoder, pair: Pair, sep_choice: str,
                      include_cls_row: bool) -> dict:
    cfg = encoder.config
    enc = encode_pair(pair.query, pair.paragraph, cfg.vocab_size, cfg.max_len)
    trace = encoder.encode(enc.token_ids, enc.segment_ids)
    sep = enc.first_sep if sep_choice == "first" else enc.last_sep
    cls_row = trace.attn[:, :, 0, :]  # [L, H, S]
    attention = {
        "num_layers": cfg.num_layers,
        "num_heads": cfg.num_heads,
        "cls_to_sep": cls_row[:, :, sep].tolist(),
        "sep_index_used": sep,
    }
    if include_cls_row:
        attention["cls_row"] = cls_row.tolist()
    return {
        "softmax_score": pair.softmax_score,
        "answer_token_length": enc.paragraph_tokens,
        "is_correct": pair.is_correct,
        "attention": attention,
        "_query_tokens": enc.query_tokens,
    }


def export(encoder: TinyEncoder, pairs_path, out_path, k: int = 3,
           sep_choice: str = "first", include_cls_row: bool = False,
           errors_path=None) -> ExportResult:
    """Encode every pair and write one record per query.

    Queries containing an unencodable pair are skipped entirely (a record
    needs all k candidates); each failing pair is listed in the sidecar
    report, which is written whenever errors_path is given.
    """
    if sep_choice not in ("first", "last"):
        raise ValueError("sep_choice must be 'first' or 'last'")
    groups = group_pairs(read_pairs(pairs_path), k)

    errors: list[dict] = []
    written = 0
    skipped = 0
    with open(out_path, "w", encoding="utf-8", newline="\n") as out:
        for qid, group in groups:
            payloads = []
            for pair in group:
                try:
                    payloads.append(candidate_payload(encoder, pair, sep_choice,
                                                      include_cls_row))
                except TruncationError as e:
                    errors.append({"query_id": qid, "row": pair.row, "reason": str(e)})
            if len(payloads) != k:
                skipped += 1
                continue
            payloads.sort(key=lambda c: -c["softmax_score"])
            query_tokens = payloads[0]["_query_tokens"]
            for c in payloads:
                del c["_query_tokens"]
            record = {
                "query_id": qid,
                "query_token_length": query_tokens,
                "label": int(any(c["is_correct"] for c in payloads)),
                "candidates": payloads,
            }
            out.write(json.dumps(record, sort_keys=True) + "\n")
            written += 1
    if errors_path is not None:
        with open(errors_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump({"errors": errors}, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return ExportResult(records_written=written, queries_skipped=skipped, errors=errors)
