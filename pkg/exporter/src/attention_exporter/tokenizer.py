"""Deterministic hash tokenizer for (query, paragraph) pairs.

Words are lowercased alphanumeric runs, each hashed into a fixed vocabulary
bucket.  A pair encodes as [CLS] query [SEP] paragraph [SEP]; the paragraph
is truncated from the right to fit max_len while the final [SEP] is always
kept.  If the query itself cannot fit with both separators, the pair is
untokenizable and a TruncationError is raised.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

CLS_ID = 0
SEP_ID = 1
_WORD = re.compile(r"[a-z0-9']+")


class TruncationError(ValueError):
    """The chosen [SEP] cannot survive truncation to max_len."""


@dataclass(frozen=True)
class EncodedPair:
    token_ids: list[int]
    segment_ids: list[int]
    first_sep: int
    last_sep: int
    query_tokens: int
    paragraph_tokens: int  # before truncation


def word_ids(text: str, vocab_size: int) -> list[int]:
    out = []
    for word in _WORD.findall(text.lower()):
        digest = hashlib.blake2b(word.encode(), digest_size=4).digest()
        out.append(2 + int.from_bytes(digest, "big") % (vocab_size - 2))
    return out


def encode_pair(query: str, paragraph: str, vocab_size: int, max_len: int) -> EncodedPair:
    q = word_ids(query, vocab_size)
    p = word_ids(paragraph, vocab_size)
    room = max_len - (len(q) + 3)  # [CLS] q [SEP] ... [SEP]
    if room < 0:
        raise TruncationError(
            f"query needs {len(q) + 3} tokens with specials, max_len is {max_len}")
    kept = p[: max(room, 0)]
    ids = [CLS_ID] + q + [SEP_ID] + kept + [SEP_ID]
    first_sep = 1 + len(q)
    segs = [0] * (first_sep + 1) + [1] * (len(kept) + 1)
    return EncodedPair(
        token_ids=ids,
        segment_ids=segs,
        first_sep=first_sep,
        last_sep=len(ids) - 1,
        query_tokens=len(q),
        paragraph_tokens=len(p),
    )
