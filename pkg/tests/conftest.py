import numpy as np
import pytest

from calibkit.data_model import AttentionRecord, CandidateAnswer, RankedQueryRecord


def make_attention(cls_to_sep, sep_index_used=0, cls_row=None):
    arr = np.asarray(cls_to_sep, dtype=float)
    return AttentionRecord(
        num_layers=arr.shape[0],
        num_heads=arr.shape[1],
        cls_to_sep=arr,
        sep_index_used=sep_index_used,
        cls_row=cls_row,
    )


def make_candidate(score, correct=False, attention=None, answer_len=10):
    if attention is None:
        attention = make_attention([[0.2, 0.4], [0.6, 0.8]])
    return CandidateAnswer(
        softmax_score=score,
        answer_token_length=answer_len,
        is_correct=correct,
        attention=attention,
    )


def make_record(scores=(0.5, 0.3, 0.2), correct=(True, False, False),
                query_id="q0", query_len=7, attentions=None):
    cands = []
    for i, s in enumerate(scores):
        att = None if attentions is None else attentions[i]
        cands.append(make_candidate(s, correct=bool(correct[i]), attention=att))
    return RankedQueryRecord(
        query_id=query_id,
        query_token_length=query_len,
        candidates=tuple(cands),
        label=int(any(correct)),
    )


@pytest.fixture
def record():
    return make_record()
