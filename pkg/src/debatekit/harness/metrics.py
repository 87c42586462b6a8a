"""Per-sample scores and answer diversity."""

from __future__ import annotations

import re
import string
from collections import Counter
from itertools import combinations
from typing import Optional, Sequence

from ..backends import cosine
from ..core import UNKNOWN_TOKEN, AnswerKind, InputSample, canonical_answer

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def squad_tokens(text: str) -> list[str]:
    """Lowercase, drop punctuation and English articles, split on whitespace."""
    text = "".join(ch for ch in text.lower() if ch not in _PUNCT)
    return _ARTICLES.sub(" ", text).split()


def token_f1(prediction: str, reference: str) -> float:
    pred, ref = squad_tokens(prediction), squad_tokens(reference)
    if not pred or not ref:
        return float(pred == ref)
    overlap = sum((Counter(pred) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(ref)
    return 2 * precision * recall / (precision + recall)


def score_squad_f1(final: str, sample: InputSample) -> float:
    is_unknown = canonical_answer(final) == UNKNOWN_TOKEN if final.strip() else False
    if not sample.answerable:
        return 1.0 if is_unknown else 0.0
    if is_unknown:
        return 0.0
    return max(token_f1(final, ref) for ref in sample.reference_answers)


def _choice_key(text: str, sample: InputSample) -> str:
    key = canonical_answer(text, AnswerKind.MULTIPLE_CHOICE)
    if sample.choices and len(key) != 1:
        for i, choice in enumerate(sample.choices):
            if canonical_answer(choice) == key:
                return "abcdefghij"[i]
    return key


def score_accuracy(final: str, sample: InputSample, answer_kind: AnswerKind) -> int:
    kind = AnswerKind(answer_kind)
    if not final.strip():
        return 0
    if kind is AnswerKind.MULTIPLE_CHOICE:
        got = _choice_key(final, sample)
        return int(any(got == _choice_key(ref, sample) for ref in sample.canonical_references()))
    got = canonical_answer(final, kind)
    return int(any(got == canonical_answer(ref, kind) for ref in sample.canonical_references()))


def score(final: str, sample: InputSample, answer_kind: AnswerKind) -> float:
    kind = AnswerKind(answer_kind)
    if kind in (AnswerKind.MULTIPLE_CHOICE, AnswerKind.BOOLEAN):
        return float(score_accuracy(final, sample, kind))
    return score_squad_f1(final, sample)


def diversity_score(answers: Sequence[str], embedder) -> float:
    """Mean pairwise cosine similarity of the answers' embeddings (higher = less diverse)."""
    if len(answers) < 2:
        raise ValueError("diversity needs at least two answers")
    vectors = embedder.embed(list(answers))
    sims = [cosine(u, v) for u, v in combinations(vectors, 2)]
    return sum(sims) / len(sims)


def mean(values: Sequence[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None
