"""Token normalization and LCS-based ROUGE-L scoring."""

from __future__ import annotations

import re
import string
from typing import Sequence

TokenSeq = tuple[str, ...]

_PUNCT = string.punctuation
_WS = re.compile(r"\s+")


class EmptyReference(ValueError):
    pass


def normalize_text(s: str) -> TokenSeq:
    """Lowercase, split on whitespace and strip punctuation at token edges.

    >>> normalize_text("1/4 tsp salt!")
    ('1/4', 'tsp', 'salt')
    """
    tokens = (tok.strip(_PUNCT) for tok in s.lower().split())
    return tuple(tok for tok in tokens if tok)


def canonical_text(s: str) -> str:
    """Sentence-level key used for text identity: lowercase, collapsed
    whitespace, terminal punctuation removed."""
    return _WS.sub(" ", s.lower()).strip().rstrip(_PUNCT).rstrip()


def same_text(a: str, b: str) -> bool:
    return canonical_text(a) == canonical_text(b)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """ROUGE-L F-measure with beta=1 over token sequences."""
    if not reference:
        raise EmptyReference("reference token sequence is empty")
    if not candidate:
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return 2 * p * r / (p + r)


def rouge_l_text(candidate: str, reference: str) -> float:
    return rouge_l(normalize_text(candidate), normalize_text(reference))
