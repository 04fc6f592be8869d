"""Head attribution over final-layer attention, lexical tags and exports."""
from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import SpanQuad, TokenSpan, _is_punct

TIE_TOL = 1e-9


class LexCategory(str, enum.Enum):
    PUNCTUATION = "PUNCTUATION"
    AUX_VERB = "AUX_VERB"
    CONJUNCTION = "CONJUNCTION"
    NUMERAL = "NUMERAL"
    OTHER = "OTHER"


AUX_VERBS = frozenset({
    "would", "wouldn't", "could", "couldn't", "should", "shouldn't", "had", "has",
    "have", "was", "were", "wish", "'d", "'ll", "will", "won't", "can", "can't",
    "might", "must",
})
CONJUNCTIONS = frozenset({"if", "but", "and", "or", "unless", "though", "because", "so"})
NUMBER_WORDS = frozenset({
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen",
    "eighteen", "nineteen", "twenty", "thirty", "forty", "fifty", "sixty", "seventy",
    "eighty", "ninety", "hundred", "thousand", "million", "billion",
})
_NUMBER = re.compile(r"^[+-]?(\d+([.,]\d+)*|\d*\.\d+)(st|nd|rd|th|%)?$")


def received_attention(att, true_len: int) -> np.ndarray:
    """Mean attention each key token receives per head, over unpadded queries.

    ``att`` is (H, T, T) indexed (head, query, key); the result is
    (H, true_len).
    """
    att = np.asarray(att, dtype=np.float64)
    if att.ndim != 3 or att.shape[1] != att.shape[2]:
        raise ValueError(f"attention must be (heads, T, T), got {att.shape}")
    if not 1 <= true_len <= att.shape[1]:
        raise ValueError(f"true_len {true_len} outside [1, {att.shape[1]}]")
    if np.any(att[:, :true_len, true_len:] != 0):
        raise ValueError(f"attention mass on keys beyond true_len {true_len}")
    return att[:, :true_len, :true_len].mean(axis=1)


@dataclass(frozen=True)
class HeadAttribution:
    scores: np.ndarray  # (H, n_tokens)
    top: list[frozenset[int]]  # 1-based heads per token


def top_heads(scores) -> HeadAttribution:
    """Per token, all heads within ``TIE_TOL`` (relative) of its maximum."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError("scores must be (heads, tokens)")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    best = scores.max(axis=0)
    tol = TIE_TOL * np.abs(best)
    top = [frozenset(int(h) + 1 for h in np.flatnonzero(scores[:, j] >= best[j] - tol[j]))
           for j in range(scores.shape[1])]
    return HeadAttribution(scores, top)


def _is_number(word: str) -> bool:
    return bool(_NUMBER.match(word)) or word in NUMBER_WORDS


def lexical_tag(surface: str) -> LexCategory:
    word = surface.lower().replace("’", "'")
    if word and all(_is_punct(c) for c in word):
        return LexCategory.PUNCTUATION
    if word in AUX_VERBS:
        return LexCategory.AUX_VERB
    if word in CONJUNCTIONS:
        return LexCategory.CONJUNCTION
    if _is_number(word):
        return LexCategory.NUMERAL
    return LexCategory.OTHER


def lexical_tags(tokens: Sequence[TokenSpan]) -> list[LexCategory]:
    return [lexical_tag(t.surface) for t in tokens]


def _overlaps(tok: TokenSpan, span: Optional[tuple[int, int]]) -> bool:
    return span is not None and tok.char_start <= span[1] and tok.char_end - 1 >= span[0]


@dataclass(frozen=True)
class TokenReport:
    surface: str
    char_start: int
    char_end: int
    category: str
    heads: list[int]
    antecedent: bool
    consequent: bool


@dataclass(frozen=True)
class AnnotatedReport:
    statement_id: str
    text: str
    tokens: list[TokenReport]
    antecedent: Optional[tuple[int, int]]
    consequent: Optional[tuple[int, int]]

    def to_dict(self) -> dict:
        return {
            "id": self.statement_id,
            "text": self.text,
            "antecedent": list(self.antecedent) if self.antecedent else None,
            "consequent": list(self.consequent) if self.consequent else None,
            "tokens": [vars(t) for t in self.tokens],
        }

    def render(self) -> str:
        """Text with ``_..._`` around antecedent runs and ``**...**`` around consequent runs.

        Each word carries its top heads as ``^{h1,h2}``. Words partially
        covered by a span count as inside it.
        """
        parts = []
        prev_end = 0
        prev_mark = None
        for t in self.tokens:
            mark = "_" if t.antecedent else "**" if t.consequent else None
            gap = self.text[prev_end:t.char_start]
            if mark != prev_mark:
                if prev_mark:
                    parts.append(prev_mark)
                parts.append(gap)
                if mark:
                    parts.append(mark)
            else:
                parts.append(gap)
            sup = "^{" + ",".join(map(str, t.heads)) + "}" if t.heads else ""
            parts.append(t.surface + sup)
            prev_end, prev_mark = t.char_end, mark
        if prev_mark:
            parts.append(prev_mark)
        parts.append(self.text[prev_end:])
        return "".join(parts)


def annotate(statement, attribution: HeadAttribution, tags: Sequence[LexCategory],
             tokens: Sequence[TokenSpan], predicted: Optional[SpanQuad]) -> AnnotatedReport:
    """Per-token report; ``predicted=None`` (classifier checkpoints) flags no spans."""
    n = len(tokens)
    if len(attribution.top) != n or len(tags) != n:
        raise ValueError(
            f"misaligned inputs: {n} tokens, {len(attribution.top)} attributions, {len(tags)} tags"
        )
    ante = None if predicted is None else (predicted.antecedent_start, predicted.antecedent_end)
    cons = None if predicted is None else predicted.consequent
    rows = [
        TokenReport(t.surface, t.char_start, t.char_end, tag.value, sorted(heads),
                    _overlaps(t, ante), _overlaps(t, cons))
        for t, tag, heads in zip(tokens, tags, attribution.top)
    ]
    return AnnotatedReport(statement.id, statement.text, rows, ante, cons)


def export_attention(att, tokens: Sequence[str], path, true_len: Optional[int] = None) -> dict:
    """Write one statement's final-layer attention as heatmap JSON.

    ``tokens`` labels every encoder position up to ``true_len`` (including
    the sequence-start marker).
    """
    att = np.asarray(att, dtype=np.float64)
    true_len = len(tokens) if true_len is None else true_len
    if len(tokens) != true_len:
        raise ValueError(f"{len(tokens)} token labels for true_len {true_len}")
    scores = received_attention(att, true_len)
    sub = att[:, :true_len, :true_len]
    payload = {
        "tokens": list(tokens),
        "num_heads": int(att.shape[0]),
        "num_tokens": true_len,
        "weights": sub.tolist(),
        "received_attention": scores.tolist(),
    }
    path = Path(path)
    try:
        path.write_text(json.dumps(payload, indent=1), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write heatmap file {path}: {exc}") from exc
    return payload
