"""Length-normalised span targets and their inverse decoding.

A consequent that is genuinely the single character at position 0, i.e.
``(0, 0)``, decodes as absent because ``(0, 0)`` is the absence code.
"""
from __future__ import annotations

import math
from typing import Sequence

from .corpus import DataError, SpanQuad


def normalize(q: SpanQuad, length: int) -> tuple[float, float, float, float]:
    if length < 1:
        raise ValueError("length must be >= 1")
    q.validate(length)
    c0, c1 = q.consequent if q.consequent is not None else (0, 0)
    return (q.antecedent_start / length, q.antecedent_end / length, c0 / length, c1 / length)


def _decode(value: float, length: int) -> int:
    idx = math.floor(value * length + 0.5)
    return min(max(idx, 0), length - 1)


def denormalize(n: Sequence[float], length: int) -> SpanQuad:
    """Scale up, round half-up, clamp, swap inverted spans, detect absence."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if len(n) != 4:
        raise ValueError(f"expected 4 values, got {len(n)}")
    values = [float(v) for v in n]
    if not all(math.isfinite(v) for v in values):
        raise DataError(f"non-finite span prediction {values}")
    a0, a1, c0, c1 = (_decode(v, length) for v in values)
    a0, a1 = min(a0, a1), max(a0, a1)
    c0, c1 = min(c0, c1), max(c0, c1)
    return SpanQuad(a0, a1, None if c0 == 0 and c1 == 0 else (c0, c1))


def char_error(pred: SpanQuad, gold: SpanQuad) -> float:
    """Mean absolute index difference over the four coordinates (absent = 0, 0)."""
    p = target_indices(pred)
    g = target_indices(gold)
    return sum(abs(a - b) for a, b in zip(p, g)) / 4


def target_indices(q: SpanQuad) -> tuple[int, int, int, int]:
    """Integer regression target: absent consequent becomes (0, 0)."""
    c0, c1 = q.consequent if q.consequent is not None else (0, 0)
    return q.antecedent_start, q.antecedent_end, c0, c1
