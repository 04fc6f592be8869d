"""Binary and character-overlap span metrics."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Sequence

from .corpus import SpanQuad


@dataclass(frozen=True)
class BinaryMetrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass(frozen=True)
class SpanMetrics:
    precision: float
    recall: float
    f1: float
    exact_match: float
    n: int


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def binary_prf(pairs: Iterable[tuple[int, int]]) -> BinaryMetrics:
    """Precision/recall/F1 with the counterfactual class (1) as positive."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("binary_prf needs at least one (pred, gold) pair")
    tp = fp = fn = tn = 0
    for pred, gold in pairs:
        pred, gold = int(pred), int(gold)
        if pred == 1 and gold == 1:
            tp += 1
        elif pred == 1:
            fp += 1
        elif gold == 1:
            fn += 1
        else:
            tn += 1
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return BinaryMetrics(p, r, _f1(p, r), tp, fp, fn, tn)


def _intervals(q: SpanQuad) -> list[tuple[int, int]]:
    """Disjoint half-open intervals covering the labelled characters."""
    spans = [(q.antecedent_start, q.antecedent_end + 1)]
    if q.consequent is not None:
        spans.append((q.consequent[0], q.consequent[1] + 1))
    spans.sort()
    merged = [spans[0]]
    for s, e in spans[1:]:
        if s <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((s, e))
    return merged


def _size(iv: list[tuple[int, int]]) -> int:
    return sum(e - s for s, e in iv)


def _overlap(a: list[tuple[int, int]], b: list[tuple[int, int]]) -> int:
    return sum(max(0, min(e1, e2) - max(s1, s2)) for s1, e1 in a for s2, e2 in b)


def exact_match(pred: SpanQuad, gold: SpanQuad) -> bool:
    return pred == gold


def example_prf(pred: SpanQuad, gold: SpanQuad) -> tuple[float, float, float]:
    pi, gi = _intervals(pred), _intervals(gold)
    n_pred, n_gold, inter = _size(pi), _size(gi), _overlap(pi, gi)
    # antecedents are always present, so both sets are nonempty here
    p = inter / n_pred if n_pred else float(n_gold == 0)
    r = inter / n_gold if n_gold else float(n_pred == 0)
    return p, r, _f1(p, r)


def span_prf(
    pairs: Iterable[tuple[SpanQuad, SpanQuad]], lengths: Optional[Sequence[int]] = None
) -> SpanMetrics:
    """Corpus means of per-example character-overlap P/R/F1 and exact match.

    Each example's labelled set is the union of antecedent and consequent
    characters. When ``lengths`` is given every quad is validated against
    its statement length.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("span_prf needs at least one (pred, gold) pair")
    if lengths is not None:
        if len(lengths) != len(pairs):
            raise ValueError("one length per pair is required")
        for (pred, gold), n in zip(pairs, lengths):
            pred.validate(n)
            gold.validate(n)
    ps, rs, fs, em = [], [], [], 0
    for pred, gold in pairs:
        p, r, f = example_prf(pred, gold)
        ps.append(p)
        rs.append(r)
        fs.append(f)
        em += exact_match(pred, gold)
    n = len(pairs)
    return SpanMetrics(sum(ps) / n, sum(rs) / n, sum(fs) / n, em / n, n)


def to_json(m) -> str:
    return json.dumps(asdict(m), indent=2, sort_keys=True)


def to_text(m) -> str:
    return "\n".join(f"{k}: {v:.6f}" if isinstance(v, float) else f"{k}: {v}"
                     for k, v in asdict(m).items())
