"""Seeded toy corpora for smoke runs and tests."""
from __future__ import annotations

import random

from .corpus import SpanQuad, Statement

NAMES = ["Anna", "Ben", "Chris", "Dana", "Eli", "Fay", "Gus", "Hana",
         "Ivan", "Jill", "Kurt", "Lena", "Milo", "Nina", "Omar", "Pia"]
VERBS = ["fixed", "sold", "painted", "found", "read", "built", "cleaned", "moved"]
NOUNS = ["car", "house", "boat", "letter", "garden", "bridge", "piano", "roof"]
OUTCOMES = ["we would be home", "the deal could close", "nobody would be late",
            "they would have won", "the town would be safe", "I could sleep tonight",
            "she would have stayed", "the roof would hold"]


def _ids(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i:04d}" for i in range(n)]


def detection_corpus(n_per_class: int = 16, seed: int = 0) -> list[tuple[Statement, int]]:
    """``if ... would`` counterfactuals (label 1) and plain declaratives (label 0)."""
    rng = random.Random(seed)
    out = []
    ids = iter(_ids("det", 2 * n_per_class))
    for i in range(n_per_class):
        name, verb, noun = NAMES[i % len(NAMES)], rng.choice(VERBS), rng.choice(NOUNS)
        text = f"If {name} had {verb} the {noun}, {rng.choice(OUTCOMES)}."
        out.append((Statement(next(ids), text), 1))
    for i in range(n_per_class):
        name, verb, noun = NAMES[(i + 3) % len(NAMES)], rng.choice(VERBS), rng.choice(NOUNS)
        text = f"{name} {verb} the {noun} on Monday."
        out.append((Statement(next(ids), text), 0))
    rng.shuffle(out)
    return out


def span_corpus(n: int = 16, seed: int = 0) -> list[tuple[Statement, SpanQuad]]:
    """Counterfactuals with gold spans; every fourth has no consequent."""
    rng = random.Random(seed)
    out = []
    for i, sid in enumerate(_ids("spn", n)):
        name, verb, noun = NAMES[i % len(NAMES)], rng.choice(VERBS), rng.choice(NOUNS)
        if i % 4 == 3:
            ante = f"I wish {name} had {verb} the {noun}"
            text = f"{ante}, but {name} did not."
            out.append((Statement(sid, text), SpanQuad(0, len(ante) - 1)))
            continue
        ante = f"If {name} had {verb} the {noun}"
        cons = rng.choice(OUTCOMES)
        if i % 2:
            a_text = f"if {name} had {verb} the {noun}"
            text = f"{cons[0].upper()}{cons[1:]} {a_text}."
            a_start = len(cons) + 1
            quad = SpanQuad(a_start, a_start + len(a_text) - 1, (0, len(cons) - 1))
        else:
            text = f"{ante}, {cons}."
            c_start = len(ante) + 2
            quad = SpanQuad(0, len(ante) - 1, (c_start, c_start + len(cons) - 1))
        out.append((Statement(sid, text), quad))
    return out


def bulk_detection_rows(n: int, seed: int = 0) -> list[tuple[Statement, int]]:
    rng = random.Random(seed)
    return [(Statement(f"row{i}", f"Sentence {i} about {rng.choice(NOUNS)}."), rng.randint(0, 1))
            for i in range(n)]


def bulk_span_rows(n: int, seed: int = 0) -> list[tuple[Statement, SpanQuad]]:
    rng = random.Random(seed)
    out = []
    for i in range(n):
        text = f"If {rng.choice(NAMES)} had come, we would sing {i}."
        out.append((Statement(f"row{i}", text), SpanQuad(0, 5, (text.index("we"), len(text) - 2))))
    return out
