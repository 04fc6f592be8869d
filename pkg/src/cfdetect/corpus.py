"""Dataset ingestion, offset-tracking tokenization, vocabulary and splits.

Span indices on disk are inclusive character (code point) offsets. An absent
consequent is written as ``-1,-1`` in files and held as ``None`` in memory.
"""
from __future__ import annotations

import csv
import math
import random
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

DETECTION_HEADER = ["sentenceID", "gold_label", "sentence"]
SPAN_HEADER = [
    "sentenceID",
    "sentence",
    "antecedent_startid",
    "antecedent_endid",
    "consequent_startid",
    "consequent_endid",
]

PAD, UNK, CLS = "[PAD]", "[UNK]", "[CLS]"


class DataError(ValueError):
    """Raised for malformed or out-of-domain input data."""


@dataclass(frozen=True)
class Statement:
    id: str
    text: str

    @property
    def length(self) -> int:
        return len(self.text)


@dataclass(frozen=True)
class SpanQuad:
    """Inclusive character spans; ``consequent`` is None when absent."""

    antecedent_start: int
    antecedent_end: int
    consequent: Optional[tuple[int, int]] = None

    @property
    def has_consequent(self) -> bool:
        return self.consequent is not None

    def validate(self, length: int) -> None:
        a0, a1 = self.antecedent_start, self.antecedent_end
        if not 0 <= a0 <= a1 < length:
            raise DataError(f"antecedent ({a0},{a1}) invalid for length {length}")
        if self.consequent is not None:
            c0, c1 = self.consequent
            if not 0 <= c0 <= c1 < length:
                raise DataError(f"consequent ({c0},{c1}) invalid for length {length}")

    def as_row(self) -> tuple[int, int, int, int]:
        c0, c1 = self.consequent if self.consequent is not None else (-1, -1)
        return self.antecedent_start, self.antecedent_end, c0, c1


@dataclass(frozen=True)
class TokenSpan:
    surface: str
    char_start: int
    char_end: int  # exclusive


def _read_rows(path, header: list[str]):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if [h.strip() for h in got] != header:
            raise DataError(f"{path}: expected header {','.join(header)}, got {','.join(got)}")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {row_no}: expected {len(header)} fields, got {len(row)}"
                )
            yield row_no, row


def load_detection_data(path) -> list[tuple[Statement, int]]:
    records = []
    for row_no, (sid, label, text) in _read_rows(path, DETECTION_HEADER):
        label = label.strip()
        if label not in ("0", "1"):
            raise DataError(f"{path}: row {row_no}: unknown label {label!r}")
        if not text.strip():
            raise DataError(f"{path}: row {row_no}: empty sentence")
        records.append((Statement(sid, text), int(label)))
    return records


def _parse_int(value: str, path, row_no: int, name: str) -> int:
    try:
        return int(value.strip())
    except ValueError:
        raise DataError(f"{path}: row {row_no}: {name} is not an integer: {value!r}") from None


def load_span_data(path) -> list[tuple[Statement, SpanQuad]]:
    records = []
    for row_no, row in _read_rows(path, SPAN_HEADER):
        sid, text = row[0], row[1]
        a0, a1, c0, c1 = (
            _parse_int(v, path, row_no, name) for v, name in zip(row[2:], SPAN_HEADER[2:])
        )
        if a0 == -1 or a1 == -1:
            raise DataError(f"{path}: row {row_no}: antecedent must be present")
        if (c0 == -1) != (c1 == -1):
            raise DataError(f"{path}: row {row_no}: consequent ids must both be -1 or neither")
        quad = SpanQuad(a0, a1, None if c0 == -1 else (c0, c1))
        stmt = Statement(sid, text)
        try:
            quad.validate(stmt.length)
        except DataError as exc:
            raise DataError(f"{path}: row {row_no}: {exc}") from None
        records.append((stmt, quad))
    return records


def load_statements(path) -> list[Statement]:
    """Read a CSV with at least ``sentenceID`` and ``sentence`` columns."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"sentenceID", "sentence"} <= set(reader.fieldnames):
            raise DataError(f"{path}: needs sentenceID and sentence columns")
        return [Statement(r["sentenceID"], r["sentence"]) for r in reader]


def write_span_data(path, records: Iterable[tuple[Statement, SpanQuad]]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SPAN_HEADER)
        for stmt, quad in records:
            w.writerow([stmt.id, stmt.text, *quad.as_row()])


def write_detection_data(path, records: Iterable[tuple[Statement, int]]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETECTION_HEADER)
        for stmt, label in records:
            w.writerow([stmt.id, label, stmt.text])


def split(data: Sequence, ratio: float = 0.9, seed: int = 0) -> tuple[list, list]:
    """Seeded permutation split; the first ``floor(ratio * N)`` items train."""
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    n = len(data)
    if n < 2:
        raise ValueError("need at least 2 items to split")
    order = list(range(n))
    random.Random(seed).shuffle(order)
    # rounding guards products like 0.7 * 10 == 6.999...
    n_train = math.floor(round(ratio * n, 9))
    n_train = min(max(n_train, 1), n - 1)
    return [data[i] for i in order[:n_train]], [data[i] for i in order[n_train:]]


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith(("P", "S"))


def tokenize(text: str) -> list[TokenSpan]:
    """Split on whitespace, then at punctuation.

    An apostrophe between two word characters stays inside the word, so
    ``wouldn't`` is one token. Every other punctuation character is its own
    token.
    """
    if not text or not text.strip():
        raise ValueError("cannot tokenize empty or whitespace-only text")
    tokens = []
    n = len(text)
    i = 0
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if _is_punct(ch):
            tokens.append(TokenSpan(ch, i, i + 1))
            i += 1
            continue
        j = i + 1
        while j < n:
            c = text[j]
            if c.isspace():
                break
            if _is_punct(c):
                inner = (
                    c in "'’"
                    and j + 1 < n
                    and not text[j + 1].isspace()
                    and not _is_punct(text[j + 1])
                )
                if not inner:
                    break
            j += 1
        tokens.append(TokenSpan(text[i:j], i, j))
        i = j
    return tokens


@dataclass
class Vocab:
    itos: list[str] = field(default_factory=lambda: [PAD, UNK, CLS])

    def __post_init__(self):
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate vocabulary entries")

    pad_id = property(lambda self: self.stoi[PAD])
    unk_id = property(lambda self: self.stoi[UNK])
    cls_id = property(lambda self: self.stoi[CLS])

    def __len__(self) -> int:
        return len(self.itos)

    def lookup(self, surface: str) -> int:
        return self.stoi.get(surface.lower(), self.unk_id)

    @classmethod
    def build(cls, texts: Iterable[str], min_freq: int = 2, max_size: int = 8192) -> "Vocab":
        counts = Counter(t.surface.lower() for text in texts for t in tokenize(text))
        itos = [PAD, UNK, CLS]
        ranked = sorted(
            (tok for tok, c in counts.items() if c >= min_freq),
            key=lambda tok: (-counts[tok], tok),
        )
        itos.extend(ranked[: max_size - len(itos)])
        return cls(itos)


def encode_ids(tokens: Sequence[TokenSpan], vocab: Vocab, max_len: int) -> tuple[list[int], int]:
    """Return ``(ids, true_len)``; ids start with CLS and are padded to max_len."""
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    ids = [vocab.cls_id] + [vocab.lookup(t.surface) for t in tokens[: max_len - 1]]
    true_len = len(ids)
    ids.extend([vocab.pad_id] * (max_len - true_len))
    return ids, true_len
