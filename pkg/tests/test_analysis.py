import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cfdetect.analysis import (
    LexCategory, annotate, export_attention, lexical_tag, lexical_tags, received_attention,
    top_heads,
)
from cfdetect.corpus import SpanQuad, Statement, tokenize


def softmax_rows(x):
    e = np.exp(x - x.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def test_received_uniform():
    att = np.full((3, 5, 5), 0.2)
    np.testing.assert_allclose(received_attention(att, 5), 0.2)


def test_received_one_hot_columns():
    att = np.zeros((3, 4, 4))
    targets = [2, 0, 3]
    for h, j in enumerate(targets):
        att[h, :, j] = 1.0
    s = received_attention(att, 4)
    for h, j in enumerate(targets):
        assert s[h, j] == 1.0 and s[h].sum() == 1.0


def test_received_single_token_and_padding():
    att = np.zeros((2, 4, 4))
    att[:, 0, 0] = 1.0
    assert received_attention(att, 1).tolist() == [[1.0], [1.0]]
    with pytest.raises(ValueError):
        received_attention(att, 5)
    att[:, 0, 2] = 0.5
    with pytest.raises(ValueError, match="beyond"):
        received_attention(att, 1)


@given(st.integers(1, 12), st.integers(1, 6), st.integers(0, 10_000))
def test_received_column_mass(n, heads, seed):
    rng = np.random.default_rng(seed)
    att = np.zeros((heads, 12, 12))
    att[:, :n, :n] = softmax_rows(rng.normal(size=(heads, n, n)) * 3)
    s = received_attention(att, n)
    np.testing.assert_allclose(s.sum(1), 1.0, atol=1e-5)


def test_top_heads():
    assert top_heads(np.array([[0.1], [0.7], [0.2]])).top == [frozenset({2})]
    assert top_heads(np.array([[0.1], [0.5], [0.2], [0.5]])).top == [frozenset({2, 4})]
    assert top_heads(np.full((3, 2), 0.3)).top == [frozenset({1, 2, 3})] * 2
    with pytest.raises(ValueError):
        top_heads(np.array([[np.nan]]))


@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_top_heads_scale_invariant(seed, c):
    s = np.random.default_rng(seed).random((4, 6))
    s[1, 2] = s[3, 2] = s[:, 2].max()
    assert top_heads(s).top == top_heads(s * c).top


def test_lexical_tags():
    assert lexical_tag("wouldn't") is LexCategory.AUX_VERB
    assert lexical_tag("Would") is LexCategory.AUX_VERB
    assert lexical_tag("if") is LexCategory.CONJUNCTION
    assert lexical_tag("12") is LexCategory.NUMERAL
    assert lexical_tag("eight") is LexCategory.NUMERAL
    assert lexical_tag("1,000") is LexCategory.NUMERAL
    assert lexical_tag(",") is LexCategory.PUNCTUATION
    assert lexical_tag("Trump") is LexCategory.OTHER
    text = "If this were an open seat, you would have six, eight, maybe 12 people running."
    tags = lexical_tags(tokenize(text))
    assert len(tags) == len(tokenize(text)) and all(isinstance(t, LexCategory) for t in tags)


def _report(predicted):
    text = "If only Trump had listened he wouldn't be in this mess."
    toks = tokenize(text)
    attr = top_heads(np.random.default_rng(0).random((4, len(toks))))
    return text, toks, annotate(Statement("x", text), attr, lexical_tags(toks), toks, predicted)


def test_annotate_flags_and_render():
    text, toks, rep = _report(SpanQuad(0, 25, (27, 54)))
    assert len(rep.tokens) == len(toks)
    assert [t.antecedent for t in rep.tokens][:5] == [True] * 5
    assert not rep.tokens[5].antecedent and rep.tokens[5].consequent
    line = rep.render()
    assert line.startswith("_If^{") and "_ **he^{" in line and line.endswith(".^{" +
        ",".join(map(str, rep.tokens[-1].heads)) + "}**")
    assert all(min(t.heads) >= 1 for t in rep.tokens)


def test_annotate_absent_consequent():
    _, _, rep = _report(SpanQuad(0, 25))
    assert not any(t.consequent for t in rep.tokens)
    assert "**" not in rep.render()


def test_annotate_misaligned():
    text, toks, _ = _report(SpanQuad(0, 5))
    attr = top_heads(np.ones((2, len(toks) - 1)))
    with pytest.raises(ValueError, match="misaligned"):
        annotate(Statement("x", text), attr, lexical_tags(toks), toks, SpanQuad(0, 5))


def test_export_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    att = np.zeros((3, 8, 8))
    att[:, :5, :5] = softmax_rows(rng.normal(size=(3, 5, 5)))
    labels = ["[CLS]", "a", "b", "c", "d"]
    export_attention(att, labels, tmp_path / "h.json", 5)
    data = json.loads((tmp_path / "h.json").read_text())
    assert data["tokens"] == labels and data["num_heads"] == 3
    w = np.array(data["weights"])
    assert w.shape == (3, 5, 5)
    np.testing.assert_allclose(w, att[:, :5, :5], atol=1e-9, rtol=0)
    np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-6)
    np.testing.assert_allclose(data["received_attention"], received_attention(att, 5), atol=1e-9)
    with pytest.raises(OSError):
        export_attention(att, labels, tmp_path / "missing" / "h.json", 5)
