import numpy as np

from shici.evaluation import check_form
from shici.synthetic import (
    LONG_FORM_BREAK,
    LONG_FORM_LINES,
    build_synthetic_corpus,
    long_pseudo_form,
    short_pseudo_form,
)


def test_long_form_shape():
    spec = long_pseudo_form()
    assert spec.line_count == 22
    assert spec.body_length == 93
    assert spec.stanza_break == LONG_FORM_BREAK


def test_corpus_counts_and_validity():
    samples, registry = build_synthetic_corpus(30, 20, seed=9)
    assert len(samples) == 50
    long_spec, short_spec = long_pseudo_form(), short_pseudo_form()
    assert all(check_form(s, long_spec).verdict for s in samples[:30])
    assert all(check_form(s, short_spec).verdict for s in samples[30:])
    assert "Long" in registry and "Short" in registry


def test_deterministic_given_seed():
    a, _ = build_synthetic_corpus(10, 10, seed=4)
    b, _ = build_synthetic_corpus(10, 10, seed=4)
    assert a == b
    c, _ = build_synthetic_corpus(10, 10, seed=5)
    assert a != c


def test_title_lengths_vary_in_bounds():
    samples, _ = build_synthetic_corpus(100, 0, seed=2)
    lengths = {len(s.title) for s in samples}
    assert min(lengths) >= 2 and max(lengths) <= 10
    assert len(lengths) > 4


def test_content_has_chain_structure():
    # successors are restricted, so bigram variety is far below uniform
    samples, _ = build_synthetic_corpus(200, 0, seed=7)
    bigrams = set()
    for s in samples:
        text = "".join(s.body_lines)
        bigrams.update(text[i : i + 2] for i in range(len(text) - 1))
    assert len(bigrams) <= 200 * 8
