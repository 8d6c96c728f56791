"""Synthetic corpora for desk-scale form-control experiments.

Content characters are drawn from a seeded Markov chain over the alphabet,
so there is real linguistic-like structure competing with form structure
for model capacity (with i.i.d. content, form is the only learnable signal
and even tiny models master it, which would make training-mode comparisons
vacuous). One long two-stanza pseudo-Cipai and one short uniform form cover
the hard and easy regimes.
"""
from __future__ import annotations

import numpy as np

from .corpus import Sample
from .forms import Category, FormRegistry, FormSpec

# 22 lines, 93 characters, stanza break after line 11. Line lengths are
# irregular (3..5) like a real long Cipai, so boundaries must be tracked,
# but not so erratic that the pattern is unlearnable at desk scale.
LONG_FORM_LINES = (
    5, 4, 5, 4, 4, 5, 4, 4, 5, 4, 3,
    4, 5, 4, 4, 5, 4, 4, 5, 4, 4, 3,
)
LONG_FORM_BREAK = 11
# 7-character lines never occur in the long form, so the two rhythms are
# fully separable by the form-name condition
SHORT_FORM_LINES = (7, 7, 7, 7)

CHAIN_BRANCHING = 8


def synthetic_alphabet(size: int = 200) -> str:
    """Deterministic alphabet of CJK ideographs."""
    return "".join(chr(0x4E00 + i) for i in range(size))


def long_pseudo_form() -> FormSpec:
    return FormSpec("Long", Category.CI, LONG_FORM_LINES, LONG_FORM_BREAK)


def short_pseudo_form() -> FormSpec:
    return FormSpec("Short", Category.SHI, SHORT_FORM_LINES)


def synthetic_registry() -> FormRegistry:
    return FormRegistry([long_pseudo_form(), short_pseudo_form()])


class ContentChain:
    """First-order Markov chain over alphabet indices.

    Each state transitions to a small random successor set with random
    weights, giving character streams with learnable structure at roughly
    ln(branching) nats per character.
    """

    def __init__(
        self, rng: np.random.Generator, size: int, branching: int = CHAIN_BRANCHING
    ) -> None:
        self.size = size
        self.successors = np.empty((size, branching), dtype=np.int64)
        self.cumulative = np.empty((size, branching), dtype=np.float64)
        for state in range(size):
            self.successors[state] = rng.choice(size, size=branching, replace=False)
            weights = rng.random(branching) + 0.1
            self.cumulative[state] = np.cumsum(weights / weights.sum())

    def draw(self, rng: np.random.Generator, state: int, count: int) -> tuple[list[int], int]:
        out = []
        for _ in range(count):
            slot = int(np.searchsorted(self.cumulative[state], rng.random(), side="right"))
            state = int(self.successors[state, min(slot, self.cumulative.shape[1] - 1)])
            out.append(state)
        return out, state


def random_sample(
    spec: FormSpec,
    rng: np.random.Generator,
    alphabet: str,
    chain: ContentChain,
    title_lengths: tuple[int, int] = (2, 10),
) -> Sample:
    """One corpus sample of the given form with chain-generated content.

    Title length varies within the given bounds, so body positions are not
    absolute and the model must actually track line structure.
    """
    state = int(rng.integers(0, chain.size))
    title_len = int(rng.integers(title_lengths[0], title_lengths[1] + 1))
    indices, state = chain.draw(rng, state, title_len)
    title = "".join(alphabet[i] for i in indices)
    lines = []
    for n in spec.line_lengths:
        indices, state = chain.draw(rng, state, n)
        lines.append("".join(alphabet[i] for i in indices))
    return Sample(spec.name, title, tuple(lines), spec.stanza_break)


def build_synthetic_corpus(
    n_long: int,
    n_short: int,
    seed: int,
    alphabet_size: int = 200,
    title_lengths: tuple[int, int] = (2, 10),
) -> tuple[list[Sample], FormRegistry]:
    """Mixed corpus of the two pseudo-forms plus the registry declaring them."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed])))
    alphabet = synthetic_alphabet(alphabet_size)
    chain = ContentChain(rng, alphabet_size)
    registry = synthetic_registry()
    samples = [
        random_sample(long_pseudo_form(), rng, alphabet, chain, title_lengths)
        for _ in range(n_long)
    ]
    samples.extend(
        random_sample(short_pseudo_form(), rng, alphabet, chain, title_lengths)
        for _ in range(n_short)
    )
    return samples, registry
