import numpy as np
import pytest

from shici.corpus import Sample, build_token_stream, build_vocabulary
from shici.forms import Category, FormRegistry, FormSpec
from shici.model import ModelConfig

MICRO_FORM = FormSpec("Micro", Category.CI, (3, 3))
MICRO_ALPHABET = "甲乙丙丁戊己庚辛壬癸"


def micro_corpus(n: int, seed: int = 0) -> list[Sample]:
    """Tiny fixed-form corpus for fast training tests."""
    rng = np.random.Generator(np.random.PCG64(seed))
    chars = np.array(list(MICRO_ALPHABET))
    samples = []
    for _ in range(n):
        title = "".join(rng.choice(chars, size=2))
        lines = tuple("".join(rng.choice(chars, size=3)) for _ in range(2))
        samples.append(Sample(MICRO_FORM.name, title, lines))
    return samples


@pytest.fixture(scope="session")
def micro_setup():
    samples = micro_corpus(16, seed=42)
    vocab = build_vocabulary(samples, min_frequency=1)
    stream = build_token_stream(samples, vocab)
    registry = FormRegistry([MICRO_FORM])
    config = ModelConfig(
        vocab_size=vocab.size,
        layers=2,
        heads=2,
        embed_dim=32,
        ff_dim=64,
        max_seq_len=32,
        dropout_rate=0.0,
    )
    return {
        "samples": samples,
        "vocab": vocab,
        "stream": stream,
        "registry": registry,
        "config": config,
    }
