"""Desk-scale form-control experiment shared by the acceptance suite.

One protocol run: build the synthetic two-form corpus, train one model, and
measure the correct-in-form rate from 300 sampled poems per form. The
acceptance criteria compare basic vs enhanced training and the stanza-label
ablation across three seeds.
"""
from dataclasses import dataclass

from shici.corpus import build_token_stream, build_vocabulary
from shici.evaluation import correct_rate
from shici.forms import FormRegistry, FormSpec
from shici.model import ModelConfig
from shici.sampling import GenerationParams, build_prompt, generate_batch
from shici.synthetic import (
    build_synthetic_corpus,
    long_pseudo_form,
    short_pseudo_form,
)
from shici.training import TrainConfig, TrainMode, train

DESK_SEEDS = (0, 1, 2)
N_POEMS_PER_FORM = 2000
N_GENERATIONS = 300
DESK_STEPS = 20_000
DESK_BATCH = 4
DESK_LR = 1e-3
DESK_WARMUP = 500
TOP_K = 15
MAX_NEW_TOKENS = 140

MODEL_KW = dict(
    layers=2, heads=2, embed_dim=32, ff_dim=64, max_seq_len=160, dropout_rate=0.0
)


def prompt_title(vocab) -> str:
    """A fixed in-vocabulary title: the four most frequent characters."""
    return "".join(vocab.decode_id(i) for i in range(8, 12))


@dataclass
class RunRates:
    """Correct rates of one trained model, keyed by form name."""

    seed: int
    mode: TrainMode
    stanza_label: bool
    rates: dict
    counts: dict


def expected_registry(stanza_label: bool) -> FormRegistry:
    """Forms as each training regime serializes them.

    Without the stanza label the corpus carries no stanza information, so
    the expected long form drops its break (line structure still binds).
    """
    long_spec = long_pseudo_form()
    if not stanza_label:
        long_spec = FormSpec(
            long_spec.name, long_spec.category, long_spec.line_lengths, None
        )
    return FormRegistry([long_spec, short_pseudo_form()])


def run_protocol(seed: int, mode: TrainMode, stanza_label: bool) -> RunRates:
    samples, _ = build_synthetic_corpus(
        N_POEMS_PER_FORM, N_POEMS_PER_FORM, seed=1000 + seed
    )
    vocab = build_vocabulary(samples, min_frequency=3)
    stream = build_token_stream(samples, vocab, include_stanza_label=stanza_label)
    config = ModelConfig(vocab_size=vocab.size, **MODEL_KW)
    train_config = TrainConfig(
        mode=mode,
        steps=DESK_STEPS,
        batch_size=DESK_BATCH,
        learning_rate=DESK_LR,
        warmup_steps=DESK_WARMUP,
        seed=seed,
        checkpoint_every=10**9,
        log_every=1000,
    )
    result = train(stream, config, train_config)

    registry = expected_registry(stanza_label)
    records = []
    title = prompt_title(vocab)
    for form_index, spec in enumerate(registry.user_forms()):
        prompt = build_prompt(spec.name, title, vocab)
        gen = GenerationParams(
            top_k=TOP_K,
            max_new_tokens=MAX_NEW_TOKENS,
            seed=9000 + seed * 10 + form_index + (100 if stanza_label else 0),
            count=N_GENERATIONS,
        )
        records.extend(generate_batch(result.params, prompt, gen, config, vocab))
    report = correct_rate(records, registry, mode=mode.value)
    return RunRates(
        seed=seed,
        mode=mode,
        stanza_label=stanza_label,
        rates={row.form: row.rate for row in report.rows},
        counts={row.form: (row.correct, row.generated) for row in report.rows},
    )
