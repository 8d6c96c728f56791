"""Autoregressive poem generation with top-k stochastic sampling.

A prompt fixes everything before the body ("[CLS]form#title*"); the model
continues until it emits the end marker or exhausts its budget. Form length
is never enforced at decode time; whether the model respects the form is
exactly what the evaluator measures.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import (
    CLS_ID,
    EOS_ID,
    LABEL1_ID,
    LABEL2_ID,
    CorpusError,
    Sample,
    Vocabulary,
    decode,
    parse,
)
from .model import (
    DecodeCache,
    ModelConfig,
    Parameters,
    decode_step,
    init_decode_cache,
    prefill,
)


class GenerationError(ValueError):
    """Invalid prompt or generation parameters."""


@dataclass
class GenerationParams:
    top_k: int = 15
    max_new_tokens: int = 160
    seed: int = 0
    count: int = 1

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise GenerationError("top_k must be >= 1")
        if self.max_new_tokens < 1:
            raise GenerationError("max_new_tokens must be >= 1")
        if self.count < 1:
            raise GenerationError("count must be >= 1")


@dataclass
class GenerationResult:
    form_name: str
    title: str
    prompt_ids: np.ndarray
    ids: np.ndarray
    text: str
    sample: Sample | None
    parse_error: str | None
    terminated: bool

    @property
    def parse_ok(self) -> bool:
        return self.sample is not None

    @property
    def raw_len(self) -> int:
        return int(self.ids.shape[0])

    def to_json_dict(self) -> dict:
        return {
            "form": self.form_name,
            "title": self.title,
            "body": list(self.sample.body_lines) if self.sample else None,
            "stanza_break": self.sample.stanza_break if self.sample else None,
            "terminated": self.terminated,
            "raw_len": self.raw_len,
            "parse_ok": self.parse_ok,
        }


def build_prompt(form_name: str, title: str, vocab: Vocabulary) -> np.ndarray:
    """Token ids of "[CLS]form#title*"; unknown characters become UNK."""
    ids = [CLS_ID]
    ids.extend(vocab.encode_symbol(ch) for ch in form_name)
    ids.append(LABEL1_ID)
    ids.extend(vocab.encode_symbol(ch) for ch in title)
    ids.append(LABEL2_ID)
    return np.array(ids, dtype=np.int64)


def _topk_rows(logits: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-row top-k candidate ids and their renormalized probabilities.

    Ties at the k-th logit resolve toward the lower token id (stable sort),
    so sampling is reproducible.
    """
    if not np.all(np.isfinite(logits)):
        raise GenerationError("non-finite logits during sampling")
    k = min(k, logits.shape[-1])
    order = np.argsort(-logits, axis=-1, kind="stable")[:, :k]
    top = np.take_along_axis(logits, order, axis=-1).astype(np.float64)
    top -= top.max(axis=-1, keepdims=True)
    probs = np.exp(top)
    probs /= probs.sum(axis=-1, keepdims=True)
    return order, probs


def _pick_rows(probs: np.ndarray, draws: np.ndarray) -> np.ndarray:
    cumulative = np.cumsum(probs, axis=-1)
    idx = np.sum(cumulative <= draws[:, None], axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def top_k_sample(logits, k: int, rng: np.random.Generator) -> int:
    """Sample one token id from the k highest logits (k=1 is exact argmax)."""
    if k < 1:
        raise GenerationError("top_k must be >= 1")
    vec = np.asarray(logits, dtype=np.float64).reshape(1, -1)
    order, probs = _topk_rows(vec, k)
    idx = _pick_rows(probs, np.array([rng.random()]))
    return int(order[0, idx[0]])


def _split_prompt(prompt_ids: np.ndarray, vocab: Vocabulary) -> tuple[str, str]:
    ids = list(int(i) for i in prompt_ids)
    if not ids or ids[0] != CLS_ID or ids[-1] != LABEL2_ID or LABEL1_ID not in ids:
        raise GenerationError(
            "prompt must be [CLS] + form + '#' + title + '*' token ids"
        )
    split = ids.index(LABEL1_ID)
    form = decode(ids[1:split], vocab)
    title = decode(ids[split + 1 : -1], vocab)
    return form, title


def generate(
    params: Parameters,
    prompt_ids: np.ndarray,
    gen: GenerationParams,
    config: ModelConfig,
    vocab: Vocabulary,
) -> GenerationResult:
    """Generate one poem continuation from a prompt."""
    return generate_batch(params, prompt_ids, gen, config, vocab, count=1)[0]


def generate_batch(
    params: Parameters,
    prompt_ids: np.ndarray,
    gen: GenerationParams,
    config: ModelConfig,
    vocab: Vocabulary,
    count: int | None = None,
) -> list[GenerationResult]:
    """Generate `count` poems from the same prompt in one batched decode.

    Every row draws from its own slice of a single seeded stream, so output
    is reproducible regardless of which rows finish first.
    """
    prompt = np.asarray(prompt_ids, dtype=np.int64)
    if prompt.ndim != 1 or prompt.shape[0] == 0:
        raise GenerationError("prompt must be a non-empty 1-D id sequence")
    n = gen.count if count is None else count
    if prompt.shape[0] + gen.max_new_tokens > config.max_seq_len:
        raise GenerationError(
            f"prompt length {prompt.shape[0]} + max_new_tokens "
            f"{gen.max_new_tokens} exceeds max_seq_len {config.max_seq_len}"
        )
    form_name, title = _split_prompt(prompt, vocab)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([gen.seed])))

    cache = init_decode_cache(config, n, dtype=params["tok_emb"].dtype)
    logits = prefill(params, np.tile(prompt, (n, 1)), config, cache)
    generated = np.zeros((n, gen.max_new_tokens), dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    for step in range(gen.max_new_tokens):
        order, probs = _topk_rows(logits, gen.top_k)
        picks = _pick_rows(probs, rng.random(n))
        tokens = order[np.arange(n), picks]
        generated[alive, step] = tokens[alive]
        lengths[alive] += 1
        alive &= tokens != EOS_ID
        if not alive.any() or step == gen.max_new_tokens - 1:
            break
        logits = decode_step(params, tokens, config, cache)

    results = []
    for i in range(n):
        new_ids = generated[i, : lengths[i]]
        ids = np.concatenate([prompt, new_ids])
        terminated = lengths[i] > 0 and new_ids[-1] == EOS_ID
        text = decode(ids, vocab)
        sample = None
        error = None
        try:
            sample = parse(text)
        except CorpusError as exc:
            error = str(exc)
        results.append(
            GenerationResult(
                form_name, title, prompt, ids, text, sample, error, bool(terminated)
            )
        )
    return results


def write_results_jsonl(results: Sequence[GenerationResult], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for result in results:
            handle.write(json.dumps(result.to_json_dict(), ensure_ascii=False) + "\n")
