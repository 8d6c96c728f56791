import numpy as np
import pytest

from shici.corpus import (
    CLS_ID,
    EOS_ID,
    LABEL1_ID,
    LABEL2_ID,
    UNK_ID,
    build_vocabulary,
    Sample,
)
from shici.model import ModelConfig, init_parameters
from shici.sampling import (
    GenerationError,
    GenerationParams,
    build_prompt,
    generate,
    generate_batch,
    top_k_sample,
)


@pytest.fixture(scope="module")
def vocab():
    corpus = [Sample("形式名", "塞外题", ("床前明月光", "疑是地上霜"))]
    return build_vocabulary(corpus, min_frequency=1)


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


class TestBuildPrompt:
    def test_structure(self, vocab):
        ids = build_prompt("形式", "塞外", vocab)
        assert ids[0] == CLS_ID
        assert ids[3] == LABEL1_ID
        assert ids[-1] == LABEL2_ID
        assert len(ids) == 1 + 2 + 1 + 2 + 1

    def test_empty_title(self, vocab):
        ids = build_prompt("形式", "", vocab)
        assert list(ids[-2:]) == [LABEL1_ID, LABEL2_ID]

    def test_oov_title_char_becomes_unk(self, vocab):
        ids = build_prompt("形式", "Z外", vocab)
        assert ids[4] == UNK_ID
        assert ids[5] != UNK_ID


class TestTopKSample:
    def test_k1_is_argmax(self):
        assert top_k_sample(np.array([1.0, 3.0, 2.0]), 1, rng()) == 1

    def test_k1_argmax_on_random_vectors(self):
        r = rng(1)
        for _ in range(200):
            x = r.normal(size=11)
            assert top_k_sample(x, 1, r) == int(np.argmax(x))

    def test_tie_breaks_to_lower_id(self):
        x = np.array([1.0, 3.0, 3.0, 3.0])
        assert top_k_sample(x, 1, rng()) == 1
        # k=2 keeps ids 1 and 2 only; id 3 loses the tie for the last slot
        seen = {top_k_sample(x, 2, rng(i)) for i in range(64)}
        assert seen == {1, 2}

    def test_k2_distribution(self):
        x = np.array([0.0, 0.0, -100.0])
        r = rng(3)
        draws = np.array([top_k_sample(x, 2, r) for _ in range(10_000)])
        assert set(np.unique(draws)) == {0, 1}
        assert abs(np.mean(draws == 0) - 0.5) < 0.03

    def test_never_outside_top_k(self):
        r = rng(4)
        for _ in range(50):
            x = r.normal(size=20)
            top3 = set(np.argsort(-x, kind="stable")[:3])
            for _ in range(20):
                assert top_k_sample(x, 3, r) in top3

    def test_k_equal_vocab_matches_full_softmax(self):
        x = np.array([0.5, -0.2, 1.3, 0.0])
        probs = np.exp(x) / np.exp(x).sum()
        r = rng(5)
        draws = np.array([top_k_sample(x, 4, r) for _ in range(20_000)])
        freq = np.bincount(draws, minlength=4) / draws.size
        np.testing.assert_allclose(freq, probs, atol=0.015)

    def test_nonfinite_rejected(self):
        with pytest.raises(GenerationError):
            top_k_sample(np.array([np.nan, 0.0]), 1, rng())

    def test_params_validation(self):
        with pytest.raises(GenerationError):
            GenerationParams(top_k=0)
        with pytest.raises(GenerationError):
            GenerationParams(max_new_tokens=0)


@pytest.fixture(scope="module")
def micro_model(vocab):
    config = ModelConfig(
        vocab_size=vocab.size, layers=1, heads=2, embed_dim=16, ff_dim=32,
        max_seq_len=48, dropout_rate=0.0,
    )
    return init_parameters(config, seed=5), config


class TestGenerate:
    def test_deterministic_given_seed(self, vocab, micro_model):
        params, config = micro_model
        prompt = build_prompt("形式", "塞外", vocab)
        gen = GenerationParams(top_k=5, max_new_tokens=20, seed=9)
        a = generate(params, prompt, gen, config, vocab)
        b = generate(params, prompt, gen, config, vocab)
        assert np.array_equal(a.ids, b.ids)
        assert a.text == b.text

    def test_raw_starts_with_prompt(self, vocab, micro_model):
        params, config = micro_model
        prompt = build_prompt("形式", "", vocab)
        result = generate(params, prompt, GenerationParams(max_new_tokens=10, seed=2), config, vocab)
        assert np.array_equal(result.ids[: len(prompt)], prompt)
        assert result.form_name == "形式"
        assert result.title == ""

    def test_unterminated_flag(self, vocab, micro_model):
        _, config = micro_model
        # zero parameters give uniform zero logits; greedy sampling always
        # picks token id 0, never EOS
        zeros = {k: np.zeros_like(v) for k, v in init_parameters(config, 1).items()}
        prompt = build_prompt("形式", "", vocab)
        result = generate(
            zeros, prompt, GenerationParams(top_k=1, max_new_tokens=1, seed=0), config, vocab
        )
        assert not result.terminated
        assert not result.parse_ok
        assert result.parse_error is not None

    def test_eos_terminates(self, vocab, micro_model):
        _, config = micro_model
        # bias the head so EOS always wins: tie embeddings off, zero params
        # except a head column pushing EOS
        params = {k: np.zeros_like(v) for k, v in init_parameters(config, 1).items()}
        params["head.w"][:, EOS_ID] = 0.0
        params["ln_f.bias"][:] = 1.0
        params["head.w"][0, EOS_ID] = 10.0
        prompt = build_prompt("形式", "", vocab)
        result = generate(
            params, prompt, GenerationParams(top_k=1, max_new_tokens=30, seed=0), config, vocab
        )
        assert result.terminated
        assert result.ids[-1] == EOS_ID
        assert result.raw_len == len(prompt) + 1

    def test_budget_precondition(self, vocab, micro_model):
        params, config = micro_model
        prompt = build_prompt("形式", "塞外", vocab)
        with pytest.raises(GenerationError, match="max_seq_len"):
            generate(params, prompt, GenerationParams(max_new_tokens=1000), config, vocab)

    def test_batch_count_and_json_shape(self, vocab, micro_model):
        params, config = micro_model
        prompt = build_prompt("形式", "塞外", vocab)
        gen = GenerationParams(top_k=3, max_new_tokens=15, seed=4, count=5)
        results = generate_batch(params, prompt, gen, config, vocab)
        assert len(results) == 5
        payload = results[0].to_json_dict()
        assert set(payload) == {
            "form", "title", "body", "stanza_break", "terminated", "raw_len", "parse_ok",
        }
        assert payload["form"] == "形式"

    def test_batch_rows_match_single_stream_determinism(self, vocab, micro_model):
        params, config = micro_model
        prompt = build_prompt("形式", "", vocab)
        gen = GenerationParams(top_k=4, max_new_tokens=12, seed=11, count=3)
        first = generate_batch(params, prompt, gen, config, vocab)
        second = generate_batch(params, prompt, gen, config, vocab)
        for a, b in zip(first, second):
            assert np.array_equal(a.ids, b.ids)
