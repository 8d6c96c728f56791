import numpy as np
import pytest

from shici.corpus import PAD_ID
from shici.model import (
    TokenWeights,
    ce_loss,
    forward,
    init_parameters,
    load_checkpoint,
    save_checkpoint,
    weighted_loss,
)
from shici.training import (
    Batcher,
    TrainConfig,
    TrainMode,
    TrainingError,
    clip_gradients,
    global_grad_norm,
    learning_rate_at,
    make_batches,
    train,
)


def quick_config(**overrides):
    base = dict(
        mode=TrainMode.BASIC,
        steps=20,
        batch_size=4,
        learning_rate=1e-3,
        warmup_steps=5,
        seed=7,
        checkpoint_every=10,
        log_every=5,
    )
    base.update(overrides)
    return TrainConfig(**base)


class TestBatcher:
    def test_batch_sizes(self, micro_setup):
        stream = micro_setup["stream"]  # 16 samples
        batches = list(make_batches(stream, batch_size=6, max_seq_len=32, seed=0))
        assert [b.shape[0] for b in batches] == [6, 6, 4]

    def test_same_seed_same_order(self, micro_setup):
        stream = micro_setup["stream"]
        a = list(make_batches(stream, 4, 32, seed=3))
        b = list(make_batches(stream, 4, 32, seed=3))
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_different_epochs_differ(self, micro_setup):
        batcher = Batcher(micro_setup["stream"], 16, 32, seed=3)
        assert not np.array_equal(batcher.epoch_order(0), batcher.epoch_order(1))

    def test_every_sample_once_per_epoch(self, micro_setup):
        stream = micro_setup["stream"]
        batcher = Batcher(stream, 5, 32, seed=1)
        seen = np.concatenate([batcher.epoch_order(0)])
        assert sorted(seen) == list(range(len(stream)))

    def test_truncation_counted(self, micro_setup, caplog):
        stream = micro_setup["stream"]
        with caplog.at_level("WARNING"):
            batcher = Batcher(stream, 4, max_seq_len=10, seed=0)
        assert batcher.truncated_per_epoch == len(stream)
        assert "truncated" in caplog.text
        for batch in batcher.iter_epoch(0):
            assert batch.shape[1] == 10

    def test_rows_right_padded(self, micro_setup):
        batch = next(iter(make_batches(micro_setup["stream"], 4, 32, seed=0)))
        lengths = (batch != PAD_ID).sum(axis=1)
        for row, n in zip(batch, lengths):
            assert np.all(row[n:] == PAD_ID)
            assert np.all(row[:n] != PAD_ID)


class TestSchedule:
    def test_warmup_then_decay(self):
        cfg = quick_config(steps=100, warmup_steps=10, learning_rate=1.0)
        assert learning_rate_at(1, cfg) == pytest.approx(0.1)
        assert learning_rate_at(10, cfg) == pytest.approx(1.0)
        assert learning_rate_at(11, cfg) == pytest.approx(1.0)
        assert learning_rate_at(100, cfg) == pytest.approx(1.0 / 90)
        mid = learning_rate_at(55, cfg)
        assert 0 < learning_rate_at(90, cfg) < mid < 1.0

    def test_no_warmup(self):
        cfg = quick_config(steps=10, warmup_steps=0, learning_rate=1.0)
        assert learning_rate_at(1, cfg) == pytest.approx(1.0)
        assert learning_rate_at(10, cfg) > 0

    def test_all_warmup(self):
        cfg = quick_config(steps=10, warmup_steps=50, learning_rate=1.0)
        assert learning_rate_at(10, cfg) == pytest.approx(0.2)


class TestClipping:
    def test_norm_bounded_after_clip(self):
        rng = np.random.Generator(np.random.PCG64(0))
        grads = {f"p{i}": rng.normal(size=(20, 20)) for i in range(4)}
        before = global_grad_norm(grads)
        assert before > 1.0
        returned = clip_gradients(grads, 1.0)
        assert returned == pytest.approx(before)
        assert global_grad_norm(grads) <= 1.0 + 1e-6

    def test_small_gradients_untouched(self):
        grads = {"p": np.full((3,), 1e-4)}
        clip_gradients(grads, 1.0)
        assert np.all(grads["p"] == 1e-4)


class TestTrain:
    def test_zero_learning_rate_is_identity(self, micro_setup):
        cfg = quick_config(learning_rate=0.0, steps=5)
        result = train(micro_setup["stream"], micro_setup["config"], cfg)
        fresh = init_parameters(micro_setup["config"], seed=cfg.seed)
        for name, value in fresh.items():
            assert np.array_equal(result.params[name], value)

    def test_loss_drops_on_overfit_smoke(self, micro_setup):
        cfg = quick_config(
            steps=250,
            batch_size=16,
            learning_rate=3e-3,
            warmup_steps=25,
            log_every=25,
            checkpoint_every=1000,
        )
        result = train(micro_setup["stream"], micro_setup["config"], cfg)
        first = result.report.entries[0].loss
        assert result.report.final_loss < first / 3

    def test_first_step_loss_matches_scalar_oracle(self, micro_setup):
        # identical init and batch; the two modes differ only through the
        # per-token weight factors
        stream, config = micro_setup["stream"], micro_setup["config"]
        losses = {}
        for mode in (TrainMode.BASIC, TrainMode.ENHANCED):
            cfg = quick_config(mode=mode, steps=1, log_every=1)
            result = train(stream, config, cfg)
            losses[mode] = result.report.entries[0].loss

        params = init_parameters(config, seed=7)
        batch = Batcher(stream, 4, config.max_seq_len, seed=7).batch(0, 0)
        logits = forward(params, batch[:, :-1], config)
        w = TokenWeights.enhanced(config.vocab_size)
        plain, stressed = [], []
        for r in range(batch.shape[0]):
            for t in range(batch.shape[1] - 1):
                target = int(batch[r, t + 1])
                if target == PAD_ID:
                    continue
                plain.append(ce_loss(logits[r, t], target))
                stressed.append(weighted_loss(logits[r, t], target, w))
        assert losses[TrainMode.BASIC] == pytest.approx(np.mean(plain), rel=1e-5)
        assert losses[TrainMode.ENHANCED] == pytest.approx(np.mean(stressed), rel=1e-5)

    def test_run_directory_artifacts(self, micro_setup, tmp_path):
        out = tmp_path / "run"
        cfg = quick_config(steps=20, checkpoint_every=10)
        train(micro_setup["stream"], micro_setup["config"], cfg, out_dir=out)
        assert (out / "config.json").exists()
        assert (out / "ckpt-0000010.pmc1").exists()
        assert (out / "ckpt-0000020.pmc1").exists()
        assert (out / "final.pmc1").exists()
        lines = (out / "report.csv").read_text().strip().splitlines()
        assert lines[0] == "step,loss,lr,wall_ms"
        assert len(lines) == 1 + 4

    def test_resume_reproduces_trajectory(self, micro_setup, tmp_path):
        stream, config = micro_setup["stream"], micro_setup["config"]
        cfg = quick_config(steps=30, checkpoint_every=10, log_every=5)
        full = train(stream, config, cfg, out_dir=tmp_path / "full")
        resumed = train(
            stream,
            config,
            cfg,
            out_dir=tmp_path / "resumed",
            resume_from=tmp_path / "full" / "ckpt-0000010.pmc1",
        )
        full_tail = [e for e in full.report.entries if e.step > 10]
        for a, b in zip(full_tail, resumed.report.entries):
            assert a.step == b.step
            assert b.loss == pytest.approx(a.loss, rel=1e-5)
        for name, value in full.params.items():
            np.testing.assert_allclose(resumed.params[name], value, rtol=1e-6, atol=1e-7)

    def test_vocab_hash_mismatch(self, micro_setup, tmp_path):
        config = micro_setup["config"]
        params = init_parameters(config, seed=0)
        path = tmp_path / "other.pmc1"
        save_checkpoint(path, params, config, "different-vocab", 5)
        with pytest.raises(TrainingError, match="hash"):
            train(micro_setup["stream"], config, quick_config(), resume_from=path)

    def test_stream_ids_must_fit_vocab(self, micro_setup):
        from shici.model import ModelConfig

        small = ModelConfig(
            vocab_size=9, layers=1, heads=1, embed_dim=8, ff_dim=16, max_seq_len=32
        )
        with pytest.raises(TrainingError, match="vocabulary"):
            train(micro_setup["stream"], small, quick_config())

    def test_nonfinite_loss_aborts(self, micro_setup, tmp_path):
        config = micro_setup["config"]
        params = init_parameters(config, seed=0)
        params["tok_emb"][:] = np.inf
        path = tmp_path / "poisoned.pmc1"
        opt = {}
        for name, p in params.items():
            opt[f"m:{name}"] = np.zeros_like(p)
            opt[f"v:{name}"] = np.zeros_like(p)
        save_checkpoint(
            path, params, config, micro_setup["stream"].vocab_hash, 0, opt
        )
        with pytest.raises(TrainingError, match="aborted at step 1"):
            train(micro_setup["stream"], config, quick_config(), resume_from=path)

    def test_config_validation(self):
        with pytest.raises(TrainingError):
            TrainConfig(steps=0)
        with pytest.raises(TrainingError):
            TrainConfig(batch_size=0)
        with pytest.raises(TrainingError):
            TrainConfig(learning_rate=-1.0)
