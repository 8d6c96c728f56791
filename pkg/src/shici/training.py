"""Training loop: deterministic batching, Adam with linear warmup and decay,
gradient clipping, periodic checkpoints, and a CSV progress report.

Two modes: BASIC trains with uniform token weights, ENHANCED stresses the
form tokens (line separator and stanza separator at 2x, end marker at 3x).
"""
from __future__ import annotations

import enum
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import kernels
from .corpus import PAD_ID, TokenStream
from .model import (
    Checkpoint,
    ModelConfig,
    ModelError,
    Parameters,
    TokenWeights,
    init_parameters,
    load_checkpoint,
    loss_and_gradients,
    save_checkpoint,
)

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingError(RuntimeError):
    """Training aborted (diverged loss, mismatched stream, bad config)."""


class TrainMode(enum.Enum):
    BASIC = "basic"
    ENHANCED = "enhanced"

    def token_weights(self, vocab_size: int) -> TokenWeights:
        if self is TrainMode.BASIC:
            return TokenWeights.basic(vocab_size)
        return TokenWeights.enhanced(vocab_size)


@dataclass
class TrainConfig:
    mode: TrainMode = TrainMode.ENHANCED
    steps: int = 1000
    batch_size: int = 32
    learning_rate: float = 2.5e-4
    warmup_steps: int = 2000
    weight_decay: float = 0.01
    grad_clip_norm: float = 1.0
    seed: int = 0
    checkpoint_every: int = 1000
    log_every: int = 50

    def __post_init__(self) -> None:
        if isinstance(self.mode, str):
            self.mode = TrainMode(self.mode)
        if self.steps < 1:
            raise TrainingError("steps must be >= 1")
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise TrainingError("learning_rate must be >= 0")
        if self.warmup_steps < 0:
            raise TrainingError("warmup_steps must be >= 0")
        if self.grad_clip_norm <= 0:
            raise TrainingError("grad_clip_norm must be positive")
        if self.checkpoint_every < 1 or self.log_every < 1:
            raise TrainingError("checkpoint_every and log_every must be >= 1")

    def to_dict(self) -> dict:
        data = dict(self.__dict__)
        data["mode"] = self.mode.value
        return data


class Batcher:
    """Deterministic per-epoch shuffling of one-sample-per-row batches.

    Rows are right-padded with PAD to the longest sample in the batch and
    truncated at max_seq_len. The shuffle for epoch e depends only on
    (seed, e), so any step can be replayed.
    """

    def __init__(
        self, stream: TokenStream, batch_size: int, max_seq_len: int, seed: int
    ) -> None:
        if len(stream) == 0:
            raise TrainingError("token stream is empty")
        self.stream = stream
        self.batch_size = batch_size
        self.max_seq_len = max_seq_len
        self.seed = seed
        lengths = stream.sample_lengths()
        self.truncated_per_epoch = int(np.sum(lengths > max_seq_len))
        if self.truncated_per_epoch:
            logger.warning(
                "%d of %d samples exceed max_seq_len=%d and will be truncated",
                self.truncated_per_epoch,
                len(stream),
                max_seq_len,
            )

    @property
    def steps_per_epoch(self) -> int:
        return -(-len(self.stream) // self.batch_size)

    def epoch_order(self, epoch: int) -> np.ndarray:
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.seed, epoch]))
        )
        return rng.permutation(len(self.stream))

    def batch(self, epoch: int, index: int) -> np.ndarray:
        order = self.epoch_order(epoch)
        chunk = order[index * self.batch_size : (index + 1) * self.batch_size]
        if chunk.size == 0:
            raise IndexError(f"batch index {index} out of range")
        return self._assemble(chunk)

    def iter_epoch(self, epoch: int) -> Iterator[np.ndarray]:
        order = self.epoch_order(epoch)
        for start in range(0, len(order), self.batch_size):
            yield self._assemble(order[start : start + self.batch_size])

    def _assemble(self, indices: np.ndarray) -> np.ndarray:
        rows = [self.stream.sample_ids(int(i))[: self.max_seq_len] for i in indices]
        width = max(len(r) for r in rows)
        batch = np.full((len(rows), width), PAD_ID, dtype=np.int64)
        for i, row in enumerate(rows):
            batch[i, : len(row)] = row
        return batch


def make_batches(
    stream: TokenStream, batch_size: int, max_seq_len: int, seed: int, epoch: int = 0
) -> Iterator[np.ndarray]:
    """One epoch of padded batches with the deterministic per-epoch shuffle."""
    return Batcher(stream, batch_size, max_seq_len, seed).iter_epoch(epoch)


def learning_rate_at(step: int, config: TrainConfig) -> float:
    """Linear warmup to the peak rate, then linear decay toward zero.

    step is 1-based; the decay reaches zero one step past the configured
    total so the final update is still non-null.
    """
    if config.warmup_steps >= config.steps:
        return config.learning_rate * step / max(config.warmup_steps, 1)
    if step <= config.warmup_steps:
        return config.learning_rate * step / config.warmup_steps
    remaining = config.steps - step + 1
    return config.learning_rate * remaining / (config.steps - config.warmup_steps)


def global_grad_norm(grads: Parameters) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g, dtype=np.float64)))
    return float(np.sqrt(total))


def clip_gradients(grads: Parameters, max_norm: float) -> float:
    """Scale gradients in place to the given global norm; returns the pre-clip norm."""
    norm = global_grad_norm(grads)
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= g.dtype.type(factor)
    return norm


@dataclass
class ReportEntry:
    step: int
    loss: float
    lr: float
    wall_ms: float


@dataclass
class TrainReport:
    entries: list[ReportEntry] = field(default_factory=list)
    truncated_samples: int = 0

    @property
    def final_loss(self) -> float:
        if not self.entries:
            raise TrainingError("empty training report")
        return self.entries[-1].loss

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as handle:
            handle.write("step,loss,lr,wall_ms\n")
            for e in self.entries:
                handle.write(f"{e.step},{e.loss:.6f},{e.lr:.8g},{e.wall_ms:.1f}\n")


@dataclass
class TrainResult:
    params: Parameters
    report: TrainReport
    final_checkpoint: Path | None = None
    opt_state: Parameters = field(default_factory=dict)


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, step])))


def train(
    stream: TokenStream,
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: str | Path | None = None,
    resume_from: str | Path | Checkpoint | None = None,
) -> TrainResult:
    """Run the optimization loop; returns final parameters and the report.

    With out_dir set, writes a config snapshot, periodic checkpoints, a
    final checkpoint, and report.csv. Resuming restores parameters, Adam
    moments, and the step counter, reproducing the uninterrupted run.
    """
    if int(stream.ids.max()) >= model_config.vocab_size:
        raise TrainingError(
            "token stream contains ids outside the model vocabulary"
        )
    start_step = 0
    opt_state: Parameters = {}
    if resume_from is not None:
        ckpt = (
            resume_from
            if isinstance(resume_from, Checkpoint)
            else load_checkpoint(resume_from)
        )
        if ckpt.vocab_hash != stream.vocab_hash:
            raise TrainingError(
                "checkpoint vocabulary hash does not match the token stream"
            )
        if ckpt.config != model_config:
            raise TrainingError("checkpoint model config does not match")
        params = {k: v.copy() for k, v in ckpt.params.items()}
        opt_state = {k: v.copy() for k, v in ckpt.opt_state.items()}
        start_step = ckpt.step
    else:
        params = init_parameters(model_config, seed=train_config.seed)

    moments_m = {
        name: opt_state.get(f"m:{name}", np.zeros_like(p)) for name, p in params.items()
    }
    moments_v = {
        name: opt_state.get(f"v:{name}", np.zeros_like(p)) for name, p in params.items()
    }
    weights = train_config.mode.token_weights(model_config.vocab_size)
    batcher = Batcher(
        stream, train_config.batch_size, model_config.max_seq_len, train_config.seed
    )
    report = TrainReport(truncated_samples=batcher.truncated_per_epoch)

    out_path: Path | None = None
    csv_handle = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        snapshot = {
            "model": model_config.to_dict(),
            "train": train_config.to_dict(),
            "vocab_hash": stream.vocab_hash,
        }
        (out_path / "config.json").write_text(
            json.dumps(snapshot, indent=2), encoding="utf-8"
        )
        csv_handle = (out_path / "report.csv").open("w", encoding="utf-8")
        csv_handle.write("step,loss,lr,wall_ms\n")

    def checkpoint_to(path: Path, step: int) -> None:
        opt = {}
        for name in params:
            opt[f"m:{name}"] = moments_m[name]
            opt[f"v:{name}"] = moments_v[name]
        save_checkpoint(path, params, model_config, stream.vocab_hash, step, opt)

    last_good: Path | None = None
    window_losses: list[float] = []
    window_start = time.monotonic()
    final_path: Path | None = None
    try:
        for step in range(start_step + 1, train_config.steps + 1):
            epoch = (step - 1) // batcher.steps_per_epoch
            index = (step - 1) % batcher.steps_per_epoch
            batch = batcher.batch(epoch, index)
            rng = _step_rng(train_config.seed, step)
            try:
                loss, grads = loss_and_gradients(
                    params, batch, weights, model_config, train=True, rng=rng
                )
            except ModelError as exc:
                raise TrainingError(
                    f"aborted at step {step}: {exc}"
                    + (f" (last good checkpoint: {last_good})" if last_good else "")
                ) from exc
            clip_gradients(grads, train_config.grad_clip_norm)
            lr = learning_rate_at(step, train_config)
            c1 = 1.0 / (1.0 - ADAM_BETA1 ** step)
            c2 = 1.0 / (1.0 - ADAM_BETA2 ** step)
            for name, p in params.items():
                wd = train_config.weight_decay if p.ndim >= 2 else 0.0
                kernels.adam_step(
                    p.ravel(),
                    np.ascontiguousarray(grads[name]).ravel(),
                    moments_m[name].ravel(),
                    moments_v[name].ravel(),
                    lr,
                    ADAM_BETA1,
                    ADAM_BETA2,
                    ADAM_EPS,
                    wd,
                    c1,
                    c2,
                )
            window_losses.append(loss)
            if step % train_config.log_every == 0 or step == train_config.steps:
                wall_ms = (time.monotonic() - window_start) * 1000.0
                entry = ReportEntry(step, float(np.mean(window_losses)), lr, wall_ms)
                report.entries.append(entry)
                if csv_handle is not None:
                    csv_handle.write(
                        f"{entry.step},{entry.loss:.6f},{entry.lr:.8g},{entry.wall_ms:.1f}\n"
                    )
                    csv_handle.flush()
                window_losses = []
                window_start = time.monotonic()
            if out_path is not None and step % train_config.checkpoint_every == 0:
                ckpt_path = out_path / f"ckpt-{step:07d}.pmc1"
                checkpoint_to(ckpt_path, step)
                last_good = ckpt_path
        if out_path is not None:
            final_path = out_path / "final.pmc1"
            checkpoint_to(final_path, train_config.steps)
    finally:
        if csv_handle is not None:
            csv_handle.close()
    final_opt: Parameters = {}
    for name in params:
        final_opt[f"m:{name}"] = moments_m[name]
        final_opt[f"v:{name}"] = moments_v[name]
    return TrainResult(params, report, final_path, final_opt)
