"""Benchmark the numba kernels against their pure-numpy fallbacks.

Per-kernel timings run both implementations in-process on training-shaped
inputs. The end-to-end section re-launches this script with SHICI_NUMBA=0
and =1 to time a full training step under each backend.

Usage:
    python benchmarks/bench_kernels.py            # kernel table + step compare
    python benchmarks/bench_kernels.py --step     # one backend's step time only
"""
import os
import subprocess
import sys
import time

import numpy as np

from shici import kernels

# shapes from a desk-scale training step: batch 16, seq 128, d 64, ff 128
ROWS, SEQ, DIM, FF, VOCAB = 16 * 128, 128, 64, 128, 256
HEADS = 4


def timeit(fn, *args, repeat=20):
    fn(*args)  # warm any JIT
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def bench_kernels() -> None:
    rng = np.random.Generator(np.random.PCG64(0))
    f32 = lambda *shape: rng.normal(size=shape).astype(np.float32)

    scores = f32(16 * HEADS, SEQ, SEQ)
    dy_sc = f32(16 * HEADS, SEQ, SEQ)
    probs = scores.copy()
    kernels.softmax_causal_np(probs, 0.25)
    x_ln = f32(ROWS, DIM)
    gain, bias = f32(DIM), f32(DIM)
    _, mean, rstd = kernels.layernorm_rows_np(x_ln, gain, bias, 1e-5)
    dy = f32(ROWS, DIM)
    x_ff = f32(ROWS, FF)
    logits = f32(ROWS, VOCAB)
    targets = rng.integers(0, VOCAB, size=ROWS)
    table = np.ones(VOCAB, dtype=np.float32)
    p = f32(VOCAB * DIM)
    grad = f32(VOCAB * DIM)
    m, v = np.zeros_like(p), np.zeros_like(p)
    emb = np.zeros((VOCAB, DIM), dtype=np.float32)
    idx = rng.integers(0, VOCAB, size=ROWS)
    src = f32(ROWS, DIM)

    cases = [
        ("softmax_causal", (lambda fn: fn(scores.copy(), 0.25))),
        ("softmax_causal_backward", (lambda fn: fn(dy_sc.copy(), probs, 0.25))),
        ("softmax_rows", (lambda fn: fn(logits))),
        ("layernorm_rows", (lambda fn: fn(x_ln, gain, bias, 1e-5))),
        ("layernorm_backward_rows", (lambda fn: fn(dy, x_ln, gain, mean, rstd))),
        ("gelu", (lambda fn: fn(x_ff))),
        ("gelu_backward", (lambda fn: fn(x_ff, x_ff))),
        ("weighted_ce_rows", (lambda fn: fn(logits, targets, table))),
        ("adam_step", (lambda fn: fn(p, grad, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.01, 1.1, 1.01))),
        ("scatter_add_rows", (lambda fn: fn(emb, idx, src))),
    ]

    print(f"{'kernel':28s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    pairs = kernels.variants()
    for name, call in cases:
        np_fn, nb_fn = pairs[name]
        t_np = timeit(lambda: call(np_fn))
        if nb_fn is None:
            print(f"{name:28s} {t_np * 1e3:9.2f}ms {'n/a':>10s}")
            continue
        t_nb = timeit(lambda: call(nb_fn))
        print(f"{name:28s} {t_np * 1e3:9.2f}ms {t_nb * 1e3:9.2f}ms {t_np / t_nb:7.1f}x")


def bench_step() -> float:
    """Time one batched loss+gradient evaluation under the active backend."""
    from shici.corpus import build_token_stream, build_vocabulary
    from shici.model import ModelConfig, TokenWeights, init_parameters, loss_and_gradients
    from shici.synthetic import build_synthetic_corpus
    from shici.training import Batcher

    samples, _ = build_synthetic_corpus(200, 200, seed=0)
    vocab = build_vocabulary(samples, min_frequency=1)
    stream = build_token_stream(samples, vocab)
    config = ModelConfig(
        vocab_size=vocab.size, layers=2, heads=HEADS, embed_dim=DIM,
        ff_dim=FF, max_seq_len=160, dropout_rate=0.0,
    )
    params = init_parameters(config, seed=0)
    weights = TokenWeights.enhanced(config.vocab_size)
    batcher = Batcher(stream, 16, config.max_seq_len, seed=0)
    loss_and_gradients(params, batcher.batch(0, 0), weights, config)
    start = time.perf_counter()
    n = 10
    for i in range(n):
        loss_and_gradients(params, batcher.batch(0, i + 1), weights, config)
    return (time.perf_counter() - start) / n


def main() -> None:
    if "--step" in sys.argv:
        ms = bench_step() * 1e3
        print(f"backend={kernels.BACKEND}: {ms:.1f} ms/step")
        return
    print(f"active backend: {kernels.BACKEND}")
    if not kernels.NUMBA_AVAILABLE:
        print("numba unavailable; kernel comparison skipped")
        return
    bench_kernels()
    print("\nend-to-end training step (subprocess per backend):")
    for flag in ("0", "1"):
        env = dict(os.environ, SHICI_NUMBA=flag)
        subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--step"],
            env=env,
            check=True,
        )


if __name__ == "__main__":
    main()
