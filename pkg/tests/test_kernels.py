"""Backend equivalence: every numba kernel must match its numpy fallback."""

import numpy as np
import pytest

from shici import kernels

pytestmark = pytest.mark.skipif(
    not kernels.NUMBA_AVAILABLE, reason="numba not installed"
)

RNG = np.random.Generator(np.random.PCG64(123))
DTYPES = [np.float32, np.float64]


def tol(dtype):
    # numba accumulates in float64 before the float32 store, so the two
    # backends differ by ordinary rounding noise
    return {"rtol": 1e-5, "atol": 5e-6} if dtype == np.float32 else {"rtol": 1e-10, "atol": 1e-12}


@pytest.mark.parametrize("dtype", DTYPES)
def test_softmax_rows(dtype):
    x = RNG.normal(size=(40, 17)).astype(dtype) * 3
    x[::5, -3:] = -np.inf  # masked attention slots
    np.testing.assert_allclose(
        kernels.softmax_rows_nb(x), kernels.softmax_rows_np(x), **tol(dtype)
    )


@pytest.mark.parametrize("dtype", DTYPES)
def test_softmax_causal(dtype):
    scores = RNG.normal(size=(6, 13, 13)).astype(dtype) * 2
    a, b = scores.copy(), scores.copy()
    kernels.softmax_causal_nb(a, 0.25)
    kernels.softmax_causal_np(b, 0.25)
    np.testing.assert_allclose(a, b, **tol(dtype))
    assert np.all(a[:, 0, 1:] == 0.0)  # masked slots are exact zeros
    np.testing.assert_allclose(a.sum(axis=-1), 1.0, **tol(dtype))


@pytest.mark.parametrize("dtype", DTYPES)
def test_softmax_causal_backward(dtype):
    scores = RNG.normal(size=(4, 9, 9)).astype(dtype)
    probs = scores.copy()
    kernels.softmax_causal_np(probs, 0.5)
    dp = RNG.normal(size=scores.shape).astype(dtype)
    a, b = dp.copy(), dp.copy()
    kernels.softmax_causal_backward_nb(a, probs, 0.5)
    kernels.softmax_causal_backward_np(b, probs, 0.5)
    np.testing.assert_allclose(a, b, **tol(dtype))
    assert np.all(a[:, 0, 1:] == 0.0)


@pytest.mark.parametrize("dtype", DTYPES)
def test_softmax_backward_rows(dtype):
    y = kernels.softmax_rows_np(RNG.normal(size=(30, 11)).astype(dtype))
    dy = RNG.normal(size=y.shape).astype(dtype)
    np.testing.assert_allclose(
        kernels.softmax_backward_rows_nb(dy, y),
        kernels.softmax_backward_rows_np(dy, y),
        **tol(dtype),
    )


@pytest.mark.parametrize("dtype", DTYPES)
def test_layernorm_rows(dtype):
    x = RNG.normal(size=(25, 16)).astype(dtype)
    g = RNG.normal(size=16).astype(dtype)
    b = RNG.normal(size=16).astype(dtype)
    y1, m1, r1 = kernels.layernorm_rows_nb(x, g, b, 1e-5)
    y2, m2, r2 = kernels.layernorm_rows_np(x, g, b, 1e-5)
    np.testing.assert_allclose(y1, y2, **tol(dtype))
    np.testing.assert_allclose(m1, m2, **tol(dtype))
    np.testing.assert_allclose(r1, r2, **tol(dtype))


@pytest.mark.parametrize("dtype", DTYPES)
def test_layernorm_backward_rows(dtype):
    x = RNG.normal(size=(25, 16)).astype(dtype)
    g = RNG.normal(size=16).astype(dtype)
    b = np.zeros(16, dtype=dtype)
    _, mean, rstd = kernels.layernorm_rows_np(x, g, b, 1e-5)
    dy = RNG.normal(size=x.shape).astype(dtype)
    out_nb = kernels.layernorm_backward_rows_nb(dy, x, g, mean, rstd)
    out_np = kernels.layernorm_backward_rows_np(dy, x, g, mean, rstd)
    for a, b_ in zip(out_nb, out_np):
        np.testing.assert_allclose(a, b_, **tol(dtype))


@pytest.mark.parametrize("dtype", DTYPES)
def test_gelu_and_backward(dtype):
    x = (RNG.normal(size=(12, 33)) * 4).astype(dtype)
    dy = RNG.normal(size=x.shape).astype(dtype)
    np.testing.assert_allclose(kernels.gelu_nb(x), kernels.gelu_np(x), **tol(dtype))
    np.testing.assert_allclose(
        kernels.gelu_backward_nb(x, dy), kernels.gelu_backward_np(x, dy), **tol(dtype)
    )


@pytest.mark.parametrize("dtype", DTYPES)
def test_weighted_ce_rows(dtype):
    logits = (RNG.normal(size=(50, 23)) * 5).astype(dtype)
    targets = RNG.integers(0, 23, size=50)
    table = np.ones(23, dtype=dtype)
    table[
        [3, 4, 7]
    ] = 2.5
    l1, d1 = kernels.weighted_ce_rows_nb(logits, targets, table)
    l2, d2 = kernels.weighted_ce_rows_np(logits, targets, table)
    np.testing.assert_allclose(l1, l2, **tol(dtype))
    np.testing.assert_allclose(d1, d2, **tol(dtype))


@pytest.mark.parametrize("dtype", DTYPES)
def test_adam_step(dtype):
    p = RNG.normal(size=64).astype(dtype)
    g = RNG.normal(size=64).astype(dtype)
    m = RNG.normal(size=64).astype(dtype) * 0.1
    v = np.abs(RNG.normal(size=64).astype(dtype)) * 0.01
    args = (3e-4, 0.9, 0.999, 1e-8, 0.01, 1.2, 1.05)
    p1, m1, v1 = p.copy(), m.copy(), v.copy()
    p2, m2, v2 = p.copy(), m.copy(), v.copy()
    kernels.adam_step_nb(p1, g, m1, v1, *args)
    kernels.adam_step_np(p2, g, m2, v2, *args)
    np.testing.assert_allclose(p1, p2, **tol(dtype))
    np.testing.assert_allclose(m1, m2, **tol(dtype))
    np.testing.assert_allclose(v1, v2, **tol(dtype))


@pytest.mark.parametrize("dtype", DTYPES)
def test_scatter_add_rows(dtype):
    out1 = np.zeros((9, 7), dtype=dtype)
    out2 = np.zeros((9, 7), dtype=dtype)
    idx = RNG.integers(0, 9, size=40)  # repeated rows must accumulate
    src = RNG.normal(size=(40, 7)).astype(dtype)
    kernels.scatter_add_rows_nb(out1, idx, src)
    kernels.scatter_add_rows_np(out2, idx, src)
    np.testing.assert_allclose(out1, out2, **tol(dtype))


def test_backend_reporting():
    assert kernels.BACKEND in ("numpy", "numba", "mixed")
    pairs = kernels.variants()
    assert set(pairs) >= {"softmax_rows", "adam_step", "weighted_ce_rows"}


def test_env_flag_forces_backend():
    import subprocess
    import sys

    for flag, expected in (("0", "numpy"), ("1", "numba"), ("auto", "mixed")):
        out = subprocess.run(
            [sys.executable, "-c", "from shici import kernels; print(kernels.BACKEND)"],
            capture_output=True,
            text=True,
            env={"PATH": "/usr/bin:/bin", "SHICI_NUMBA": flag},
            check=True,
        )
        assert out.stdout.strip() == expected
