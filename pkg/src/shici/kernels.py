"""Hot numeric kernels with two interchangeable backends.

Every kernel has a pure-numpy implementation and a numba @njit loop version,
selected once at import from the SHICI_NUMBA environment variable:
"1"/"true" forces numba everywhere (import error if unavailable),
"0"/"false" forces numpy everywhere. Unset/"auto" picks per kernel: numba
where fused loops win (scatter-add, layernorm, causal attention backward),
numpy where its SIMD exp/tanh wins (gelu, softmax, cross-entropy). Run
benchmarks/bench_kernels.py for the measurements behind that split.
"""
from __future__ import annotations

import math
import os

import numpy as np

_TRUTHY = {"1", "true", "on", "yes"}
_FALSY = {"0", "false", "off", "no"}

# kernels whose numpy implementation is faster on typical desk shapes
# (vectorized transcendentals beat scalar loops)
_NUMPY_PREFERRED = {
    "softmax_rows",
    "softmax_backward_rows",
    "gelu",
    "gelu_backward",
    "weighted_ce_rows",
}


def _resolve_backend() -> tuple[bool, str]:
    """Returns (numba_available, mode) with mode in numpy/numba/auto."""
    flag = os.environ.get("SHICI_NUMBA", "auto").strip().lower()
    try:
        import numba  # noqa: F401

        available = True
    except ImportError:
        available = False
    if flag in _FALSY:
        return available, "numpy"
    if flag in _TRUTHY:
        if not available:
            raise ImportError("SHICI_NUMBA=1 set but numba is not importable")
        return True, "numba"
    return available, "auto" if available else "numpy"


NUMBA_AVAILABLE, _MODE = _resolve_backend()
BACKEND = "mixed" if _MODE == "auto" else _MODE

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def softmax_rows_np(x):
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_backward_rows_np(dy, y):
    inner = np.sum(dy * y, axis=-1, keepdims=True)
    return y * (dy - inner)


def softmax_causal_np(scores, scale):
    """In-place causal softmax over (rows, T, T) attention scores.

    Row i of each map attends to columns 0..i of scale*scores; columns above
    the diagonal come out exactly zero.
    """
    t = scores.shape[-1]
    scores *= scores.dtype.type(scale)
    mask = np.triu(np.full((t, t), -np.inf, dtype=scores.dtype), k=1)
    scores += mask
    m = np.max(scores, axis=-1, keepdims=True)
    np.exp(scores - m, out=scores)
    scores /= np.sum(scores, axis=-1, keepdims=True)


def softmax_causal_backward_np(dp, p, scale):
    """In-place gradient through softmax_causal: dp becomes d(raw scores)."""
    inner = np.sum(dp * p, axis=-1, keepdims=True)
    dp -= inner
    dp *= p
    dp *= dp.dtype.type(scale)


def layernorm_rows_np(x, g, b, eps):
    mean = np.mean(x, axis=-1)
    var = np.var(x, axis=-1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean[:, None]) * rstd[:, None] * g + b
    return y, mean, rstd


def layernorm_backward_rows_np(dy, x, g, mean, rstd):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dxhat = dy * g
    m1 = np.mean(dxhat, axis=-1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
    dx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    dg = np.sum(dy * xhat, axis=0)
    db = np.sum(dy, axis=0)
    return dx, dg, db


def gelu_np(x):
    u = _GELU_C * (x + _GELU_A * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_backward_np(x, dy):
    u = _GELU_C * (x + _GELU_A * x * x * x)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def weighted_ce_rows_np(logits, targets, weight_table):
    rows = np.arange(logits.shape[0])
    m = np.max(logits, axis=-1, keepdims=True)
    e = np.exp(logits - m)
    z = np.sum(e, axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(z[:, 0])
    w = weight_table[targets]
    losses = w * (lse - logits[rows, targets])
    dlogits = (e / z) * w[:, None]
    dlogits[rows, targets] -= w
    return losses, dlogits


def adam_step_np(p, g, m, v, lr, beta1, beta2, eps, wd, c1, c2):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    update = (m * c1) / (np.sqrt(v * c2) + eps)
    if wd != 0.0:
        update = update + wd * p
    p -= lr * update


def scatter_add_rows_np(out, idx, src):
    np.add.at(out, idx, src)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if NUMBA_AVAILABLE:
    from numba import njit

    @njit(cache=True)
    def softmax_causal_nb(scores, scale):
        rows, t, _ = scores.shape
        for r in range(rows):
            for i in range(t):
                m = scores[r, i, 0] * scale
                for j in range(1, i + 1):
                    s = scores[r, i, j] * scale
                    if s > m:
                        m = s
                total = 0.0
                for j in range(i + 1):
                    e = np.exp(scores[r, i, j] * scale - m)
                    scores[r, i, j] = e
                    total += e
                inv = 1.0 / total
                for j in range(i + 1):
                    scores[r, i, j] *= inv
                for j in range(i + 1, t):
                    scores[r, i, j] = 0.0

    @njit(cache=True)
    def softmax_causal_backward_nb(dp, p, scale):
        rows, t, _ = dp.shape
        for r in range(rows):
            for i in range(t):
                inner = 0.0
                for j in range(i + 1):
                    inner += dp[r, i, j] * p[r, i, j]
                for j in range(i + 1):
                    dp[r, i, j] = scale * p[r, i, j] * (dp[r, i, j] - inner)
                for j in range(i + 1, t):
                    dp[r, i, j] = 0.0

    @njit(cache=True)
    def softmax_rows_nb(x):
        out = np.empty_like(x)
        rows, cols = x.shape
        for i in range(rows):
            m = x[i, 0]
            for j in range(1, cols):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(cols):
                e = np.exp(x[i, j] - m)
                out[i, j] = e
                s += e
            inv = 1.0 / s
            for j in range(cols):
                out[i, j] *= inv
        return out

    @njit(cache=True)
    def softmax_backward_rows_nb(dy, y):
        dx = np.empty_like(y)
        rows, cols = y.shape
        for i in range(rows):
            inner = 0.0
            for j in range(cols):
                inner += dy[i, j] * y[i, j]
            for j in range(cols):
                dx[i, j] = y[i, j] * (dy[i, j] - inner)
        return dx

    @njit(cache=True)
    def layernorm_rows_nb(x, g, b, eps):
        rows, cols = x.shape
        y = np.empty_like(x)
        mean = np.empty(rows, dtype=x.dtype)
        rstd = np.empty(rows, dtype=x.dtype)
        for i in range(rows):
            s = 0.0
            for j in range(cols):
                s += x[i, j]
            mu = s / cols
            sq = 0.0
            for j in range(cols):
                d = x[i, j] - mu
                sq += d * d
            r = 1.0 / np.sqrt(sq / cols + eps)
            mean[i] = mu
            rstd[i] = r
            for j in range(cols):
                y[i, j] = (x[i, j] - mu) * r * g[j] + b[j]
        return y, mean, rstd

    @njit(cache=True)
    def layernorm_backward_rows_nb(dy, x, g, mean, rstd):
        rows, cols = x.shape
        dx = np.empty_like(x)
        dg = np.zeros(cols, dtype=x.dtype)
        db = np.zeros(cols, dtype=x.dtype)
        for i in range(rows):
            mu = mean[i]
            r = rstd[i]
            m1 = 0.0
            m2 = 0.0
            for j in range(cols):
                xh = (x[i, j] - mu) * r
                dxh = dy[i, j] * g[j]
                m1 += dxh
                m2 += dxh * xh
                dg[j] += dy[i, j] * xh
                db[j] += dy[i, j]
            m1 /= cols
            m2 /= cols
            for j in range(cols):
                xh = (x[i, j] - mu) * r
                dx[i, j] = r * (dy[i, j] * g[j] - m1 - xh * m2)
        return dx, dg, db

    @njit(cache=True)
    def gelu_nb(x):
        out = np.empty_like(x)
        rows, cols = x.shape
        for i in range(rows):
            for j in range(cols):
                xi = x[i, j]
                u = _GELU_C * (xi + _GELU_A * xi * xi * xi)
                out[i, j] = 0.5 * xi * (1.0 + np.tanh(u))
        return out

    @njit(cache=True)
    def gelu_backward_nb(x, dy):
        out = np.empty_like(x)
        rows, cols = x.shape
        for i in range(rows):
            for j in range(cols):
                xi = x[i, j]
                u = _GELU_C * (xi + _GELU_A * xi * xi * xi)
                t = np.tanh(u)
                du = _GELU_C * (1.0 + 3.0 * _GELU_A * xi * xi)
                out[i, j] = dy[i, j] * (0.5 * (1.0 + t) + 0.5 * xi * (1.0 - t * t) * du)
        return out

    @njit(cache=True)
    def weighted_ce_rows_nb(logits, targets, weight_table):
        rows, cols = logits.shape
        losses = np.empty(rows, dtype=logits.dtype)
        dlogits = np.empty_like(logits)
        for i in range(rows):
            t = targets[i]
            m = logits[i, 0]
            for j in range(1, cols):
                if logits[i, j] > m:
                    m = logits[i, j]
            z = 0.0
            for j in range(cols):
                e = np.exp(logits[i, j] - m)
                dlogits[i, j] = e
                z += e
            lse = m + np.log(z)
            w = weight_table[t]
            losses[i] = w * (lse - logits[i, t])
            scale = w / z
            for j in range(cols):
                dlogits[i, j] *= scale
            dlogits[i, t] -= w
        return losses, dlogits

    @njit(cache=True)
    def adam_step_nb(p, g, m, v, lr, beta1, beta2, eps, wd, c1, c2):
        for i in range(p.size):
            gi = g[i]
            mi = beta1 * m[i] + (1.0 - beta1) * gi
            vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
            m[i] = mi
            v[i] = vi
            upd = (mi * c1) / (np.sqrt(vi * c2) + eps)
            p[i] -= lr * (upd + wd * p[i])

    @njit(cache=True)
    def scatter_add_rows_nb(out, idx, src):
        rows, cols = src.shape
        for i in range(rows):
            r = idx[i]
            for j in range(cols):
                out[r, j] += src[i, j]

else:  # pragma: no cover - exercised only on numba-free installs
    softmax_causal_nb = None
    softmax_causal_backward_nb = None
    softmax_rows_nb = None
    softmax_backward_rows_nb = None
    layernorm_rows_nb = None
    layernorm_backward_rows_nb = None
    gelu_nb = None
    gelu_backward_nb = None
    weighted_ce_rows_nb = None
    adam_step_nb = None
    scatter_add_rows_nb = None


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def variants() -> dict[str, tuple]:
    """(numpy, numba) implementation pairs, for tests and benchmarks."""
    return {
        "softmax_causal": (softmax_causal_np, softmax_causal_nb),
        "softmax_causal_backward": (
            softmax_causal_backward_np,
            softmax_causal_backward_nb,
        ),
        "softmax_rows": (softmax_rows_np, softmax_rows_nb),
        "softmax_backward_rows": (softmax_backward_rows_np, softmax_backward_rows_nb),
        "layernorm_rows": (layernorm_rows_np, layernorm_rows_nb),
        "layernorm_backward_rows": (
            layernorm_backward_rows_np,
            layernorm_backward_rows_nb,
        ),
        "gelu": (gelu_np, gelu_nb),
        "gelu_backward": (gelu_backward_np, gelu_backward_nb),
        "weighted_ce_rows": (weighted_ce_rows_np, weighted_ce_rows_nb),
        "adam_step": (adam_step_np, adam_step_nb),
        "scatter_add_rows": (scatter_add_rows_np, scatter_add_rows_nb),
    }


def _select(name: str, np_fn, nb_fn):
    if _MODE == "numba":
        return nb_fn
    if _MODE == "numpy" or nb_fn is None:
        return np_fn
    return np_fn if name in _NUMPY_PREFERRED else nb_fn


_ACTIVE = {name: _select(name, *pair) for name, pair in variants().items()}

softmax_causal = _ACTIVE["softmax_causal"]
softmax_causal_backward = _ACTIVE["softmax_causal_backward"]
softmax_rows = _ACTIVE["softmax_rows"]
softmax_backward_rows = _ACTIVE["softmax_backward_rows"]
layernorm_rows = _ACTIVE["layernorm_rows"]
layernorm_backward_rows = _ACTIVE["layernorm_backward_rows"]
gelu = _ACTIVE["gelu"]
gelu_backward = _ACTIVE["gelu_backward"]
weighted_ce_rows = _ACTIVE["weighted_ce_rows"]
adam_step = _ACTIVE["adam_step"]
scatter_add_rows = _ACTIVE["scatter_add_rows"]
