"""Decoder-only character language model with hand-written gradients.

A GPT-style stack in plain numpy: learned token + position embeddings,
pre-layernorm blocks (causal multi-head self-attention, GELU feed-forward),
final layernorm, linear head. The backward pass is derived by hand so the
whole package stays dependency-light and finite-difference checkable.

Loss is the per-token cross-entropy, optionally scaled by a per-token-type
weight table that stresses the form-bearing tokens (line and stanza
separators, end marker).
"""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import kernels
from .corpus import EOS_ID, LINE_SEP_ID, PAD_ID, STANZA_SEP_ID

LN_EPS = 1e-5


class ModelError(ValueError):
    """Invalid configuration, input, or checkpoint."""


@dataclass
class ModelConfig:
    vocab_size: int
    layers: int = 8
    heads: int = 8
    embed_dim: int = 512
    ff_dim: int = 1024
    max_seq_len: int = 256
    dropout_rate: float = 0.1
    tie_embeddings: bool = False

    def __post_init__(self) -> None:
        for name in ("vocab_size", "layers", "heads", "embed_dim", "ff_dim", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be >= 1")
        if self.embed_dim % self.heads != 0:
            raise ModelError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ModelError("dropout_rate must be in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


@dataclass
class TokenWeights:
    """Per-token-type loss weights, indexed by token id."""

    table: np.ndarray

    def __post_init__(self) -> None:
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.ndim != 1 or np.any(self.table < 0) or not np.all(
            np.isfinite(self.table)
        ):
            raise ModelError("token weights must be a 1-D array of non-negative reals")

    @classmethod
    def basic(cls, vocab_size: int) -> "TokenWeights":
        return cls(np.ones(vocab_size))

    @classmethod
    def enhanced(cls, vocab_size: int) -> "TokenWeights":
        """Form-stressed weights: 2 for line/stanza separators, 3 for EOS."""
        if vocab_size <= max(LINE_SEP_ID, STANZA_SEP_ID, EOS_ID):
            raise ModelError("vocab too small to hold the special tokens")
        table = np.ones(vocab_size)
        table[LINE_SEP_ID] = 2.0
        table[STANZA_SEP_ID] = 2.0
        table[EOS_ID] = 3.0
        return cls(table)

    def weight(self, token_id: int) -> float:
        return float(self.table[token_id])


Parameters = dict


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f, v = config.embed_dim, config.ff_dim, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (v, d),
        "pos_emb": (config.max_seq_len, d),
    }
    for i in range(config.layers):
        p = f"layer{i}"
        shapes[f"{p}.ln1.gain"] = (d,)
        shapes[f"{p}.ln1.bias"] = (d,)
        shapes[f"{p}.attn.w_qkv"] = (d, 3 * d)
        shapes[f"{p}.attn.b_qkv"] = (3 * d,)
        shapes[f"{p}.attn.w_out"] = (d, d)
        shapes[f"{p}.attn.b_out"] = (d,)
        shapes[f"{p}.ln2.gain"] = (d,)
        shapes[f"{p}.ln2.bias"] = (d,)
        shapes[f"{p}.ff.w1"] = (d, f)
        shapes[f"{p}.ff.b1"] = (f,)
        shapes[f"{p}.ff.w2"] = (f, d)
        shapes[f"{p}.ff.b2"] = (d,)
    shapes["ln_f.gain"] = (d,)
    shapes["ln_f.bias"] = (d,)
    if not config.tie_embeddings:
        shapes["head.w"] = (d, v)
    return shapes


def init_parameters(
    config: ModelConfig, seed: int = 0, dtype=np.float32
) -> Parameters:
    """Fresh parameters: normal(0, 0.02) weights, zero biases, unit gains."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params: Parameters = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gain"):
            params[name] = np.ones(shape, dtype=dtype)
        elif name.endswith((".bias", ".b_qkv", ".b_out", ".b1", ".b2")):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = rng.normal(0.0, 0.02, size=shape).astype(dtype)
    return params


def _validate_ids(ids: np.ndarray, config: ModelConfig) -> None:
    if ids.shape[-1] > config.max_seq_len:
        raise ModelError(
            f"sequence length {ids.shape[-1]} exceeds max_seq_len {config.max_seq_len}"
        )
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise ModelError("token id out of vocabulary range")


def _dropout_mask(rng, shape, rate: float, dtype) -> np.ndarray:
    keep = (rng.random(shape) >= rate).astype(dtype)
    keep *= dtype.type(1.0 / (1.0 - rate))
    return keep


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, t, d = x.shape
    return np.ascontiguousarray(
        x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3)
    )


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, dh = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(b, t, h * dh)


def _head_weight(params: Parameters, config: ModelConfig) -> np.ndarray:
    if config.tie_embeddings:
        return params["tok_emb"].T
    return params["head.w"]


def _forward_tape(
    params: Parameters,
    ids: np.ndarray,
    config: ModelConfig,
    train: bool,
    rng,
) -> tuple[np.ndarray, dict]:
    """Batched forward pass; the tape holds everything backward needs."""
    b, t = ids.shape
    d, h = config.embed_dim, config.heads
    dtype = params["tok_emb"].dtype
    scale = dtype.type(1.0 / math.sqrt(config.head_dim))
    rate = config.dropout_rate if train else 0.0
    if rate > 0.0 and rng is None:
        raise ModelError("training-mode forward with dropout needs an rng")

    ids_flat = ids.reshape(-1)
    x = params["tok_emb"][ids_flat].reshape(b, t, d) + params["pos_emb"][:t]
    tape: dict = {"ids": ids, "layers": [], "dropout_rate": rate, "scale": scale}
    if rate > 0.0:
        emb_mask = _dropout_mask(rng, x.shape, rate, dtype)
        x = x * emb_mask
        tape["emb_mask"] = emb_mask

    for i in range(config.layers):
        p = f"layer{i}"
        saved: dict = {}
        saved["x_attn_in"] = x
        a, mean1, rstd1 = kernels.layernorm_rows(
            x.reshape(-1, d), params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"], LN_EPS
        )
        saved["ln1"] = (mean1, rstd1)
        saved["a"] = a
        qkv = a @ params[f"{p}.attn.w_qkv"] + params[f"{p}.attn.b_qkv"]
        qkv = qkv.reshape(b, t, 3, d)
        q = _split_heads(np.ascontiguousarray(qkv[:, :, 0]), h)
        k = _split_heads(np.ascontiguousarray(qkv[:, :, 1]), h)
        v = _split_heads(np.ascontiguousarray(qkv[:, :, 2]), h)
        saved["qkv_heads"] = (q, k, v)
        scores = q @ k.swapaxes(-1, -2)
        kernels.softmax_causal(scores.reshape(-1, t, t), float(scale))
        probs = scores
        saved["probs"] = probs
        if rate > 0.0:
            attn_mask = _dropout_mask(rng, probs.shape, rate, dtype)
            probs_used = probs * attn_mask
            saved["attn_mask"] = attn_mask
        else:
            probs_used = probs
        saved["probs_used"] = probs_used
        u = _merge_heads(probs_used @ v)
        saved["u"] = u
        o = u.reshape(-1, d) @ params[f"{p}.attn.w_out"] + params[f"{p}.attn.b_out"]
        o = o.reshape(b, t, d)
        if rate > 0.0:
            out_mask = _dropout_mask(rng, o.shape, rate, dtype)
            o = o * out_mask
            saved["out_mask"] = out_mask
        x = x + o

        saved["x_ff_in"] = x
        c, mean2, rstd2 = kernels.layernorm_rows(
            x.reshape(-1, d), params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"], LN_EPS
        )
        saved["ln2"] = (mean2, rstd2)
        saved["c"] = c
        h1 = c @ params[f"{p}.ff.w1"] + params[f"{p}.ff.b1"]
        saved["h1"] = h1
        h2 = kernels.gelu(h1)
        saved["h2"] = h2
        ff = h2 @ params[f"{p}.ff.w2"] + params[f"{p}.ff.b2"]
        ff = ff.reshape(b, t, d)
        if rate > 0.0:
            ff_mask = _dropout_mask(rng, ff.shape, rate, dtype)
            ff = ff * ff_mask
            saved["ff_mask"] = ff_mask
        x = x + ff
        tape["layers"].append(saved)

    tape["x_final_in"] = x
    xf, mean_f, rstd_f = kernels.layernorm_rows(
        x.reshape(-1, d), params["ln_f.gain"], params["ln_f.bias"], LN_EPS
    )
    tape["ln_f"] = (mean_f, rstd_f)
    tape["xf"] = xf
    logits = (xf @ _head_weight(params, config)).reshape(b, t, config.vocab_size)
    return logits, tape


def forward(
    params: Parameters,
    ids,
    config: ModelConfig,
    train: bool = False,
    rng=None,
) -> np.ndarray:
    """Logits for every position. Accepts one sequence (T,) or a batch (B, T)."""
    arr = np.asarray(ids, dtype=np.int64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise ModelError("ids must be a non-empty sequence or batch of sequences")
    _validate_ids(arr, config)
    logits, _ = _forward_tape(params, arr, config, train, rng)
    if not np.all(np.isfinite(logits)):
        raise ModelError("forward pass produced non-finite logits")
    return logits[0] if single else logits


def _backward_tape(
    params: Parameters,
    config: ModelConfig,
    tape: dict,
    dlogits: np.ndarray,
) -> Parameters:
    b, t = tape["ids"].shape
    d, h = config.embed_dim, config.heads
    scale = tape["scale"]
    rate = tape["dropout_rate"]
    grads: Parameters = {}

    dl2 = dlogits.reshape(-1, config.vocab_size)
    if config.tie_embeddings:
        grads["tok_emb"] = dl2.T @ tape["xf"]
    else:
        grads["head.w"] = tape["xf"].T @ dl2
    dxf = dl2 @ _head_weight(params, config).T

    mean_f, rstd_f = tape["ln_f"]
    dx2, dg, db = kernels.layernorm_backward_rows(
        np.ascontiguousarray(dxf),
        tape["x_final_in"].reshape(-1, d),
        params["ln_f.gain"],
        mean_f,
        rstd_f,
    )
    grads["ln_f.gain"] = dg
    grads["ln_f.bias"] = db
    dx = dx2.reshape(b, t, d)

    for i in reversed(range(config.layers)):
        p = f"layer{i}"
        saved = tape["layers"][i]

        dff = dx
        if rate > 0.0:
            dff = dff * saved["ff_mask"]
        dff2 = dff.reshape(-1, d)
        grads[f"{p}.ff.w2"] = saved["h2"].T @ dff2
        grads[f"{p}.ff.b2"] = dff2.sum(axis=0)
        dh2 = dff2 @ params[f"{p}.ff.w2"].T
        dh1 = kernels.gelu_backward(saved["h1"], np.ascontiguousarray(dh2))
        grads[f"{p}.ff.w1"] = saved["c"].T @ dh1
        grads[f"{p}.ff.b1"] = dh1.sum(axis=0)
        dc = dh1 @ params[f"{p}.ff.w1"].T
        mean2, rstd2 = saved["ln2"]
        dx_ln2, dg2, db2 = kernels.layernorm_backward_rows(
            np.ascontiguousarray(dc),
            saved["x_ff_in"].reshape(-1, d),
            params[f"{p}.ln2.gain"],
            mean2,
            rstd2,
        )
        grads[f"{p}.ln2.gain"] = dg2
        grads[f"{p}.ln2.bias"] = db2
        dx = dx + dx_ln2.reshape(b, t, d)

        do = dx
        if rate > 0.0:
            do = do * saved["out_mask"]
        do2 = do.reshape(-1, d)
        grads[f"{p}.attn.w_out"] = saved["u"].reshape(-1, d).T @ do2
        grads[f"{p}.attn.b_out"] = do2.sum(axis=0)
        du = (do2 @ params[f"{p}.attn.w_out"].T).reshape(b, t, d)
        du = du.reshape(b, t, h, d // h).transpose(0, 2, 1, 3)

        q, k, v = saved["qkv_heads"]
        probs = saved["probs"]
        dprobs_used = du @ v.swapaxes(-1, -2)
        dv = saved["probs_used"].swapaxes(-1, -2) @ du
        if rate > 0.0:
            dprobs = dprobs_used * saved["attn_mask"]
        else:
            dprobs = dprobs_used
        kernels.softmax_causal_backward(
            dprobs.reshape(-1, t, t), probs.reshape(-1, t, t), float(scale)
        )
        dscores = dprobs
        dq = dscores @ k
        dk = dscores.swapaxes(-1, -2) @ q

        dqkv = np.empty((b, t, 3, d), dtype=dq.dtype)
        dqkv[:, :, 0] = _merge_heads(dq)
        dqkv[:, :, 1] = _merge_heads(dk)
        dqkv[:, :, 2] = _merge_heads(dv)
        dqkv2 = dqkv.reshape(-1, 3 * d)
        grads[f"{p}.attn.w_qkv"] = saved["a"].T @ dqkv2
        grads[f"{p}.attn.b_qkv"] = dqkv2.sum(axis=0)
        da = dqkv2 @ params[f"{p}.attn.w_qkv"].T
        mean1, rstd1 = saved["ln1"]
        dx_ln1, dg1, db1 = kernels.layernorm_backward_rows(
            np.ascontiguousarray(da),
            saved["x_attn_in"].reshape(-1, d),
            params[f"{p}.ln1.gain"],
            mean1,
            rstd1,
        )
        grads[f"{p}.ln1.gain"] = dg1
        grads[f"{p}.ln1.bias"] = db1
        dx = dx + dx_ln1.reshape(b, t, d)

    if rate > 0.0:
        dx = dx * tape["emb_mask"]
    grads["pos_emb"] = np.zeros_like(params["pos_emb"])
    grads["pos_emb"][:t] = dx.sum(axis=0)
    dtok = grads.get("tok_emb")
    if dtok is None:
        dtok = np.zeros_like(params["tok_emb"])
        grads["tok_emb"] = dtok
    kernels.scatter_add_rows(
        dtok, tape["ids"].reshape(-1).astype(np.int64), dx.reshape(-1, d)
    )
    return grads


def ce_loss(x, target: int) -> float:
    """Cross-entropy of one logit vector against a target id.

    Computed as -x[target] + logsumexp(x), with max-subtraction for
    stability.
    """
    vec = np.asarray(x, dtype=np.float64)
    if vec.ndim != 1:
        raise ModelError("ce_loss expects a single logit vector")
    if not np.all(np.isfinite(vec)):
        raise ModelError("non-finite logits")
    if not 0 <= target < vec.shape[0]:
        raise ModelError(f"target {target} out of range for {vec.shape[0]} logits")
    m = vec.max()
    return float(-vec[target] + m + np.log(np.sum(np.exp(vec - m))))


def weighted_loss(x, target: int, weights: TokenWeights) -> float:
    """Form-stressed loss: weight of the target token times its ce_loss."""
    return weights.weight(target) * ce_loss(x, target)


def _masked_targets(batch: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    inputs = batch[:, :-1]
    targets = batch[:, 1:]
    mask = targets != PAD_ID
    if not mask.any():
        raise ModelError("batch contains no non-PAD target positions")
    return inputs, targets, mask


def batch_loss(
    params: Parameters,
    batch,
    weights: TokenWeights,
    config: ModelConfig,
    train: bool = False,
    rng=None,
) -> float:
    """Mean weighted next-token loss over all non-PAD targets."""
    loss, _ = _batch_loss_impl(params, batch, weights, config, train, rng, want_grads=False)
    return loss


def loss_and_gradients(
    params: Parameters,
    batch,
    weights: TokenWeights,
    config: ModelConfig,
    train: bool = False,
    rng=None,
) -> tuple[float, Parameters]:
    loss, grads = _batch_loss_impl(params, batch, weights, config, train, rng, want_grads=True)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ModelError(f"non-finite gradient for parameter {name!r}")
    return loss, grads


def gradients(
    params: Parameters,
    batch,
    weights: TokenWeights,
    config: ModelConfig,
    train: bool = False,
    rng=None,
) -> Parameters:
    return loss_and_gradients(params, batch, weights, config, train, rng)[1]


def _batch_loss_impl(
    params: Parameters,
    batch,
    weights: TokenWeights,
    config: ModelConfig,
    train: bool,
    rng,
    want_grads: bool,
) -> tuple[float, Parameters]:
    arr = np.asarray(batch, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[1] < 2:
        raise ModelError("batch rows need at least two tokens for a shifted target")
    _validate_ids(arr, config)
    if weights.table.shape[0] != config.vocab_size:
        raise ModelError("token weight table does not match vocab_size")

    inputs, targets, mask = _masked_targets(arr)
    logits, tape = _forward_tape(params, inputs, config, train, rng)
    dtype = logits.dtype
    v = config.vocab_size

    flat_logits = np.ascontiguousarray(logits.reshape(-1, v))
    flat_targets = targets.reshape(-1)
    rows = np.flatnonzero(mask.reshape(-1))
    sel_logits = np.ascontiguousarray(flat_logits[rows])
    sel_targets = flat_targets[rows].astype(np.int64)
    table = np.ascontiguousarray(weights.table.astype(dtype))
    losses, dsel = kernels.weighted_ce_rows(sel_logits, sel_targets, table)
    if not np.all(np.isfinite(losses)):
        raise ModelError("non-finite loss")
    n = rows.shape[0]
    loss = float(np.sum(losses, dtype=np.float64) / n)
    if not want_grads:
        return loss, {}

    dlogits = np.zeros_like(flat_logits)
    dlogits[rows] = dsel / dtype.type(n)
    grads = _backward_tape(params, config, tape, dlogits.reshape(logits.shape))
    return loss, grads


# ---------------------------------------------------------------------------
# incremental decoding
# ---------------------------------------------------------------------------

@dataclass
class DecodeCache:
    """Per-layer key/value buffers for autoregressive decoding."""

    keys: list
    values: list
    length: int = 0


def init_decode_cache(
    config: ModelConfig, batch_size: int, dtype=np.float32
) -> DecodeCache:
    shape = (batch_size, config.heads, config.max_seq_len, config.head_dim)
    return DecodeCache(
        keys=[np.zeros(shape, dtype=dtype) for _ in range(config.layers)],
        values=[np.zeros(shape, dtype=dtype) for _ in range(config.layers)],
    )


def prefill(
    params: Parameters, ids: np.ndarray, config: ModelConfig, cache: DecodeCache
) -> np.ndarray:
    """Run the prompt through the model, fill the cache, return last logits."""
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim != 2:
        raise ModelError("prefill expects a (batch, length) id array")
    _validate_ids(arr, config)
    logits, tape = _forward_tape(params, arr, config, train=False, rng=None)
    t = arr.shape[1]
    for i, saved in enumerate(tape["layers"]):
        _, k, v = saved["qkv_heads"]
        cache.keys[i][:, :, :t] = k
        cache.values[i][:, :, :t] = v
    cache.length = t
    return logits[:, -1, :]


def decode_step(
    params: Parameters, last_ids: np.ndarray, config: ModelConfig, cache: DecodeCache
) -> np.ndarray:
    """Advance one position; returns logits (batch, vocab) for the new token."""
    pos = cache.length
    if pos >= config.max_seq_len:
        raise ModelError("decode cache is full (max_seq_len reached)")
    ids = np.asarray(last_ids, dtype=np.int64).reshape(-1)
    b = ids.shape[0]
    d, h, dh = config.embed_dim, config.heads, config.head_dim
    dtype = params["tok_emb"].dtype
    scale = dtype.type(1.0 / math.sqrt(dh))

    x = params["tok_emb"][ids] + params["pos_emb"][pos]
    for i in range(config.layers):
        p = f"layer{i}"
        a, _, _ = kernels.layernorm_rows(
            x, params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"], LN_EPS
        )
        qkv = a @ params[f"{p}.attn.w_qkv"] + params[f"{p}.attn.b_qkv"]
        q = qkv[:, :d].reshape(b, h, 1, dh)
        cache.keys[i][:, :, pos] = qkv[:, d : 2 * d].reshape(b, h, dh)
        cache.values[i][:, :, pos] = qkv[:, 2 * d :].reshape(b, h, dh)
        k = cache.keys[i][:, :, : pos + 1]
        v = cache.values[i][:, :, : pos + 1]
        scores = (q * scale) @ k.swapaxes(-1, -2)
        probs = kernels.softmax_rows(
            np.ascontiguousarray(scores.reshape(-1, pos + 1))
        ).reshape(b, h, 1, pos + 1)
        u = (probs @ v).reshape(b, h * dh)
        x = x + u @ params[f"{p}.attn.w_out"] + params[f"{p}.attn.b_out"]
        c, _, _ = kernels.layernorm_rows(
            x, params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"], LN_EPS
        )
        h2 = kernels.gelu(c @ params[f"{p}.ff.w1"] + params[f"{p}.ff.b1"])
        x = x + h2 @ params[f"{p}.ff.w2"] + params[f"{p}.ff.b2"]
    xf, _, _ = kernels.layernorm_rows(x, params["ln_f.gain"], params["ln_f.bias"], LN_EPS)
    cache.length = pos + 1
    return xf @ _head_weight(params, config)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_PMC_MAGIC = b"PMC1"


@dataclass
class Checkpoint:
    params: Parameters
    config: ModelConfig
    vocab_hash: str
    step: int
    opt_state: Parameters = field(default_factory=dict)


def save_checkpoint(
    path: str | Path,
    params: Parameters,
    config: ModelConfig,
    vocab_hash: str,
    step: int,
    opt_state: Parameters | None = None,
) -> None:
    """Atomic binary checkpoint: header JSON + float32 little-endian arrays."""
    opt_state = opt_state or {}
    header = {
        "config": config.to_dict(),
        "vocab_hash": vocab_hash,
        "step": int(step),
        "params": [[name, list(params[name].shape)] for name in sorted(params)],
        "opt_state": [[name, list(opt_state[name].shape)] for name in sorted(opt_state)],
    }
    blob = json.dumps(header).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as handle:
        handle.write(_PMC_MAGIC)
        handle.write(struct.pack("<I", len(blob)))
        handle.write(blob)
        for name, _ in header["params"]:
            handle.write(np.ascontiguousarray(params[name], dtype="<f4").tobytes())
        for name, _ in header["opt_state"]:
            handle.write(np.ascontiguousarray(opt_state[name], dtype="<f4").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with Path(path).open("rb") as handle:
        magic = handle.read(4)
        if magic != _PMC_MAGIC:
            raise ModelError(f"not a checkpoint file (bad magic {magic!r})")
        (header_len,) = struct.unpack("<I", handle.read(4))
        header = json.loads(handle.read(header_len).decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])

        def read_arrays(entries) -> Parameters:
            out: Parameters = {}
            for name, shape in entries:
                count = int(np.prod(shape)) if shape else 1
                raw = handle.read(4 * count)
                if len(raw) != 4 * count:
                    raise ModelError("checkpoint file truncated")
                out[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
            return out

        params = read_arrays(header["params"])
        opt_state = read_arrays(header["opt_state"])

    expected = parameter_shapes(config)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ModelError(
            f"checkpoint parameters do not match config (missing {missing}, extra {extra})"
        )
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ModelError(
                f"checkpoint parameter {name!r} has shape {params[name].shape}, "
                f"config demands {shape}"
            )
    return Checkpoint(params, config, header["vocab_hash"], header["step"], opt_state)
