"""Micro-transformer encoder and task heads with hand-composed reverse mode.

The encoder is a fixed feed-forward pipeline: scaled token embeddings plus
sinusoidal positions, a stack of post-norm self-attention blocks with key-side
padding masks, then a tanh pooler over the position-0 hidden state. Forward
passes cache the per-op DualResults; encode's backward walks them in reverse
and accumulates named parameter gradients.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .numerics import Array, DualResult, gelu, layer_norm, matmul, softmax_rows

PARAMS_MAGIC = b"MIXF0001"
MASKED_SCORE = -1e9  # added to attention logits of padded keys; underflows to weight 0


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 64
    max_len: int = 128
    head: str = "classification"  # or "regression"
    n_classes: int = 2
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_heads", "n_layers", "d_ff", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.head not in ("classification", "regression"):
            raise ValueError(f"head must be 'classification' or 'regression', got {self.head!r}")
        if self.head == "classification" and self.n_classes < 2:
            raise ValueError(f"classification head needs n_classes >= 2, got {self.n_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def out_dim(self) -> int:
        return self.n_classes if self.head == "classification" else 1


@dataclass
class EncodedBatch:
    """Padded token ids, key mask, and label rows for one batch.

    labels: one-hot/soft rows [b, n_classes] for classification, [b, 1] scalars
    for regression. Position 0 of every row is the CLS token; mask 0 marks PAD.
    """

    token_ids: Array
    attention_mask: Array
    labels: Array


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical name -> shape map; order is the save-file and grad-check order."""
    d, ff = config.d_model, config.d_ff
    shapes: dict[str, tuple[int, ...]] = {"embed.tok": (config.vocab_size, d)}
    for i in range(config.n_layers):
        p = f"layer{i}."
        for proj in ("q", "k", "v", "o"):
            shapes[p + f"attn.w{proj}"] = (d, d)
            shapes[p + f"attn.b{proj}"] = (d,)
        shapes[p + "attn.ln.gain"] = (d,)
        shapes[p + "attn.ln.bias"] = (d,)
        shapes[p + "ffn.w1"] = (d, ff)
        shapes[p + "ffn.b1"] = (ff,)
        shapes[p + "ffn.w2"] = (ff, d)
        shapes[p + "ffn.b2"] = (d,)
        shapes[p + "ffn.ln.gain"] = (d,)
        shapes[p + "ffn.ln.bias"] = (d,)
    shapes["pooler.w"] = (d, d)
    shapes["pooler.b"] = (d,)
    shapes["head.w"] = (d, config.out_dim)
    shapes["head.b"] = (config.out_dim,)
    return shapes


class Parameters:
    """Named trainable tensors plus same-shaped gradient and Adam-moment slots."""

    def __init__(self, config: ModelConfig, values: dict[str, Array]):
        self.config = config
        self.values = values
        self.grads = {k: np.zeros_like(v) for k, v in values.items()}
        self.m = {k: np.zeros_like(v) for k, v in values.items()}
        self.v = {k: np.zeros_like(v) for k, v in values.items()}

    def names(self) -> list[str]:
        return list(self.values)


def init_params(config: ModelConfig) -> Parameters:
    """Seeded Xavier-uniform weights; zero biases; unit layer-norm gains.

    Tensors are drawn in canonical name order, so equal seeds give
    bit-identical parameters.
    """
    rng = np.random.Generator(np.random.PCG64(config.seed))
    values: dict[str, Array] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith("ln.gain"):
            values[name] = np.ones(shape)
        elif len(shape) == 1:
            values[name] = np.zeros(shape)
        else:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            values[name] = rng.uniform(-bound, bound, size=shape)
    return Parameters(config, values)


def sinusoidal_positions(length: int, d_model: int) -> Array:
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, idx / d_model)
    enc = np.zeros((length, d_model))
    enc[:, 0::2] = np.sin(angles)
    enc[:, 1::2] = np.cos(angles)[:, : d_model // 2]
    return enc


def _linear(x2d: Array, w: Array, b: Array) -> DualResult:
    mm = matmul(x2d, w)
    out = mm.output + b

    def backward(g):
        dx, dw = mm.backward(g)
        return dx, dw, g.sum(axis=0)

    return DualResult(out, backward)


def _split_heads(x2d: Array, b: int, L: int, H: int, dh: int) -> Array:
    return x2d.reshape(b, L, H, dh).transpose(0, 2, 1, 3)


def _merge_heads(x4d: Array, b: int, L: int, H: int, dh: int) -> Array:
    return x4d.transpose(0, 2, 1, 3).reshape(b * L, H * dh)


@dataclass
class _LayerCache:
    q_lin: DualResult
    k_lin: DualResult
    v_lin: DualResult
    o_lin: DualResult
    ln1: DualResult
    f1: DualResult
    act: DualResult
    f2: DualResult
    ln2: DualResult
    Q: Array
    K: Array
    V: Array
    attn_used: Array
    attn_keep: Array | None
    ffn_keep: Array | None
    sm: DualResult


def encode(
    params: Parameters,
    batch: EncodedBatch,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    trace: dict | None = None,
) -> DualResult:
    """Run the encoder; output is the pooled [b, d_model] representation.

    The returned backward maps an upstream [b, d_model] gradient to a dict of
    per-parameter gradients (all encoder parameters; head excluded). Dropout
    masks are drawn from `rng` only in train mode and are reused exactly in
    backward. Pass a dict as `trace` to capture per-layer attention weights
    (pre-dropout) and the final hidden states.
    """
    cfg = params.config
    W = params.values
    ids = np.asarray(batch.token_ids, dtype=np.int64)
    mask = np.asarray(batch.attention_mask, dtype=np.int64)
    if ids.ndim != 2 or mask.shape != ids.shape:
        raise ValueError(f"batch shapes disagree: ids {ids.shape}, mask {mask.shape}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError(
            f"token id out of range [0, {cfg.vocab_size}): found {int(ids.min())}..{int(ids.max())}"
        )
    b, L = ids.shape
    if L > cfg.max_len:
        raise ValueError(f"sequence length {L} exceeds max_len {cfg.max_len}")
    d, H = cfg.d_model, cfg.n_heads
    dh = d // H
    p_drop = cfg.dropout_rate if train_mode else 0.0
    if p_drop > 0.0 and rng is None:
        raise ValueError("train-mode dropout requires an rng")

    emb_scale = math.sqrt(d)
    x = W["embed.tok"][ids] * emb_scale + sinusoidal_positions(L, d)
    key_bias = (1.0 - mask.astype(np.float64))[:, None, None, :] * MASKED_SCORE
    inv_scale = 1.0 / math.sqrt(dh)

    caches: list[_LayerCache] = []
    for i in range(cfg.n_layers):
        p = f"layer{i}."
        xf = x.reshape(b * L, d)
        q_lin = _linear(xf, W[p + "attn.wq"], W[p + "attn.bq"])
        k_lin = _linear(xf, W[p + "attn.wk"], W[p + "attn.bk"])
        v_lin = _linear(xf, W[p + "attn.wv"], W[p + "attn.bv"])
        Q = _split_heads(q_lin.output, b, L, H, dh)
        K = _split_heads(k_lin.output, b, L, H, dh)
        V = _split_heads(v_lin.output, b, L, H, dh)
        scores = np.einsum("bhid,bhjd->bhij", Q, K) * inv_scale + key_bias
        sm = softmax_rows(scores.reshape(b * H * L, L))
        attn = sm.output.reshape(b, H, L, L)
        if trace is not None:
            trace[f"attn.{i}"] = attn
        if p_drop > 0.0:
            attn_keep = (rng.random(attn.shape) >= p_drop) / (1.0 - p_drop)
            attn_used = attn * attn_keep
        else:
            attn_keep, attn_used = None, attn
        ctx = np.einsum("bhij,bhjd->bhid", attn_used, V)
        o_lin = _linear(_merge_heads(ctx, b, L, H, dh), W[p + "attn.wo"], W[p + "attn.bo"])
        ln1 = layer_norm(xf + o_lin.output, W[p + "attn.ln.gain"], W[p + "attn.ln.bias"])
        x1f = ln1.output
        f1 = _linear(x1f, W[p + "ffn.w1"], W[p + "ffn.b1"])
        act = gelu(f1.output)
        f2 = _linear(act.output, W[p + "ffn.w2"], W[p + "ffn.b2"])
        if p_drop > 0.0:
            ffn_keep = (rng.random(f2.output.shape) >= p_drop) / (1.0 - p_drop)
            ffn_out = f2.output * ffn_keep
        else:
            ffn_keep, ffn_out = None, f2.output
        ln2 = layer_norm(x1f + ffn_out, W[p + "ffn.ln.gain"], W[p + "ffn.ln.bias"])
        x = ln2.output.reshape(b, L, d)
        caches.append(
            _LayerCache(q_lin, k_lin, v_lin, o_lin, ln1, f1, act, f2, ln2,
                        Q, K, V, attn_used, attn_keep, ffn_keep, sm)
        )

    if trace is not None:
        trace["hidden"] = x
    pool_lin = _linear(x[:, 0, :], W["pooler.w"], W["pooler.b"])
    pooled = np.tanh(pool_lin.output)

    def backward(g):
        g = np.asarray(g, dtype=np.float64)
        grads = {
            name: np.zeros_like(val)
            for name, val in W.items()
            if not name.startswith("head.")
        }
        dh0, dwp, dbp = pool_lin.backward(g * (1.0 - pooled * pooled))
        grads["pooler.w"] += dwp
        grads["pooler.b"] += dbp
        dx = np.zeros((b, L, d))
        dx[:, 0, :] = dh0
        for i in reversed(range(cfg.n_layers)):
            dx = _layer_backward(caches[i], dx, grads, f"layer{i}.", b, L, H, dh, inv_scale)
        np.add.at(grads["embed.tok"], ids.reshape(-1), dx.reshape(-1, d) * emb_scale)
        return grads

    return DualResult(pooled, backward)


def _layer_backward(c: _LayerCache, dx, grads, p, b, L, H, dh, inv_scale):
    dx2f = dx.reshape(b * L, H * dh)
    dres2, dg2, db2 = c.ln2.backward(dx2f)
    grads[p + "ffn.ln.gain"] += dg2
    grads[p + "ffn.ln.bias"] += db2
    dx1f = dres2.copy()
    dffn = dres2 * c.ffn_keep if c.ffn_keep is not None else dres2
    dact_out, dw2, db2f = c.f2.backward(dffn)
    grads[p + "ffn.w2"] += dw2
    grads[p + "ffn.b2"] += db2f
    (df1,) = c.act.backward(dact_out)
    dx1f_ffn, dw1, db1f = c.f1.backward(df1)
    grads[p + "ffn.w1"] += dw1
    grads[p + "ffn.b1"] += db1f
    dx1f += dx1f_ffn
    dres1, dg1, db1 = c.ln1.backward(dx1f)
    grads[p + "attn.ln.gain"] += dg1
    grads[p + "attn.ln.bias"] += db1
    dxf = dres1.copy()
    dctxf, dwo, dbo = c.o_lin.backward(dres1)
    grads[p + "attn.wo"] += dwo
    grads[p + "attn.bo"] += dbo
    dctx = _split_heads(dctxf, b, L, H, dh)
    dattn = np.einsum("bhid,bhjd->bhij", dctx, c.V)
    dV = np.einsum("bhij,bhid->bhjd", c.attn_used, dctx)
    if c.attn_keep is not None:
        dattn = dattn * c.attn_keep
    (dscores_flat,) = c.sm.backward(dattn.reshape(b * H * L, L))
    dscores = dscores_flat.reshape(b, H, L, L) * inv_scale
    dQ = np.einsum("bhij,bhjd->bhid", dscores, c.K)
    dK = np.einsum("bhij,bhid->bhjd", dscores, c.Q)
    for lin, grad4, wname, bname in (
        (c.q_lin, dQ, "attn.wq", "attn.bq"),
        (c.k_lin, dK, "attn.wk", "attn.bk"),
        (c.v_lin, dV, "attn.wv", "attn.bv"),
    ):
        dxp, dw, db = lin.backward(_merge_heads(grad4, b, L, H, dh))
        grads[p + wname] += dw
        grads[p + bname] += db
        dxf += dxp
    return dxf.reshape(b, L, H * dh)


def pool_hidden(params: Parameters, hidden: Array) -> Array:
    """Pooler only: position-0 hidden state through linear + tanh."""
    h0 = hidden[:, 0, :]
    return np.tanh(h0 @ params.values["pooler.w"] + params.values["pooler.b"])


def head_forward(params: Parameters, pooled) -> DualResult:
    """Affine task head over pooled vectors; backward yields (dPooled, grads dict)."""
    pooled = np.asarray(pooled, dtype=np.float64)
    if pooled.ndim != 2 or pooled.shape[1] != params.config.d_model:
        raise ValueError(
            f"pooled width {pooled.shape} does not match d_model {params.config.d_model}"
        )
    lin = _linear(pooled, params.values["head.w"], params.values["head.b"])

    def backward(g):
        dp, dw, db = lin.backward(np.asarray(g, dtype=np.float64))
        return dp, {"head.w": dw, "head.b": db}

    return DualResult(lin.output, backward)


def save_params(params: Parameters, path) -> None:
    """Write magic, length-prefixed JSON {name: shape}, then raw LE float64 data."""
    header = json.dumps({k: list(v.shape) for k, v in params.values.items()}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for arr in params.values.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path, config: ModelConfig) -> Parameters:
    """Read a parameter file and validate it against the config's shape map."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(PARAMS_MAGIC)] != PARAMS_MAGIC:
        raise InputError(f"{path}: bad magic, not a parameter file")
    off = len(PARAMS_MAGIC)
    if len(blob) < off + 8:
        raise InputError(f"{path}: truncated before header length")
    (hlen,) = struct.unpack_from("<Q", blob, off)
    off += 8
    if len(blob) < off + hlen:
        raise InputError(f"{path}: truncated inside header")
    try:
        header = json.loads(blob[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise InputError(f"{path}: corrupt header: {e}") from None
    off += hlen

    expected = param_shapes(config)
    if list(header) != list(expected):
        missing = [k for k in expected if k not in header]
        extra = [k for k in header if k not in expected]
        raise InputError(
            f"{path}: parameter names do not match config (missing {missing}, unexpected {extra})"
        )
    values: dict[str, Array] = {}
    for name, shape in header.items():
        shape = tuple(int(s) for s in shape)
        if shape != expected[name]:
            raise InputError(
                f"{path}: tensor {name!r} has shape {list(shape)}, expected {list(expected[name])}"
            )
        nbytes = 8 * int(np.prod(shape)) if shape else 8
        if len(blob) < off + nbytes:
            raise InputError(
                f"{path}: truncated in tensor {name!r}: need {nbytes} bytes, have {len(blob) - off}"
            )
        values[name] = np.frombuffer(blob, dtype="<f8", count=nbytes // 8, offset=off).reshape(shape).copy()
        off += nbytes
    if off != len(blob):
        raise InputError(f"{path}: {len(blob) - off} trailing bytes after last tensor")
    return Parameters(config, values)
