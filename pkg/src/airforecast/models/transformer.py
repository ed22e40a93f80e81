"""Encoder-decoder transformer for scalar forecasting.

Token sequences are stored column-wise: a batch of B sequences of length L
is a d_model x (B*L) matrix with sample-major columns (column b*L + t is
token t of sample b). Attention never mixes samples: scores are computed on
groups of samples at a time with a block-diagonal mask, which keeps the
Python-level op count low without materialising a (B*L)^2 score matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .. import numcore as nc
from ..errors import ContractError, ShapeError
from ..numcore import Tensor
from .recurrent import uniform_init

LAYER_NORM_EPS = 1e-5
# Upper bound on entries per attention score block; sets how many samples share one block.
MAX_SCORE_ENTRIES = 1 << 14


@dataclass
class TransformerParams:
    d_model: int
    num_heads: int
    num_encoder_layers: int
    num_decoder_layers: int
    feedforward_size: int
    dropout_rate: float
    input_size: int
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ContractError(f"d_model={self.d_model} not divisible by num_heads={self.num_heads}")
        if self.d_model % 2:
            raise ContractError("d_model must be even for sinusoidal positional encoding")

    @classmethod
    def initialize(cls, input_size: int, rng: np.random.Generator, d_model: int = 64,
                   num_heads: int = 4, num_encoder_layers: int = 2, num_decoder_layers: int = 2,
                   feedforward_size: int = 128, dropout_rate: float = 0.1) -> "TransformerParams":
        p = cls(d_model, num_heads, num_encoder_layers, num_decoder_layers, feedforward_size,
                dropout_rate, input_size)
        d, f = d_model, feedforward_size
        t = p.tensors

        def weight(name, rows, cols):
            t[name] = nc.parameter(uniform_init(rng, rows, cols), name=name)

        def zeros(name, rows):
            t[name] = nc.parameter(np.zeros((rows, 1)), name=name)

        def norm(prefix):
            t[prefix + ".gain"] = nc.parameter(np.ones((d, 1)), name=prefix + ".gain")
            zeros(prefix + ".bias", d)

        def attention(prefix):
            for proj in ("q", "k", "v", "o"):
                weight(f"{prefix}.W{proj}", d, d)
                zeros(f"{prefix}.b{proj}", d)

        def feedforward(prefix):
            weight(prefix + ".W1", f, d)
            zeros(prefix + ".b1", f)
            weight(prefix + ".W2", d, f)
            zeros(prefix + ".b2", d)

        weight("input.W", d, input_size)
        zeros("input.b", d)
        weight("target.W", d, 1)
        zeros("target.b", d)
        for i in range(num_encoder_layers):
            norm(f"enc{i}.norm1")
            attention(f"enc{i}.self")
            norm(f"enc{i}.norm2")
            feedforward(f"enc{i}.ff")
        norm("enc.norm")
        for i in range(num_decoder_layers):
            norm(f"dec{i}.norm1")
            attention(f"dec{i}.self")
            norm(f"dec{i}.norm2")
            attention(f"dec{i}.cross")
            norm(f"dec{i}.norm3")
            feedforward(f"dec{i}.ff")
        norm("dec.norm")
        weight("output.W", 1, d)
        t["output.b"] = nc.parameter(np.zeros((1, 1)), name="output.b")
        return p

    def named_tensors(self) -> dict[str, Tensor]:
        return self.tensors


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: PE[p, 2i] = sin(p / 10000^(2i/d)), PE[p, 2i+1] = cos(...)."""
    if d_model % 2:
        raise ContractError(f"d_model must be even, got {d_model}")
    if length < 0:
        raise ContractError("length must be non-negative")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    pe = np.empty((length, d_model))
    pe[:, 0::2] = np.sin(pos / freq)
    pe[:, 1::2] = np.cos(pos / freq)
    return pe


@lru_cache(maxsize=256)
def _block_mask(groups: int, q_len: int, kv_len: int, causal: bool) -> np.ndarray:
    """True where attention is blocked: across samples, and (if causal) future keys."""
    q_sample = np.repeat(np.arange(groups), q_len)
    k_sample = np.repeat(np.arange(groups), kv_len)
    blocked = q_sample[:, None] != k_sample[None, :]
    if causal:
        q_pos = np.tile(np.arange(q_len), groups)
        k_pos = np.tile(np.arange(kv_len), groups)
        blocked |= k_pos[None, :] > q_pos[:, None]
    blocked.setflags(write=False)
    return blocked


def _broadcast_row(v: Tensor, ncols: int) -> Tensor:
    """Repeat a column vector across ``ncols`` columns (as a matmul with ones)."""
    return v @ nc.constant(np.ones((1, ncols)))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalise every column (token) over its d_model features."""
    d, ncols = x.shape
    ones_row = nc.constant(np.full((1, d), 1.0 / d))
    ones_col = nc.constant(np.ones((d, 1)))
    centred = x - ones_col @ (ones_row @ x)
    var = ones_row @ (centred * centred)
    inv_std = nc.power(nc.add_scalar(var, LAYER_NORM_EPS), -0.5)
    normed = centred * (ones_col @ inv_std)
    return normed * _broadcast_row(gain, ncols) + bias


def multi_head_attention(query: Tensor, key: Tensor, value: Tensor, params: dict[str, Tensor],
                         num_heads: int, prefix: str = "", causal: bool = False,
                         q_len: int | None = None, kv_len: int | None = None) -> Tensor:
    """Scaled dot-product attention with ``num_heads`` heads.

    ``query`` is d x (B*q_len) and ``key``/``value`` are d x (B*kv_len);
    omitting the lengths means a single sequence (B = 1). With ``causal`` a
    query at position i sees keys at positions <= i only.
    """
    d = query.shape[0]
    if d % num_heads:
        raise ContractError(f"d_model={d} not divisible by num_heads={num_heads}")
    if key.shape != value.shape or key.shape[0] != d:
        raise ShapeError(f"attention shapes q={query.shape} k={key.shape} v={value.shape}")
    q_len = query.shape[1] if q_len is None else q_len
    kv_len = key.shape[1] if kv_len is None else kv_len
    if query.shape[1] % q_len or key.shape[1] % kv_len:
        raise ShapeError("sequence lengths do not divide the token counts")
    batch = query.shape[1] // q_len
    if key.shape[1] // kv_len != batch:
        raise ShapeError("query and key batches differ")
    if causal and q_len != kv_len:
        raise ContractError("causal attention needs equal query and key lengths")

    def p(name):
        return params[prefix + name]

    q = p("Wq") @ query + p("bq")
    k = p("Wk") @ key + p("bk")
    v = p("Wv") @ value + p("bv")
    d_head = d // num_heads
    inv_sqrt = 1.0 / np.sqrt(d_head)
    group = max(1, int(np.sqrt(MAX_SCORE_ENTRIES / (q_len * kv_len))))
    heads = []
    for h in range(num_heads):
        rows = (h * d_head, (h + 1) * d_head)
        qt = nc.transpose(nc.slice_rows(q, *rows)) if num_heads > 1 else nc.transpose(q)
        kh = nc.slice_rows(k, *rows) if num_heads > 1 else k
        vh = nc.slice_rows(v, *rows) if num_heads > 1 else v
        chunks = []
        for start in range(0, batch, group):
            g = min(group, batch - start)
            if g == batch:
                qg, kg, vg = qt, kh, vh
            else:
                qg = nc.slice_rows(qt, start * q_len, (start + g) * q_len)
                kg = nc.slice_cols(kh, start * kv_len, (start + g) * kv_len)
                vg = nc.slice_cols(vh, start * kv_len, (start + g) * kv_len)
            scores = nc.scale(qg @ kg, inv_sqrt)
            mask = _block_mask(g, q_len, kv_len, causal)
            weights = nc.softmax_rows(scores, mask if mask.any() else None)
            chunks.append(vg @ nc.transpose(weights))
        heads.append(chunks[0] if len(chunks) == 1 else nc.concat_cols(*chunks))
    joined = heads[0] if num_heads == 1 else nc.concat_rows(*heads)
    return p("Wo") @ joined + p("bo")


class _Dropout:
    def __init__(self, rate: float, rng: np.random.Generator | None):
        self.rate = rate
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        if self.rng is None or self.rate <= 0.0:
            return x
        keep = self.rng.random(x.shape) >= self.rate
        return x * nc.constant(keep / (1.0 - self.rate))


def _feedforward(x: Tensor, t: dict[str, Tensor], prefix: str) -> Tensor:
    hidden = nc.relu(t[prefix + ".W1"] @ x + t[prefix + ".b1"])
    return t[prefix + ".W2"] @ hidden + t[prefix + ".b2"]


def _positions(length: int, batch: int, d_model: int) -> Tensor:
    return nc.constant(np.tile(positional_encoding(length, d_model).T, (1, batch)))


def encode(params: TransformerParams, windows: np.ndarray, dropout: _Dropout) -> Tensor:
    t = params.tensors
    b, w, m = windows.shape
    if m != params.input_size:
        raise ShapeError(f"window has {m} features, model expects {params.input_size}")
    x = nc.constant(windows.reshape(b * w, m).T)
    h = t["input.W"] @ x + t["input.b"]
    h = dropout(h + _positions(w, b, params.d_model))
    for i in range(params.num_encoder_layers):
        pre = f"enc{i}"
        n1 = layer_norm(h, t[pre + ".norm1.gain"], t[pre + ".norm1.bias"])
        h = h + dropout(multi_head_attention(n1, n1, n1, t, params.num_heads, pre + ".self.",
                                             q_len=w, kv_len=w))
        n2 = layer_norm(h, t[pre + ".norm2.gain"], t[pre + ".norm2.bias"])
        h = h + dropout(_feedforward(n2, t, pre + ".ff"))
    return layer_norm(h, t["enc.norm.gain"], t["enc.norm.bias"])


def decode(params: TransformerParams, tokens: Tensor, length: int, memory: Tensor,
           memory_len: int, dropout: _Dropout) -> Tensor:
    """Run the decoder over scalar tokens (1 x B*length); returns 1 x B*length outputs."""
    t = params.tensors
    batch = tokens.shape[1] // length
    h = t["target.W"] @ tokens + t["target.b"]
    h = dropout(h + _positions(length, batch, params.d_model))
    for i in range(params.num_decoder_layers):
        pre = f"dec{i}"
        n1 = layer_norm(h, t[pre + ".norm1.gain"], t[pre + ".norm1.bias"])
        h = h + dropout(multi_head_attention(n1, n1, n1, t, params.num_heads, pre + ".self.",
                                             causal=True, q_len=length, kv_len=length))
        n2 = layer_norm(h, t[pre + ".norm2.gain"], t[pre + ".norm2.bias"])
        h = h + dropout(multi_head_attention(n2, memory, memory, t, params.num_heads,
                                             pre + ".cross.", q_len=length, kv_len=memory_len))
        n3 = layer_norm(h, t[pre + ".norm3.gain"], t[pre + ".norm3.bias"])
        h = h + dropout(_feedforward(n3, t, pre + ".ff"))
    h = layer_norm(h, t["dec.norm.gain"], t["dec.norm.bias"])
    return t["output.W"] @ h + t["output.b"]


def _sample_major(step_major: Tensor, batch: int, length: int) -> Tensor:
    # column t*B + b  ->  column b*L + t
    order = (np.arange(length)[None, :] * batch + np.arange(batch)[:, None]).reshape(-1)
    return nc.take_cols(step_major, order)


def last_position(outputs: Tensor, batch: int, length: int) -> Tensor:
    return nc.take_cols(outputs, np.arange(batch) * length + (length - 1))


def transformer_forward(params: TransformerParams, windows, target_history, k: int,
                        mode: str = "autoregressive", labels=None,
                        rng: np.random.Generator | None = None) -> Tensor:
    """Forecast k steps after each window.

    Returns a 1 x (B*k) tensor in sample-major order: entry b*k + j is the
    prediction for step j+1 of sample b. The decoder's first token is the last
    observed target of the window. ``teacher_forced`` feeds the true path
    (``labels``, B x k or B x (k-1)) in one masked pass; ``autoregressive``
    runs k passes feeding back each prediction. Dropout is active only when
    an ``rng`` is supplied.
    """
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim == 2:
        windows = windows[None]
    history = np.asarray(target_history, dtype=np.float64).reshape(windows.shape[0], -1)
    b, w, _ = windows.shape
    if w < 1 or history.shape[1] != w:
        raise ShapeError(f"target history of shape {history.shape} does not match window {w}")
    if k < 1:
        raise ContractError("horizon must be >= 1")
    dropout = _Dropout(params.dropout_rate, rng)
    memory = encode(params, windows, dropout)
    start = history[:, -1:]
    if mode == "teacher_forced":
        if labels is None:
            raise ContractError("teacher_forced mode needs the future labels")
        labels = np.asarray(labels, dtype=np.float64).reshape(b, -1)
        if labels.shape[1] < k - 1:
            raise ContractError(f"need {k - 1} future labels per sample, got {labels.shape[1]}")
        tokens = np.hstack([start, labels[:, :k - 1]]).reshape(1, -1)
        return decode(params, nc.constant(tokens), k, memory, w, dropout)
    if mode != "autoregressive":
        raise ContractError(f"unknown decoding mode {mode!r}")
    fed = [nc.constant(start.T)]
    outputs = []
    for step in range(1, k + 1):
        seq = fed[0] if step == 1 else _sample_major(nc.concat_cols(*fed), b, step)
        out = last_position(decode(params, seq, step, memory, w, dropout), b, step)
        outputs.append(out)
        fed.append(out)
    if k == 1:
        return outputs[0]
    return _sample_major(nc.concat_cols(*outputs), b, k)
