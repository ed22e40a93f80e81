"""RNN, LSTM and GRU cells plus the output head, built on numcore tensors.

States are column vectors (n x 1); a batch of B states is an n x B matrix,
so each step handles a whole mini-batch at once. Every gate reads the
concatenation of the current input and the previous hidden state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numcore as nc
from ..errors import ContractError, ShapeError
from ..numcore import Tensor

GATES = {
    "rnn": ("xs",),
    "lstm": ("f", "i", "C", "O"),
    "gru": ("r", "z", "S"),
}
BIAS_NAMES = {"xs": "s"}


def uniform_init(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(cols)
    return rng.uniform(-bound, bound, size=(rows, cols))


@dataclass
class RecurrentCellParams:
    kind: str
    input_size: int
    hidden_size: int
    weights: dict[str, Tensor]
    biases: dict[str, Tensor]

    @classmethod
    def initialize(cls, kind: str, input_size: int, hidden_size: int,
                   rng: np.random.Generator) -> "RecurrentCellParams":
        if kind not in GATES:
            raise ContractError(f"unknown recurrent cell {kind!r}")
        if input_size < 1 or hidden_size < 1:
            raise ContractError("input and hidden sizes must be positive")
        weights, biases = {}, {}
        for gate in GATES[kind]:
            weights[gate] = nc.parameter(uniform_init(rng, hidden_size, input_size + hidden_size),
                                         name=f"W_{gate}")
            bname = BIAS_NAMES.get(gate, gate)
            biases[gate] = nc.parameter(np.zeros((hidden_size, 1)), name=f"b_{bname}")
        return cls(kind, input_size, hidden_size, weights, biases)

    def named_tensors(self) -> dict[str, Tensor]:
        out = {}
        for gate in GATES[self.kind]:
            out[f"W_{gate}"] = self.weights[gate]
            out[f"b_{BIAS_NAMES.get(gate, gate)}"] = self.biases[gate]
        return out

    def _affine(self, gate: str, joined: Tensor) -> Tensor:
        return self.weights[gate] @ joined + self.biases[gate]

    def _check(self, x: Tensor, *states: Tensor) -> None:
        if x.shape[0] != self.input_size:
            raise ShapeError(f"input has {x.shape[0]} rows, cell expects {self.input_size}")
        for s in states:
            if s.shape != (self.hidden_size, x.shape[1]):
                raise ShapeError(f"state shape {s.shape} does not match "
                                 f"({self.hidden_size}, {x.shape[1]})")


@dataclass
class OutputHead:
    weight: Tensor
    bias: Tensor
    activation: str = "sigmoid"

    @classmethod
    def initialize(cls, hidden_size: int, rng: np.random.Generator,
                   activation: str = "sigmoid") -> "OutputHead":
        if activation not in ("sigmoid", "linear"):
            raise ContractError(f"unknown head activation {activation!r}")
        return cls(nc.parameter(uniform_init(rng, 1, hidden_size), name="W_y"),
                   nc.parameter(np.zeros((1, 1)), name="b_y"), activation)

    def __call__(self, state: Tensor) -> Tensor:
        if state.shape[0] != self.weight.shape[1]:
            raise ShapeError(f"head expects {self.weight.shape[1]} hidden units, got {state.shape[0]}")
        z = self.weight @ state + self.bias
        return nc.sigmoid(z) if self.activation == "sigmoid" else z


def _as_column(v) -> Tensor:
    return v if isinstance(v, Tensor) else nc.constant(v)


def rnn_step(params: RecurrentCellParams, x_t, s_prev) -> Tensor:
    x_t, s_prev = _as_column(x_t), _as_column(s_prev)
    params._check(x_t, s_prev)
    return nc.tanh(params._affine("xs", nc.concat_rows(x_t, s_prev)))


def lstm_step(params: RecurrentCellParams, x_t, s_prev, c_prev) -> tuple[Tensor, Tensor]:
    x_t, s_prev, c_prev = _as_column(x_t), _as_column(s_prev), _as_column(c_prev)
    params._check(x_t, s_prev, c_prev)
    joined = nc.concat_rows(x_t, s_prev)
    f = nc.sigmoid(params._affine("f", joined))
    i = nc.sigmoid(params._affine("i", joined))
    c_tilde = nc.tanh(params._affine("C", joined))
    o = nc.sigmoid(params._affine("O", joined))
    c_t = f * c_prev + i * c_tilde
    s_t = nc.tanh(c_t) * o
    return s_t, c_t


def gru_step(params: RecurrentCellParams, x_t, s_prev) -> Tensor:
    x_t, s_prev = _as_column(x_t), _as_column(s_prev)
    params._check(x_t, s_prev)
    joined = nc.concat_rows(x_t, s_prev)
    r = nc.sigmoid(params._affine("r", joined))
    z = nc.sigmoid(params._affine("z", joined))
    # the reset gate scales the previous state before it is concatenated
    s_tilde = nc.tanh(params._affine("S", nc.concat_rows(x_t, s_prev * r)))
    return (1.0 - z) * s_prev + z * s_tilde


def unroll(cell: RecurrentCellParams, windows: np.ndarray) -> Tensor:
    """Run the cell over a batch of windows (B x w x m) from zero state; return
    the final hidden state (n x B)."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim == 2:
        windows = windows[None]
    b, w, m = windows.shape
    if m != cell.input_size:
        raise ShapeError(f"window has {m} features, cell expects {cell.input_size}")
    if w < 1:
        raise ShapeError("window must have at least one row")
    s = nc.constant(np.zeros((cell.hidden_size, b)))
    c = nc.constant(np.zeros((cell.hidden_size, b)))
    for t in range(w):
        x = nc.constant(windows[:, t, :].T)
        if cell.kind == "rnn":
            s = rnn_step(cell, x, s)
        elif cell.kind == "lstm":
            s, c = lstm_step(cell, x, s, c)
        else:
            s = gru_step(cell, x, s)
    return s


def run_recurrent(cell: RecurrentCellParams, head: OutputHead, window) -> float:
    """Predict the (scaled) horizon target for one w x m window."""
    with nc.no_grad():
        return head(unroll(cell, window)).item()


def recurrent_forward(cell: RecurrentCellParams, head: OutputHead, windows) -> Tensor:
    """Batched, differentiable version of :func:`run_recurrent` (returns 1 x B)."""
    return head(unroll(cell, windows))
