"""LSTM cell: input/forget/output gates and a tanh candidate.

One step computes

    i = sigmoid(W_i x + U_i h + b_i)        f = sigmoid(W_f x + U_f h + b_f)
    o = sigmoid(W_o x + U_o h + b_o)        g = tanh(W_g x + U_g h + b_g)
    c_t = f * c_{t-1} + i * g               h_t = o * tanh(c_t)

All functions accept a leading batch axis on x/h/c (shapes [B, n] and
[B, h]) as well as plain vectors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, matmul, mul, sigmoid, tanh, transpose
from .errors import ContractError, DimensionError
from .init import uniform_param, zeros_param


def linear(W: Tensor, x: Tensor) -> Tensor:
    """W[m, n] applied to x[..., n] -> [..., m]."""
    if x.ndim == 1:
        return matmul(W, x)
    return matmul(x, transpose(W))


@dataclass
class LstmParams:
    """W_* act on the input, U_* on the previous hidden state."""

    W_i: Tensor
    U_i: Tensor
    b_i: Tensor
    W_f: Tensor
    U_f: Tensor
    b_f: Tensor
    W_o: Tensor
    U_o: Tensor
    b_o: Tensor
    W_g: Tensor
    U_g: Tensor
    b_g: Tensor

    @property
    def n_in(self) -> int:
        return self.W_i.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.W_i.shape[0]

    def parameters(self) -> list:
        return [
            self.W_i, self.U_i, self.b_i,
            self.W_f, self.U_f, self.b_f,
            self.W_o, self.U_o, self.b_o,
            self.W_g, self.U_g, self.b_g,
        ]


@dataclass
class LstmState:
    h: Tensor
    c: Tensor


def init_lstm_params(prefix: str, n_in: int, n_hidden: int, seed: int) -> LstmParams:
    """All eight matrices uniform(-1/sqrt(h), 1/sqrt(h)), biases zero."""
    bound = 1.0 / np.sqrt(n_hidden)
    fields = {}
    for gate in ("i", "f", "o", "g"):
        fields[f"W_{gate}"] = uniform_param(seed, f"{prefix}.W_{gate}", (n_hidden, n_in), bound)
        fields[f"U_{gate}"] = uniform_param(seed, f"{prefix}.U_{gate}", (n_hidden, n_hidden), bound)
        fields[f"b_{gate}"] = zeros_param(f"{prefix}.b_{gate}", (n_hidden,))
    return LstmParams(**fields)


def lstm_init(n_hidden: int, batch: int | None = None) -> LstmState:
    shape = (n_hidden,) if batch is None else (batch, n_hidden)
    return LstmState(h=Tensor(np.zeros(shape)), c=Tensor(np.zeros(shape)))


def _affine(W: Tensor, x: Tensor, U: Tensor, h: Tensor, b: Tensor) -> Tensor:
    return add(add(linear(W, x), linear(U, h)), b)


def lstm_gates(params: LstmParams, state: LstmState, x: Tensor):
    """Returns (i, f, o, g, c_new); shared by the plain cell and the
    memory-augmented cell, which replaces only the output equation."""
    if x.shape[-1] != params.n_in:
        raise DimensionError(
            f"lstm: input shape {x.shape} does not match W_i shape {params.W_i.shape}"
        )
    if state.h.shape[-1] != params.n_hidden:
        raise DimensionError(
            f"lstm: state shape {state.h.shape} does not match hidden size {params.n_hidden}"
        )
    i = sigmoid(_affine(params.W_i, x, params.U_i, state.h, params.b_i))
    f = sigmoid(_affine(params.W_f, x, params.U_f, state.h, params.b_f))
    o = sigmoid(_affine(params.W_o, x, params.U_o, state.h, params.b_o))
    g = tanh(_affine(params.W_g, x, params.U_g, state.h, params.b_g))
    c_new = add(mul(f, state.c), mul(i, g))
    return i, f, o, g, c_new


def lstm_step(params: LstmParams, state: LstmState, x: Tensor) -> LstmState:
    _, _, o, _, c = lstm_gates(params, state, x)
    return LstmState(h=mul(o, tanh(c)), c=c)


def lstm_unroll(params: LstmParams, state: LstmState, xs) -> list[LstmState]:
    """Fold lstm_step over a sequence; returns every intermediate state."""
    xs = list(xs)
    if not xs:
        raise ContractError("lstm_unroll: empty input sequence")
    states = []
    for x in xs:
        state = lstm_step(params, state, x)
        states.append(state)
    return states
