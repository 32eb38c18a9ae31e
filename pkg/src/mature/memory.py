"""Memory-augmented recurrent cell: an LSTM with an external K x S memory.

Per step t, in order:

    alpha_t = softmax_K(cosine(M_{t-1,k}, k_{t-1}))      content addressing
    r_t     = sum_k alpha_{t,k} * M_{t-1,k}              read
    gates, c_t from the LSTM equations
    h_t     = o * tanh(c_t + sigmoid(W_r r + W_c c) * (W_h r))   deep fusion
    M_t     = M_{t-1} * (1 - alpha e^T) + alpha a^T      erase/add write
    k_t     = tanh(W_k h_t + b_k)                        key for step t+1

with e = sigmoid(W_e h_t + b_e) and a = tanh(W_a h_t + b_a).  The memory
starts at zero, as does the first key; the cosine guard then makes the
first addressing uniform.  Batched shapes ([B, K, S] memories against
[B, S] keys) are supported throughout.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    add,
    cosine_similarity,
    expand_dims,
    mul,
    one_minus,
    outer,
    sigmoid,
    softmax,
    tanh,
    tsum,
)
from .init import uniform_param, zeros_param
from .recurrent import LstmParams, LstmState, init_lstm_params, linear, lstm_gates


@dataclass
class MarnParams:
    lstm: LstmParams
    W_k: Tensor
    b_k: Tensor
    W_e: Tensor
    b_e: Tensor
    W_a: Tensor
    b_a: Tensor
    W_r: Tensor
    W_c: Tensor
    W_h: Tensor

    @property
    def n_hidden(self) -> int:
        return self.lstm.n_hidden

    @property
    def segment_size(self) -> int:
        return self.W_k.shape[0]

    def parameters(self) -> list:
        return self.lstm.parameters() + [
            self.W_k, self.b_k, self.W_e, self.b_e, self.W_a, self.b_a,
            self.W_r, self.W_c, self.W_h,
        ]


@dataclass
class MarnState:
    lstm: LstmState
    M: Tensor
    k: Tensor

    @property
    def h(self) -> Tensor:
        return self.lstm.h


def init_marn_params(prefix: str, n_in: int, n_hidden: int, segment_size: int, seed: int) -> MarnParams:
    lstm = init_lstm_params(f"{prefix}.lstm", n_in, n_hidden, seed)
    bh = 1.0 / np.sqrt(n_hidden)
    bs = 1.0 / np.sqrt(segment_size)
    return MarnParams(
        lstm=lstm,
        W_k=uniform_param(seed, f"{prefix}.W_k", (segment_size, n_hidden), bh),
        b_k=zeros_param(f"{prefix}.b_k", (segment_size,)),
        W_e=uniform_param(seed, f"{prefix}.W_e", (segment_size, n_hidden), bh),
        b_e=zeros_param(f"{prefix}.b_e", (segment_size,)),
        W_a=uniform_param(seed, f"{prefix}.W_a", (segment_size, n_hidden), bh),
        b_a=zeros_param(f"{prefix}.b_a", (segment_size,)),
        W_r=uniform_param(seed, f"{prefix}.W_r", (n_hidden, segment_size), bs),
        W_c=uniform_param(seed, f"{prefix}.W_c", (n_hidden, n_hidden), bh),
        W_h=uniform_param(seed, f"{prefix}.W_h", (n_hidden, segment_size), bs),
    )


def marn_init(n_segments: int, segment_size: int, n_hidden: int, batch: int | None = None) -> MarnState:
    lead = () if batch is None else (batch,)
    return MarnState(
        lstm=LstmState(
            h=Tensor(np.zeros(lead + (n_hidden,))),
            c=Tensor(np.zeros(lead + (n_hidden,))),
        ),
        M=Tensor(np.zeros(lead + (n_segments, segment_size))),
        k=Tensor(np.zeros(lead + (segment_size,))),
    )


def emit_key(params: MarnParams, h: Tensor) -> Tensor:
    return tanh(add(linear(params.W_k, h), params.b_k))


def address(M_prev: Tensor, k_prev: Tensor) -> Tensor:
    """Softmax over per-segment cosine scores against the previous key."""
    scores = cosine_similarity(M_prev, expand_dims(k_prev, -2))
    return softmax(scores, axis=-1)


def read(M_prev: Tensor, alpha: Tensor) -> Tensor:
    """r = sum_k alpha_k * M_k, a convex combination of segment rows."""
    return tsum(mul(M_prev, expand_dims(alpha, -1)), axis=-2)


def write(M_prev: Tensor, alpha: Tensor, h: Tensor, params: MarnParams) -> Tensor:
    e = sigmoid(add(linear(params.W_e, h), params.b_e))
    a = tanh(add(linear(params.W_a, h), params.b_a))
    return add(mul(M_prev, one_minus(outer(alpha, e))), outer(alpha, a))


def fuse_hidden(o: Tensor, c: Tensor, r: Tensor, params: MarnParams) -> Tensor:
    """h = o * tanh(c + sigmoid(W_r r + W_c c) * (W_h r)); no bias terms."""
    gate = sigmoid(add(linear(params.W_r, r), linear(params.W_c, c)))
    return mul(o, tanh(add(c, mul(gate, linear(params.W_h, r)))))


def marn_step(params: MarnParams, state: MarnState, x: Tensor) -> MarnState:
    alpha = address(state.M, state.k)
    r = read(state.M, alpha)
    _, _, o, _, c = lstm_gates(params.lstm, state.lstm, x)
    h = fuse_hidden(o, c, r, params)
    M = write(state.M, alpha, h, params)
    k = emit_key(params, h)
    return MarnState(lstm=LstmState(h=h, c=c), M=M, k=k)


def marn_unroll(params: MarnParams, state: MarnState, xs) -> list[MarnState]:
    states = []
    for x in xs:
        state = marn_step(params, state, x)
        states.append(state)
    return states
