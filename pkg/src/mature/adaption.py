"""Cross-source knowledge adaption between two external memories.

A donor memory M_R (station-intensive source) is aligned row-by-row with
the recipient memory M_S (station-sparse source):

    g_k    = v^T tanh(W_g [M_R_k ; M_S_k])       align score per segment
    beta   = softmax_K(g)                        transfer weights
    b_t    = tanh(W_b b_{t-1} + b_b)             boost vector
    l_t    = sigmoid(W_l l_{t-1} + b_l)          eliminate vector
    M_new  = M_R * (1 - beta l^T) + beta b^T     gated donor content
    M_S_t  = gamma * M_S + (1 - gamma) * M_new   blend

beta is computed from the memories entering the step (pre-write), while
the blend consumes the post-write memories of the same step, so gamma=1
leaves the recipient's trajectory exactly as if adaption never existed.
The boost/eliminate recurrences take no data input; they evolve on their
own from b_0 = 0 and l_0 = 0.5.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, concat, matmul, mul, one_minus, outer, sigmoid, softmax, tanh
from .errors import ContractError
from .init import uniform_param, zeros_param
from .recurrent import linear


@dataclass
class AdaptionParams:
    W_g: Tensor
    v: Tensor
    W_b: Tensor
    b_b: Tensor
    W_l: Tensor
    b_l: Tensor
    gamma: float

    @property
    def segment_size(self) -> int:
        return self.W_b.shape[0]

    def parameters(self) -> list:
        return [self.W_g, self.v, self.W_b, self.b_b, self.W_l, self.b_l]


@dataclass
class AdaptionState:
    b: Tensor
    l: Tensor


def init_adaption_params(prefix: str, segment_size: int, align_dim: int, gamma: float, seed: int) -> AdaptionParams:
    if not 0.0 <= gamma <= 1.0:
        raise ContractError(f"adaption: gamma must be in [0, 1], got {gamma}")
    s = segment_size
    return AdaptionParams(
        W_g=uniform_param(seed, f"{prefix}.W_g", (align_dim, 2 * s), 1.0 / np.sqrt(2 * s)),
        v=uniform_param(seed, f"{prefix}.v", (align_dim,), 1.0 / np.sqrt(align_dim)),
        W_b=uniform_param(seed, f"{prefix}.W_b", (s, s), 1.0 / np.sqrt(s)),
        b_b=zeros_param(f"{prefix}.b_b", (s,)),
        W_l=uniform_param(seed, f"{prefix}.W_l", (s, s), 1.0 / np.sqrt(s)),
        b_l=zeros_param(f"{prefix}.b_l", (s,)),
        gamma=float(gamma),
    )


def adaption_init(segment_size: int) -> AdaptionState:
    """Parameter-free fixed points: b = 0 = tanh(0), l = 0.5 = sigmoid(0)."""
    return AdaptionState(
        b=Tensor(np.zeros(segment_size)),
        l=Tensor(np.full(segment_size, 0.5)),
    )


def align_score(row_R: Tensor, row_S: Tensor, params: AdaptionParams) -> Tensor:
    """v^T tanh(W_g [row_R ; row_S]) -> scalar score."""
    cat = concat([row_R, row_S], axis=-1)
    return matmul(tanh(linear(params.W_g, cat)), params.v)


def adaption_weights(M_R_prev: Tensor, M_S_prev: Tensor, params: AdaptionParams) -> Tensor:
    """Softmax over the K per-segment align scores."""
    cat = concat([M_R_prev, M_S_prev], axis=-1)
    scores = matmul(tanh(linear(params.W_g, cat)), params.v)
    return softmax(scores, axis=-1)


def update_gates(state: AdaptionState, params: AdaptionParams) -> AdaptionState:
    """Advance the autonomous boost/eliminate recurrences by one step."""
    b = tanh(add(linear(params.W_b, state.b), params.b_b))
    l = sigmoid(add(linear(params.W_l, state.l), params.b_l))
    return AdaptionState(b=b, l=l)


def adapt_memory(M_R_post: Tensor, M_S_post: Tensor, state: AdaptionState, beta: Tensor, params: AdaptionParams) -> Tensor:
    """gamma * M_S + (1 - gamma) * (M_R * (1 - beta l^T) + beta b^T)."""
    m_new = add(
        mul(M_R_post, one_minus(outer(beta, state.l))),
        outer(beta, state.b),
    )
    g = params.gamma
    return add(mul(M_S_post, g), mul(m_new, 1.0 - g))
