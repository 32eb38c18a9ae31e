"""Complete forecasting networks behind one build/forward interface.

Trainable kinds and their composition:

    LSTM     one recurrent cell over one mode, head on the final hidden state
    MLP      flattened window through fully connected tanh layers
    MARN     one memory-augmented cell over one mode, head on final h
    C-LSTM   both modes concatenated station-wise into one LSTM
    MT-LSTM  one LSTM per mode, hidden states concatenated into the heads
    MARN-S   one memory cell per mode, hidden states concatenated
    MARN-C   MARN-S plus a fused memory: each step the two external
             memories are concatenated row-wise and passed through a
             fully connected layer whose output replaces the sparse
             mode's memory
    MATURE   MARN-S plus cross-source knowledge adaption: transfer
             weights are computed from the memories entering the step,
             and the blended memory replaces the sparse mode's memory
             after both writes

Multi-task kinds (C-LSTM, MT-LSTM, MARN-S, MARN-C, MATURE) require a
station-intensive and a station-sparse mode; single-task kinds (LSTM,
MLP, MARN) accept exactly one mode. Parameters are initialized from
per-name seed streams, so any parameter shared between two kinds (same
name, same shape) receives bitwise-identical values for the same seed.
That makes the reductions exact: MATURE with gamma = 1 is MARN-S, and a
MARN whose memory-path weights are zeroed is an LSTM.

Parameter counts per kind (n = input width, h = hidden, K segments of
size S, d = align dim, m = head mid-width, N = output stations):

    lstm(n, h)        4 (h n + h^2 + h)
    marn(n, h, S)     lstm(n, h) + 3 (S h + S) + 2 h S + h^2
    adaption(S, d)    2 S d + d + 2 (S^2 + S)
    head(i, m, N)     m i + m + N m + N
    memfuse(S)        2 S^2 + S
    mlp(sizes)        sum over consecutive layer pairs (a, b) of a b + b
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adaption import (
    AdaptionParams,
    adapt_memory,
    adaption_init,
    adaption_weights,
    init_adaption_params,
    update_gates,
)
from .autodiff import Parameter, Tensor, add, concat, frozen, tanh
from .errors import DimensionError, SpecError
from .init import uniform_param, zeros_param
from .memory import MarnParams, MarnState, init_marn_params, marn_init, marn_step
from .recurrent import LstmParams, init_lstm_params, linear, lstm_init, lstm_step

MODEL_KINDS = ("HA", "LR", "MLP", "LSTM", "C-LSTM", "MT-LSTM", "MARN", "MARN-S", "MARN-C", "MATURE")
TRAINABLE_KINDS = ("MLP", "LSTM", "C-LSTM", "MT-LSTM", "MARN", "MARN-S", "MARN-C", "MATURE")
MULTI_TASK_KINDS = ("C-LSTM", "MT-LSTM", "MARN-S", "MARN-C", "MATURE")
MEMORY_KINDS = ("MARN", "MARN-S", "MARN-C", "MATURE")


@dataclass
class ModelSpec:
    """Architecture description; parameter count is a pure function of it."""

    kind: str
    n_hidden: int = 512
    tau: int = 12
    n_segments: int = 15
    segment_size: int = 60
    gamma: float = 0.3
    epsilon: float = 0.1
    align_dim: int = 0          # 0 means "use segment_size"
    mlp_sizes: tuple = (256, 128, 128, 64)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise SpecError(f"model: unknown kind {self.kind!r}; expected one of {MODEL_KINDS}")
        for name in ("n_hidden", "tau", "n_segments", "segment_size"):
            if getattr(self, name) < 1:
                raise SpecError(f"model: {name} must be positive, got {getattr(self, name)}")
        if self.align_dim == 0:
            self.align_dim = self.segment_size
        self.mlp_sizes = tuple(int(w) for w in self.mlp_sizes)

    @property
    def multi_task(self) -> bool:
        return self.kind in MULTI_TASK_KINDS

    @property
    def head_mid(self) -> int:
        return max(1, self.n_hidden // 2)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_hidden": self.n_hidden,
            "tau": self.tau,
            "n_segments": self.n_segments,
            "segment_size": self.segment_size,
            "gamma": self.gamma,
            "epsilon": self.epsilon,
            "align_dim": self.align_dim,
            "mlp_sizes": list(self.mlp_sizes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["mlp_sizes"] = tuple(d.get("mlp_sizes", (256, 128, 128, 64)))
        return cls(**d)


@dataclass
class HeadParams:
    """Two fully connected layers: in -> mid (tanh) -> out (linear)."""

    W1: Parameter
    b1: Parameter
    W2: Parameter
    b2: Parameter

    def parameters(self) -> list:
        return [self.W1, self.b1, self.W2, self.b2]


def init_head_params(prefix: str, n_in: int, n_mid: int, n_out: int, seed: int) -> HeadParams:
    return HeadParams(
        W1=uniform_param(seed, f"{prefix}.W1", (n_mid, n_in), 1.0 / np.sqrt(n_in)),
        b1=zeros_param(f"{prefix}.b1", (n_mid,)),
        W2=uniform_param(seed, f"{prefix}.W2", (n_out, n_mid), 1.0 / np.sqrt(n_mid)),
        b2=zeros_param(f"{prefix}.b2", (n_out,)),
    )


def head_forward(head: HeadParams, x: Tensor) -> Tensor:
    hid = tanh(add(linear(head.W1, x), head.b1))
    return add(linear(head.W2, hid), head.b2)


@dataclass
class Forecaster:
    spec: ModelSpec
    seed: int
    n_r: int
    n_s: int | None
    parts: dict = field(default_factory=dict)

    def parameters(self) -> list:
        out = []
        for part in self.parts.values():
            if isinstance(part, Parameter):
                out.append(part)
            else:
                out.extend(part.parameters())
        return out

    def param_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def named_parameters(self) -> dict:
        return {p.name: p for p in self.parameters()}

    def forward(self, *inputs: np.ndarray):
        """Tensor predictions for training; see `predict` for arrays."""
        return _FORWARD[self.spec.kind](self, *inputs)

    def predict(self, *inputs: np.ndarray):
        with frozen(self.parameters()):
            out = self.forward(*inputs)
        if isinstance(out, tuple):
            return tuple(o.data.copy() for o in out)
        return out.data.copy()


def build(spec: ModelSpec, n_r: int, n_s: int | None = None, seed: int = 0) -> Forecaster:
    """Construct a forecaster with deterministic per-name initialization.

    n_r is the station count of the only mode for single-task kinds and
    of the station-intensive mode otherwise; n_s is the station-sparse
    count and must be None for single-task kinds.
    """
    if spec.kind in ("HA", "LR"):
        raise SpecError(f"model: kind {spec.kind} is a closed-form baseline, not a built network")
    if n_r < 1:
        raise SpecError(f"model: station count must be positive, got {n_r}")
    if spec.multi_task:
        if n_s is None:
            raise SpecError(f"model: kind {spec.kind} requires a mode pair; n_s is missing")
        if n_s < 1:
            raise SpecError(f"model: station count must be positive, got {n_s}")
    elif n_s is not None:
        raise SpecError(f"model: kind {spec.kind} is single-task but two modes were given")

    h, K, S = spec.n_hidden, spec.n_segments, spec.segment_size
    mid = spec.head_mid
    parts: dict = {}
    if spec.kind == "LSTM":
        parts["lstm"] = init_lstm_params("lstm", n_r, h, seed)
        parts["head"] = init_head_params("head", h, mid, n_r, seed)
    elif spec.kind == "MARN":
        parts["marn"] = init_marn_params("marn", n_r, h, S, seed)
        parts["head"] = init_head_params("head", h, mid, n_r, seed)
    elif spec.kind == "MLP":
        sizes = (spec.tau * n_r, *spec.mlp_sizes, n_r)
        for j in range(len(sizes) - 1):
            parts[f"mlp.W{j}"] = uniform_param(
                seed, f"mlp.W{j}", (sizes[j + 1], sizes[j]), 1.0 / np.sqrt(sizes[j])
            )
            parts[f"mlp.b{j}"] = zeros_param(f"mlp.b{j}", (sizes[j + 1],))
    elif spec.kind == "C-LSTM":
        parts["lstm"] = init_lstm_params("lstm", n_r + n_s, h, seed)
        parts["head_R"] = init_head_params("head_R", h, mid, n_r, seed)
        parts["head_S"] = init_head_params("head_S", h, mid, n_s, seed)
    elif spec.kind == "MT-LSTM":
        parts["lstm_R"] = init_lstm_params("lstm_R", n_r, h, seed)
        parts["lstm_S"] = init_lstm_params("lstm_S", n_s, h, seed)
        parts["head_R"] = init_head_params("head_R", 2 * h, mid, n_r, seed)
        parts["head_S"] = init_head_params("head_S", 2 * h, mid, n_s, seed)
    elif spec.kind in ("MARN-S", "MARN-C", "MATURE"):
        parts["marn_R"] = init_marn_params("marn_R", n_r, h, S, seed)
        parts["marn_S"] = init_marn_params("marn_S", n_s, h, S, seed)
        parts["head_R"] = init_head_params("head_R", 2 * h, mid, n_r, seed)
        parts["head_S"] = init_head_params("head_S", 2 * h, mid, n_s, seed)
        if spec.kind == "MARN-C":
            parts["memfuse.W"] = uniform_param(seed, "memfuse.W", (S, 2 * S), 1.0 / np.sqrt(2 * S))
            parts["memfuse.b"] = zeros_param("memfuse.b", (S,))
        if spec.kind == "MATURE":
            parts["adapt"] = init_adaption_params("adapt", S, spec.align_dim, spec.gamma, seed)
    return Forecaster(spec=spec, seed=seed, n_r=n_r, n_s=n_s, parts=parts)


def _check_window(X: np.ndarray, tau: int, n: int, label: str) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim not in (2, 3) or X.shape[-2] != tau or X.shape[-1] != n:
        raise DimensionError(
            f"model: {label} window must have shape [..., {tau}, {n}], got {X.shape}"
        )
    return X


def _steps(X: np.ndarray):
    return [Tensor(np.ascontiguousarray(X[..., t, :])) for t in range(X.shape[-2])]


def _batch(X: np.ndarray):
    return X.shape[0] if X.ndim == 3 else None


def _forward_lstm(f: Forecaster, X: np.ndarray) -> Tensor:
    X = _check_window(X, f.spec.tau, f.n_r, "input")
    st = lstm_init(f.spec.n_hidden, batch=_batch(X))
    for x in _steps(X):
        st = lstm_step(f.parts["lstm"], st, x)
    return head_forward(f.parts["head"], st.h)


def _forward_marn(f: Forecaster, X: np.ndarray) -> Tensor:
    X = _check_window(X, f.spec.tau, f.n_r, "input")
    st = marn_init(f.spec.n_segments, f.spec.segment_size, f.spec.n_hidden, batch=_batch(X))
    for x in _steps(X):
        st = marn_step(f.parts["marn"], st, x)
    return head_forward(f.parts["head"], st.h)


def _forward_mlp(f: Forecaster, X: np.ndarray) -> Tensor:
    X = _check_window(X, f.spec.tau, f.n_r, "input")
    flat = X.reshape(*X.shape[:-2], X.shape[-2] * X.shape[-1])
    out = Tensor(flat)
    last = len(f.spec.mlp_sizes)
    for j in range(last + 1):
        out = add(linear(f.parts[f"mlp.W{j}"], out), f.parts[f"mlp.b{j}"])
        if j < last:
            out = tanh(out)
    return out


def _forward_clstm(f: Forecaster, X_R: np.ndarray, X_S: np.ndarray):
    X_R = _check_window(X_R, f.spec.tau, f.n_r, "intensive")
    X_S = _check_window(X_S, f.spec.tau, f.n_s, "sparse")
    if X_R.shape[:-1] != X_S.shape[:-1]:
        raise DimensionError(
            f"model: mode windows disagree on batch/steps: {X_R.shape} vs {X_S.shape}"
        )
    X = np.concatenate([X_R, X_S], axis=-1)
    st = lstm_init(f.spec.n_hidden, batch=_batch(X))
    for x in _steps(X):
        st = lstm_step(f.parts["lstm"], st, x)
    return head_forward(f.parts["head_R"], st.h), head_forward(f.parts["head_S"], st.h)


def _forward_mtlstm(f: Forecaster, X_R: np.ndarray, X_S: np.ndarray):
    X_R = _check_window(X_R, f.spec.tau, f.n_r, "intensive")
    X_S = _check_window(X_S, f.spec.tau, f.n_s, "sparse")
    st_r = lstm_init(f.spec.n_hidden, batch=_batch(X_R))
    st_s = lstm_init(f.spec.n_hidden, batch=_batch(X_S))
    for x_r, x_s in zip(_steps(X_R), _steps(X_S)):
        st_r = lstm_step(f.parts["lstm_R"], st_r, x_r)
        st_s = lstm_step(f.parts["lstm_S"], st_s, x_s)
    both = concat([st_r.h, st_s.h], axis=-1)
    return head_forward(f.parts["head_R"], both), head_forward(f.parts["head_S"], both)


def _forward_memory_pair(f: Forecaster, X_R: np.ndarray, X_S: np.ndarray):
    """Shared trunk of MARN-S, MARN-C, and MATURE.

    Per step both cells advance independently; MARN-C then rebuilds the
    sparse memory from the concatenated memories, and MATURE blends via
    the adaption path (computed from the pre-write memories, applied to
    the post-write ones). gamma = 1 skips the blend entirely, which is
    exact: the blend at gamma = 1 returns the sparse memory unchanged.
    """
    X_R = _check_window(X_R, f.spec.tau, f.n_r, "intensive")
    X_S = _check_window(X_S, f.spec.tau, f.n_s, "sparse")
    spec = f.spec
    batch = _batch(X_R)
    st_r = marn_init(spec.n_segments, spec.segment_size, spec.n_hidden, batch=batch)
    st_s = marn_init(spec.n_segments, spec.segment_size, spec.n_hidden, batch=batch)
    kind = spec.kind
    adapting = kind == "MATURE" and f.parts["adapt"].gamma < 1.0
    if adapting:
        gates = adaption_init(spec.segment_size)
    for x_r, x_s in zip(_steps(X_R), _steps(X_S)):
        if adapting:
            beta = adaption_weights(st_r.M, st_s.M, f.parts["adapt"])
        st_r = marn_step(f.parts["marn_R"], st_r, x_r)
        st_s = marn_step(f.parts["marn_S"], st_s, x_s)
        if adapting:
            gates = update_gates(gates, f.parts["adapt"])
            blended = adapt_memory(st_r.M, st_s.M, gates, beta, f.parts["adapt"])
            st_s = MarnState(lstm=st_s.lstm, M=blended, k=st_s.k)
        elif kind == "MARN-C":
            cat = concat([st_r.M, st_s.M], axis=-1)
            fused = tanh(add(linear(f.parts["memfuse.W"], cat), f.parts["memfuse.b"]))
            st_s = MarnState(lstm=st_s.lstm, M=fused, k=st_s.k)
    both = concat([st_r.h, st_s.h], axis=-1)
    return head_forward(f.parts["head_R"], both), head_forward(f.parts["head_S"], both)


_FORWARD = {
    "LSTM": _forward_lstm,
    "MARN": _forward_marn,
    "MLP": _forward_mlp,
    "C-LSTM": _forward_clstm,
    "MT-LSTM": _forward_mtlstm,
    "MARN-S": _forward_memory_pair,
    "MARN-C": _forward_memory_pair,
    "MATURE": _forward_memory_pair,
}

_MEMORY_TAILS = ("W_k", "W_e", "W_a", "W_r", "W_c", "W_h")


def check_gradients(kind: str, seed: int = 0, tolerance: float = 1e-4,
                    n_hidden: int = 6, tau: int = 4, n_segments: int = 3,
                    segment_size: int = 4, n_r: int = 3, n_s: int = 2):
    """Finite-difference verification of one model kind at toy dimensions.

    The check point is deliberately well conditioned: memory-path and
    adaption matrices are spread to three times their initial scale so
    the erase/read paths carry non-negligible influence within a short
    window, and targets sit a small fixed offset away from the initial
    predictions. Small residuals raise the signal-to-noise ratio of the
    central differences (noise scales with the loss value, gradients
    with the residual), keeping every nonzero gradient element well
    above the round-off floor.
    """
    from .autodiff import grad_check, mse

    spec = ModelSpec(kind=kind, n_hidden=n_hidden, tau=tau, n_segments=n_segments,
                     segment_size=segment_size, gamma=0.5,
                     mlp_sizes=(n_hidden + 2, n_hidden, n_hidden, n_hidden - 1))
    if kind not in TRAINABLE_KINDS:
        raise SpecError(f"model: kind {kind} has no gradients to check")
    rng = np.random.default_rng(seed)
    f = build(spec, n_r, n_s if spec.multi_task else None, seed=seed)
    for p in f.parameters():
        tail = p.name.split(".")[-1]
        spread = tail in _MEMORY_TAILS or (
            p.name.startswith(("memfuse", "adapt")) and p.data.ndim >= 2
        )
        if spread:
            p.data *= 3.0

    def offset(base):
        sign = np.where(rng.random(base.shape) < 0.5, -1.0, 1.0)
        return base - sign * rng.uniform(0.05, 0.15, size=base.shape)

    if spec.multi_task:
        x_r = rng.uniform(-1, 1, size=(2, tau, n_r))
        x_s = rng.uniform(-1, 1, size=(2, tau, n_s))
        base_r, base_s = f.predict(x_r, x_s)
        y_r, y_s = offset(base_r), offset(base_s)

        def forward():
            p_r, p_s = f.forward(x_r, x_s)
            return add(mse(p_r, y_r), mse(p_s, y_s))
    else:
        x = rng.uniform(-1, 1, size=(2, tau, n_r))
        y = offset(f.predict(x))

        def forward():
            return mse(f.forward(x), y)

    return grad_check(forward, f.parameters(), tolerance=tolerance)
