"""Optimization loop: weighted two-task loss, Adam with decoupled weight decay.

The loss for joint models blends the per-mode mean squared errors with a
single weight: ``epsilon * mse_rich + (1 - epsilon) * mse_sparse``. Setting
``epsilon`` to an endpoint trains one head only; the other head receives an
exactly zero gradient because its branch never enters the loss graph.

Weight decay is decoupled from the adaptive step: each parameter is first
shrunk by ``1 - lr * weight_decay`` and only then moved by the Adam update
computed from the raw gradient. `train` is deterministic for a fixed config:
the only randomness is the per-epoch shuffle, driven by a dedicated RNG.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor, add, frozen, mse, mul, zero_grads
from .errors import ConfigError, DivergenceError
from .model import Forecaster

__all__ = [
    "MODE_GAMMA",
    "MODE_LEARNING_RATES",
    "AdamState",
    "TrainConfig",
    "TrainHistory",
    "adam_step",
    "evaluate_loss",
    "multi_task_loss",
    "train",
]

# Per-mode settings that worked well for the bundled transit modes; `mode`
# here names the sparse mode of the pair (the rich side is always metro).
MODE_LEARNING_RATES = {"train": 0.002, "light rail": 0.0008, "ferry": 0.0016}
MODE_GAMMA = {"train": 0.3, "light rail": 0.4, "ferry": 0.4}

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    """Hyper-parameters for one training run."""

    learning_rate: float = 0.002
    epsilon: float = 0.1          # weight on the rich-mode loss term
    weight_decay: float = 1e-4
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    patience: int = 5             # non-improving val epochs tolerated before stopping
    clip_norm: float | None = 5.0  # global gradient-norm ceiling; None disables

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0.0:
            raise ConfigError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.patience < 0:
            raise ConfigError(f"patience must be nonnegative, got {self.patience}")
        if self.clip_norm is not None and self.clip_norm <= 0.0:
            raise ConfigError(f"clip_norm must be positive or None, got {self.clip_norm}")

    def for_mode(self, mode: str) -> "TrainConfig":
        """Return a copy with the tuned learning rate for a bundled sparse mode."""
        if mode not in MODE_LEARNING_RATES:
            raise ConfigError(
                f"unknown mode {mode!r}; tuned modes: {sorted(MODE_LEARNING_RATES)}")
        return replace(self, learning_rate=MODE_LEARNING_RATES[mode])

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epsilon": self.epsilon,
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "patience": self.patience,
            "clip_norm": self.clip_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def multi_task_loss(pred_r: Tensor, true_r, pred_s: Tensor, true_s,
                    epsilon: float) -> Tensor:
    """Blend of the two per-mode mean squared errors.

    At the endpoints the unused branch is dropped from the graph entirely so
    its head parameters receive exactly zero gradient.
    """
    if epsilon == 1.0:
        return mse(pred_r, true_r)
    if epsilon == 0.0:
        return mse(pred_s, true_s)
    return add(mul(mse(pred_r, true_r), epsilon),
               mul(mse(pred_s, true_s), 1.0 - epsilon))


def batch_loss(model: Forecaster, batch, idx, epsilon: float) -> Tensor:
    """Forward one (possibly partial) batch and return its loss tensor."""
    if model.spec.multi_task:
        pred_r, pred_s = model.forward(batch.inputs_r[idx], batch.inputs_s[idx])
        return multi_task_loss(pred_r, batch.targets_r[idx],
                               pred_s, batch.targets_s[idx], epsilon)
    return mse(model.forward(batch.inputs_r[idx]), batch.targets_r[idx])


def evaluate_loss(model: Forecaster, batch, epsilon: float,
                  batch_size: int = 256) -> float:
    """Mean loss over a whole windowed batch, without building gradient tapes.

    Chunked so the per-sample squared errors weight every sample equally
    regardless of how the chunks divide.
    """
    n = batch.n_samples
    total = 0.0
    with frozen(model.parameters()):
        for lo in range(0, n, batch_size):
            idx = np.arange(lo, min(lo + batch_size, n))
            total += float(batch_loss(model, batch, idx, epsilon).data) * idx.size
    return total / n


@dataclass
class AdamState:
    """First/second moment accumulators, keyed by parameter name."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_model(cls, model: Forecaster) -> "AdamState":
        state = cls()
        for p in model.parameters():
            state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        return state


def global_grad_norm(params) -> float:
    """L2 norm of the concatenation of every parameter gradient."""
    total = 0.0
    for p in params:
        total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


def adam_step(params, state: AdamState, lr: float, weight_decay: float = 0.0,
              clip_norm: float | None = None) -> float:
    """Apply one optimizer step in place; returns the pre-clip gradient norm.

    Order per parameter: decay the weight by ``1 - lr * weight_decay``, then
    apply the Adam update from the (possibly clipped) gradient. A non-finite
    gradient aborts with the offending parameter named.
    """
    params = list(params)
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise DivergenceError(
                f"non-finite gradient in parameter {p.name!r}; training aborted")

    norm = global_grad_norm(params)
    scale = 1.0
    if clip_norm is not None and norm > clip_norm:
        scale = clip_norm / norm

    state.step += 1
    t = state.step
    bias1 = 1.0 - ADAM_BETA1 ** t
    bias2 = 1.0 - ADAM_BETA2 ** t
    for p in params:
        g = p.grad if scale == 1.0 else p.grad * scale
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        m = state.m[p.name]
        v = state.v[p.name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p.data -= lr * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)
    return norm


@dataclass
class TrainHistory:
    """Per-epoch record of one run plus its outcome flags."""

    epochs: list = field(default_factory=list)        # dicts: epoch/train_loss/val_loss/lr
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    stopped_early: bool = False
    diverged: bool = False
    divergence_note: str = ""

    def append(self, epoch: int, train_loss: float, val_loss: float, lr: float) -> None:
        self.epochs.append({"epoch": epoch, "train_loss": train_loss,
                            "val_loss": val_loss, "lr": lr})

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for row in self.epochs:
                writer.writerow([row["epoch"], repr(row["train_loss"]),
                                 repr(row["val_loss"]), repr(row["lr"])])


def snapshot_params(model: Forecaster) -> dict:
    return {p.name: p.data.copy() for p in model.parameters()}


def restore_params(model: Forecaster, snap: dict) -> None:
    for p in model.parameters():
        p.data[...] = snap[p.name]


def train(model: Forecaster, train_batch, val_batch, config: TrainConfig) -> TrainHistory:
    """Fit `model` in place; the best-validation parameters are kept.

    Expects windowed, normalized batches. Stops early once the validation
    loss has failed to improve for more than `patience` consecutive epochs
    (`patience=0` stops at the first non-improving epoch). A non-finite
    training loss or gradient aborts the run and restores the best
    parameters seen so far.
    """
    if model.spec.multi_task and train_batch.inputs_s is None:
        raise ConfigError(f"model kind {model.spec.kind!r} needs sparse-mode windows")

    params = list(model.parameters())
    state = AdamState.for_model(model)
    rng = np.random.default_rng(config.seed)
    history = TrainHistory()
    best = snapshot_params(model)
    bad_epochs = 0
    n = train_batch.n_samples

    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            loss = batch_loss(model, train_batch, idx, config.epsilon)
            value = float(loss.data)
            if not np.isfinite(value):
                restore_params(model, best)
                history.diverged = True
                history.divergence_note = (
                    f"non-finite training loss at epoch {epoch}; "
                    f"restored parameters from epoch {history.best_epoch}")
                return history
            total += value * idx.size
            zero_grads(params)
            loss.backward()
            try:
                adam_step(params, state, config.learning_rate,
                          config.weight_decay, config.clip_norm)
            except DivergenceError as exc:
                restore_params(model, best)
                history.diverged = True
                history.divergence_note = (
                    f"{exc} (epoch {epoch}; restored parameters from "
                    f"epoch {history.best_epoch})")
                return history
        train_loss = total / n
        val_loss = evaluate_loss(model, val_batch, config.epsilon)
        history.append(epoch, train_loss, val_loss, config.learning_rate)

        if val_loss < history.best_val_loss:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best = snapshot_params(model)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > config.patience:
                history.stopped_early = True
                break

    restore_params(model, best)
    return history
