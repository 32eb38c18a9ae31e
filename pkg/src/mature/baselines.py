"""Closed-form baselines: historical average and least squares.

Both operate on raw (de-normalized) demand, so their outputs feed the
metrics directly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass
class HistoricalAverage:
    """Per-station mean demand at each time-of-day bin."""

    bins: np.ndarray    # sorted distinct hour-of-day values
    table: np.ndarray   # [n_bins, N]

    def predict_hour(self, hour: float) -> np.ndarray:
        j = np.searchsorted(self.bins, hour)
        if j >= len(self.bins) or self.bins[j] != hour:
            raise ContractError(f"baselines: hour {hour} never appears in the fitted history")
        return self.table[j]

    def predict_steps(self, hours: np.ndarray) -> np.ndarray:
        return np.stack([self.predict_hour(float(h)) for h in np.asarray(hours)])


def fit_ha(values: np.ndarray, hours: np.ndarray) -> HistoricalAverage:
    """Average demand per (station, hour-of-day) over the given history."""
    values = np.asarray(values, dtype=np.float64)
    hours = np.asarray(hours, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] == 0:
        raise ContractError("baselines: historical average needs a non-empty [T, N] history")
    if hours.shape != (values.shape[0],):
        raise ContractError(
            f"baselines: hours must align with history rows: {hours.shape} vs {values.shape}"
        )
    bins = np.unique(hours)
    table = np.empty((len(bins), values.shape[1]))
    for j, h in enumerate(bins):
        table[j] = values[hours == h].mean(axis=0)
    return HistoricalAverage(bins=bins, table=table)


@dataclass
class LinearForecaster:
    """One affine map from the flattened window to next-step demand."""

    W: np.ndarray            # [tau * N, N]
    b: np.ndarray            # [N]
    used_ridge: bool

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float64)
        flat = inputs.reshape(*inputs.shape[:-2], -1)
        return flat @ self.W + self.b


def fit_lr(inputs: np.ndarray, targets: np.ndarray, ridge: float = 1e-6) -> LinearForecaster:
    """Least squares via normal equations, ridge fallback on rank deficiency."""
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.ndim != 3 or targets.ndim != 2 or inputs.shape[0] != targets.shape[0]:
        raise ContractError(
            f"baselines: expected [B, tau, N] inputs and [B, N] targets, "
            f"got {inputs.shape} and {targets.shape}"
        )
    if inputs.shape[0] == 0:
        raise ContractError("baselines: least squares needs at least one sample")
    flat = inputs.reshape(inputs.shape[0], -1)
    A = np.hstack([flat, np.ones((flat.shape[0], 1))])
    G = A.T @ A
    used_ridge = np.linalg.matrix_rank(G, hermitian=True) < G.shape[0]
    if used_ridge:
        G = G + ridge * np.eye(G.shape[0])
    theta = np.linalg.solve(G, A.T @ targets)
    return LinearForecaster(W=theta[:-1], b=theta[-1], used_ridge=used_ridge)
