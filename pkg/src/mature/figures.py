"""Figure rendering for run outputs; every plot lands next to its CSV.

Uses the Agg backend so rendering works headless; every function writes a
PNG to the given path and returns that path.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .errors import ContractError  # noqa: E402

__all__ = [
    "plot_comparison",
    "plot_history",
    "plot_predictions",
    "plot_sweep",
]

_DPI = 120


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def plot_history(history, path):
    """Training and validation loss per epoch for one run."""
    rows = history.epochs if hasattr(history, "epochs") else list(history)
    if not rows:
        raise ContractError("figures: history has no epochs to plot")
    epochs = [r["epoch"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, [r["train_loss"] for r in rows], label="train", marker=".")
    ax.plot(epochs, [r["val_loss"] for r in rows], label="validation", marker=".")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss (scaled units)")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def plot_predictions(dump, path, stations=None, max_stations: int = 4):
    """Truth vs prediction over the scored window for a few stations."""
    picked = list(stations) if stations else dump.stations[:max_stations]
    unknown = [s for s in picked if s not in dump.stations]
    if unknown:
        raise ContractError(f"figures: stations {unknown} not in the dump")
    fig, axes = plt.subplots(len(picked), 1, figsize=(9, 2.2 * len(picked)),
                             sharex=True, squeeze=False)
    for ax, station in zip(axes[:, 0], picked):
        j = dump.stations.index(station)
        ax.plot(dump.timestamps, dump.truth[:, j], label="recorded", lw=1.0)
        ax.plot(dump.timestamps, dump.prediction[:, j], label="predicted",
                lw=1.0, alpha=0.85)
        ax.set_ylabel(station, fontsize=8)
        ax.grid(True, alpha=0.3)
    axes[0, 0].legend(loc="upper right", fontsize=8)
    axes[-1, 0].set_xlabel("time")
    fig.suptitle(f"{dump.mode}: demand per hour", fontsize=10)
    fig.autofmt_xdate()
    return _finish(fig, path)


def plot_comparison(summary, path, metric: str = "mae"):
    """Grouped bars of mean error per model per mode, with std whiskers."""
    if not summary:
        raise ContractError("figures: empty comparison summary")
    modes = sorted({row["mode"] for row in summary})
    specs = list(dict.fromkeys(row["spec"] for row in summary))
    width = 0.8 / len(modes)
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(specs), 4))
    for k, mode in enumerate(modes):
        xs, ys, errs = [], [], []
        for i, spec in enumerate(specs):
            row = next((r for r in summary
                        if r["spec"] == spec and r["mode"] == mode), None)
            if row is None:
                continue
            xs.append(i + (k - (len(modes) - 1) / 2) * width)
            ys.append(row[f"{metric}_mean"])
            errs.append(row[f"{metric}_std"])
        ax.bar(xs, ys, width=width, yerr=errs, capsize=3, label=mode)
    ax.set_xticks(range(len(specs)))
    ax.set_xticklabels(specs, rotation=30, ha="right")
    ax.set_ylabel(f"{metric.upper()} (passengers/hour)")
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    return _finish(fig, path)


def plot_sweep(summary, path, metric: str = "mae"):
    """Error as a function of the memory blend weight, one line per mode."""
    if not summary:
        raise ContractError("figures: empty sweep summary")
    modes = sorted({row["mode"] for row in summary})
    fig, ax = plt.subplots(figsize=(7, 4))
    for mode in modes:
        rows = [r for r in summary if r["mode"] == mode]
        rows.sort(key=lambda r: float(r["spec"]))
        gammas = [float(r["spec"]) for r in rows]
        means = [r[f"{metric}_mean"] for r in rows]
        stds = [r[f"{metric}_std"] for r in rows]
        ax.errorbar(gammas, means, yerr=stds, marker="o", capsize=3, label=mode)
    ax.set_xlabel("gamma (memory blend weight)")
    ax.set_ylabel(f"{metric.upper()} (passengers/hour)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)
