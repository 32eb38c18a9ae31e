"""Metrics, experiment preparation, and the comparison / gamma-sweep runners.

Metrics are always computed in de-normalized units (passengers per hour):
predictions come back through the inverse of the train-fit min-max transform
and are compared against the raw recorded values at the same time steps.

`compare` and `sweep_gamma` are deterministic given (entries, data, config,
seeds): every randomized choice is driven by the per-run seed, and rows are
assembled in input order regardless of how runs are scheduled.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import fit_ha, fit_lr
from .data import (
    ModePairDataset,
    WindowedBatch,
    fit_minmax,
    split_day_ranges,
    window_range,
)
from .errors import ContractError
from .model import MODEL_KINDS, ModelSpec, build
from .training import TrainConfig, train

__all__ = [
    "ComparisonResult",
    "MetricsReport",
    "ModeMetrics",
    "PredictionDump",
    "PreparedData",
    "compare",
    "config_hash",
    "evaluate_baseline",
    "evaluate_forecaster",
    "mae",
    "prepare",
    "rmse",
    "run_single",
    "sweep_gamma",
]

ROLES = ("intensive", "sparse")
BASELINE_KINDS = ("HA", "LR")
RUN_COLUMNS = ("spec", "mode", "seed", "MAE", "RMSE")
SUMMARY_COLUMNS = ("spec", "mode", "n_runs", "mae_mean", "mae_std",
                   "rmse_mean", "rmse_std")


# -- metrics ----------------------------------------------------------------------

def _check_pair(pred, true):
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ContractError(
            f"evaluation: prediction shape {pred.shape} != truth shape {true.shape}")
    if pred.size == 0:
        raise ContractError("evaluation: cannot score an empty prediction set")
    return pred, true


def mae(pred, true) -> float:
    """Mean absolute residual over all (sample, station) pairs."""
    pred, true = _check_pair(pred, true)
    return float(np.mean(np.abs(pred - true)))


def rmse(pred, true) -> float:
    """Root of the mean squared residual over all (sample, station) pairs."""
    pred, true = _check_pair(pred, true)
    return float(np.sqrt(np.mean((pred - true) ** 2)))


def config_hash(d: dict) -> str:
    """Short stable digest of a JSON-serializable config mapping."""
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


# -- experiment preparation --------------------------------------------------------

@dataclass
class PreparedData:
    """A mode pair cut into splits, normalized with train-fit min-max."""

    pair: ModePairDataset
    tau: int
    splits: object
    norms: dict                 # role -> NormalizationState
    batches: dict               # role -> {"train"/"val"/"test": (inputs, targets, steps)}

    def series(self, role: str):
        return self.pair.intensive if role == "intensive" else self.pair.sparse

    def joint(self, split: str) -> WindowedBatch:
        """Two-mode windows for multi-task models."""
        in_r, tg_r, steps = self.batches["intensive"][split]
        in_s, tg_s, _ = self.batches["sparse"][split]
        return WindowedBatch(inputs_r=in_r, targets_r=tg_r, inputs_s=in_s,
                             targets_s=tg_s, target_steps=steps)

    def solo(self, role: str, split: str) -> WindowedBatch:
        """Single-mode windows, carried in the first input slot."""
        inputs, targets, steps = self.batches[role][split]
        return WindowedBatch(inputs_r=inputs, targets_r=targets, target_steps=steps)

    def n_stations(self, role: str) -> int:
        return self.series(role).n_stations


def prepare(pair: ModePairDataset, tau: int = 12, test_days: int = 27,
            val_fraction: float = 0.2, norms: dict | None = None) -> PreparedData:
    """Split chronologically, scale with train-fit min-max, window each split.

    Pass `norms` (role -> NormalizationState) to reuse a stored fit, e.g.
    when scoring a checkpoint whose training data fixed the scale; otherwise
    the fit comes from this pair's training block.
    """
    splits = split_day_ranges(pair.intensive, test_days=test_days,
                              val_fraction=val_fraction, tau=tau)
    norms = dict(norms) if norms else {}
    batches = {}
    for role in ROLES:
        series = pair.intensive if role == "intensive" else pair.sparse
        if role not in norms:
            norms[role] = fit_minmax(series.values[splits.train[0]:splits.train[1]])
        scaled = norms[role].apply(series.values)
        batches[role] = {
            "train": window_range(scaled, splits.train, tau),
            "val": window_range(scaled, splits.val, tau),
            "test": window_range(scaled, splits.test, tau),
        }
    return PreparedData(pair=pair, tau=tau, splits=splits, norms=norms,
                        batches=batches)


# -- reports -----------------------------------------------------------------------

@dataclass
class ModeMetrics:
    mode: str                   # the series' own label, e.g. "sparse" or "ferry"
    role: str                   # "intensive" | "sparse"
    mae: float
    rmse: float
    per_station: dict = field(default_factory=dict)   # station -> {"mae","rmse"}


@dataclass
class MetricsReport:
    label: str
    seed: int
    modes: list
    metadata: dict = field(default_factory=dict)

    def by_role(self, role: str) -> ModeMetrics:
        for m in self.modes:
            if m.role == role:
                return m
        raise ContractError(f"evaluation: report has no {role!r} mode")


@dataclass
class PredictionDump:
    """Per-target-step truth and prediction rows for one mode."""

    mode: str
    role: str
    stations: list
    timestamps: list            # one per target step
    truth: np.ndarray           # [B, N]
    prediction: np.ndarray      # [B, N]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["timestamp", "station_id", "truth", "prediction"])
            for t, stamp in enumerate(self.timestamps):
                text = stamp.isoformat(sep=" ")
                for j, station in enumerate(self.stations):
                    writer.writerow([text, station, repr(float(self.truth[t, j])),
                                     repr(float(self.prediction[t, j]))])


def _mode_metrics(series, norm, pred_scaled, steps) -> tuple:
    truth = series.values[steps]
    pred = norm.invert(pred_scaled)
    per_station = {}
    for j, station in enumerate(series.stations):
        per_station[station] = {"mae": mae(pred[:, j], truth[:, j]),
                                "rmse": rmse(pred[:, j], truth[:, j])}
    stamps = series.timestamps()
    dump = PredictionDump(mode=series.mode, role="", stations=list(series.stations),
                          timestamps=[stamps[int(t)] for t in steps],
                          truth=truth, prediction=pred)
    return mae(pred, truth), rmse(pred, truth), per_station, dump


def _predict_chunked(model, prepared: PreparedData, role, split: str,
                     batch_size: int = 512):
    """Chunked tape-free forward over one split; returns scaled predictions."""
    if model.spec.multi_task:
        in_r = prepared.batches["intensive"][split][0]
        in_s = prepared.batches["sparse"][split][0]
        outs_r, outs_s = [], []
        for lo in range(0, in_r.shape[0], batch_size):
            pr, ps = model.predict(in_r[lo:lo + batch_size], in_s[lo:lo + batch_size])
            outs_r.append(pr)
            outs_s.append(ps)
        return {"intensive": np.concatenate(outs_r), "sparse": np.concatenate(outs_s)}
    inputs = prepared.batches[role][split][0]
    outs = [model.predict(inputs[lo:lo + batch_size])
            for lo in range(0, inputs.shape[0], batch_size)]
    return {role: np.concatenate(outs)}


def evaluate_forecaster(model, prepared: PreparedData, role: str = "sparse",
                        label: str | None = None, seed: int = 0,
                        split: str = "test", metadata: dict | None = None):
    """Score a trained network on one split; returns (report, dumps).

    Multi-task models are scored on both modes; single-task models on the
    mode named by `role` (whose station count must match the model width).
    """
    roles = list(ROLES) if model.spec.multi_task else [role]
    if not model.spec.multi_task and prepared.n_stations(role) != model.n_r:
        raise ContractError(
            f"evaluation: model expects {model.n_r} stations but {role!r} mode "
            f"has {prepared.n_stations(role)}")
    preds = _predict_chunked(model, prepared, role, split)
    modes, dumps = [], []
    for r in roles:
        steps = prepared.batches[r][split][2]
        m, rm, per_station, dump = _mode_metrics(prepared.series(r),
                                                 prepared.norms[r], preds[r], steps)
        dump.role = r
        modes.append(ModeMetrics(mode=dump.mode, role=r, mae=m, rmse=rm,
                                 per_station=per_station))
        dumps.append(dump)
    meta = {"spec": model.spec.to_dict(), "split": split, **(metadata or {})}
    return MetricsReport(label=label or model.spec.kind, seed=seed, modes=modes,
                         metadata=meta), dumps


def evaluate_baseline(kind: str, prepared: PreparedData, role: str = "sparse",
                      split: str = "test", seed: int = 0):
    """Fit HA or LR on the train+val steps of one mode and score a split.

    Baselines consume raw (unscaled) values: HA averages them directly and
    the ridge-backed linear model is fit in original units, so reports stay
    in passengers per hour without an inverse transform.
    """
    if kind not in BASELINE_KINDS:
        raise ContractError(f"evaluation: unknown baseline {kind!r}; "
                            f"expected one of {BASELINE_KINDS}")
    series = prepared.series(role)
    splits = prepared.splits
    fit_lo, fit_hi = splits.train[0], splits.val[1]
    steps = prepared.batches[role][split][2]
    truth = series.values[steps]
    if kind == "HA":
        model = fit_ha(series.values[fit_lo:fit_hi],
                       series.hour_of_day()[fit_lo:fit_hi])
        pred = model.predict_steps(series.hour_of_day()[steps])
    else:
        tau = prepared.tau
        rng = {"train": splits.train, "val": splits.val, "test": splits.test}[split]
        in_tr, tg_tr, _ = window_range(series.values, (fit_lo, fit_hi), tau)
        model = fit_lr(in_tr, tg_tr)
        inputs, _, _ = window_range(series.values, rng, tau)
        pred = model.predict(inputs)
    per_station = {st: {"mae": mae(pred[:, j], truth[:, j]),
                        "rmse": rmse(pred[:, j], truth[:, j])}
                   for j, st in enumerate(series.stations)}
    stamps = series.timestamps()
    dump = PredictionDump(mode=series.mode, role=role, stations=list(series.stations),
                          timestamps=[stamps[int(t)] for t in steps],
                          truth=truth, prediction=pred)
    report = MetricsReport(
        label=kind, seed=seed,
        modes=[ModeMetrics(mode=series.mode, role=role, mae=mae(pred, truth),
                           rmse=rmse(pred, truth), per_station=per_station)],
        metadata={"baseline": kind, "split": split})
    return report, [dump]


# -- comparison runner --------------------------------------------------------------

def _coerce_spec(entry, defaults: ModelSpec | None) -> tuple:
    """Normalize a runner entry into (label, kind, ModelSpec | None)."""
    if isinstance(entry, ModelSpec):
        return entry.kind, entry.kind, entry
    kind = str(entry)
    if kind in BASELINE_KINDS:
        return kind, kind, None
    if kind not in MODEL_KINDS:
        raise ContractError(
            f"evaluation: unknown model kind {kind!r}; expected one of "
            f"{tuple(sorted(MODEL_KINDS))}")
    base = defaults if defaults is not None else ModelSpec(kind)
    return kind, kind, replace(base, kind=kind)


def run_single(prepared: PreparedData, entry, config: TrainConfig, seed: int,
               role: str = "sparse", defaults: ModelSpec | None = None) -> dict:
    """Train (or fit) one entry with one seed and score the test split.

    Returns {"label", "role", "rows": {role: (mae, rmse)}, "history" | None,
    "diverged": bool}. A diverged run reports NaN metrics instead of raising.
    """
    label, kind, spec = _coerce_spec(entry, defaults)
    if spec is None:
        report, _ = evaluate_baseline(kind, prepared, role=role, seed=seed)
        return {"label": label, "rows": {role: (report.modes[0].mae,
                                                report.modes[0].rmse)},
                "diverged": False, "history": None}
    cfg = replace(config, seed=seed)
    if spec.multi_task:
        model = build(spec, prepared.n_stations("intensive"),
                      prepared.n_stations("sparse"), seed=seed)
        history = train(model, prepared.joint("train"), prepared.joint("val"), cfg)
    else:
        model = build(spec, prepared.n_stations(role), seed=seed)
        history = train(model, prepared.solo(role, "train"),
                        prepared.solo(role, "val"), cfg)
    if history.diverged:
        roles = list(ROLES) if spec.multi_task else [role]
        return {"label": label, "rows": {r: (math.nan, math.nan) for r in roles},
                "diverged": True, "history": history}
    report, _ = evaluate_forecaster(model, prepared, role=role, seed=seed)
    return {"label": label,
            "rows": {m.role: (m.mae, m.rmse) for m in report.modes},
            "diverged": False, "history": history}


@dataclass
class ComparisonResult:
    """Per-run rows plus per-(spec, mode) aggregates, in input order."""

    rows: list = field(default_factory=list)       # dicts keyed by RUN_COLUMNS
    summary: list = field(default_factory=list)    # dicts keyed by SUMMARY_COLUMNS
    notes: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RUN_COLUMNS)
            for row in self.rows:
                writer.writerow([row["spec"], row["mode"], row["seed"],
                                 repr(row["MAE"]), repr(row["RMSE"])])

    def summary_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(SUMMARY_COLUMNS)
            for row in self.summary:
                writer.writerow([row["spec"], row["mode"], row["n_runs"],
                                 repr(row["mae_mean"]), repr(row["mae_std"]),
                                 repr(row["rmse_mean"]), repr(row["rmse_std"])])

    def format_table(self) -> str:
        lines = [f"{'model':<10} {'mode':<12} {'runs':>4} "
                 f"{'MAE':>18} {'RMSE':>18}"]
        for row in self.summary:
            lines.append(
                f"{row['spec']:<10} {row['mode']:<12} {row['n_runs']:>4} "
                f"{row['mae_mean']:>10.4f} ± {row['mae_std']:<6.4f}"
                f"{row['rmse_mean']:>10.4f} ± {row['rmse_std']:<6.4f}")
        return "\n".join(lines)

    def mean_mae(self, spec: str, mode: str) -> float:
        for row in self.summary:
            if row["spec"] == spec and row["mode"] == mode:
                return row["mae_mean"]
        raise ContractError(f"evaluation: no summary row for ({spec!r}, {mode!r})")


def _aggregate(rows: list, order: list) -> list:
    summary = []
    for spec, mode in order:
        picked = [r for r in rows if r["spec"] == spec and r["mode"] == mode]
        maes = np.array([r["MAE"] for r in picked])
        rmses = np.array([r["RMSE"] for r in picked])
        ok = np.isfinite(maes)
        summary.append({
            "spec": spec, "mode": mode, "n_runs": int(ok.sum()),
            "mae_mean": float(np.mean(maes[ok])) if ok.any() else math.nan,
            "mae_std": float(np.std(maes[ok])) if ok.any() else math.nan,
            "rmse_mean": float(np.mean(rmses[ok])) if ok.any() else math.nan,
            "rmse_std": float(np.std(rmses[ok])) if ok.any() else math.nan,
        })
    return summary


def _run_task(args):
    prepared, entry, config, seed, role, defaults = args
    return run_single(prepared, entry, config, seed, role=role, defaults=defaults)


def _execute(tasks: list, jobs: int) -> list:
    if jobs <= 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_task, tasks))


def _mode_label(prepared: PreparedData, role: str) -> str:
    return prepared.series(role).mode


def compare(entries: list, prepared: PreparedData, config: TrainConfig,
            seeds: list, role: str = "sparse", jobs: int = 1,
            defaults: ModelSpec | None = None) -> ComparisonResult:
    """Train/fit every entry over the seed list and tabulate test metrics.

    Entries may be model kind strings (including "HA" and "LR") or full
    ModelSpec values. Single-task entries run on the mode named by `role`;
    multi-task entries contribute one row per mode.
    """
    if len(entries) < 2:
        raise ContractError("evaluation: compare needs at least two entries")
    if not seeds:
        raise ContractError("evaluation: compare needs at least one seed")
    tasks = [(prepared, entry, config, seed, role, defaults)
             for entry in entries for seed in seeds]
    outcomes = _execute(tasks, jobs)
    result = ComparisonResult()
    order = []
    for (_, entry, _, seed, _, _), outcome in zip(tasks, outcomes):
        for r, (m, rm) in sorted(outcome["rows"].items()):
            mode = _mode_label(prepared, r)
            result.rows.append({"spec": outcome["label"], "mode": mode,
                                "seed": seed, "MAE": m, "RMSE": rm})
            if (outcome["label"], mode) not in order:
                order.append((outcome["label"], mode))
        if outcome["diverged"]:
            result.notes.append(
                f"run ({outcome['label']}, seed {seed}) diverged: "
                f"{outcome['history'].divergence_note}")
    result.summary = _aggregate(result.rows, order)
    return result


def sweep_gamma(values, prepared: PreparedData, config: TrainConfig, seeds: list,
                jobs: int = 1, defaults: ModelSpec | None = None) -> ComparisonResult:
    """Train the adaptive model across a gamma grid; rows labelled by gamma.

    Values are de-duplicated and sorted; each must lie in [0, 1]. The gamma=1
    rows coincide with a MARN-S comparison under the same config and seeds.
    """
    grid = sorted(set(float(v) for v in values))
    if not grid:
        raise ContractError("evaluation: gamma sweep needs at least one value")
    for g in grid:
        if not 0.0 <= g <= 1.0:
            raise ContractError(f"evaluation: gamma {g} outside [0, 1]")
    base = defaults if defaults is not None else ModelSpec("MATURE")
    entries = [replace(base, kind="MATURE", gamma=g) for g in grid]
    tasks = [(prepared, entry, config, seed, "sparse", None)
             for entry in entries for seed in seeds]
    outcomes = _execute(tasks, jobs)
    result = ComparisonResult()
    order = []
    for (_, entry, _, seed, _, _), outcome in zip(tasks, outcomes):
        label = f"{entry.gamma:.1f}" if round(entry.gamma, 1) == entry.gamma \
            else repr(entry.gamma)
        for r, (m, rm) in sorted(outcome["rows"].items()):
            mode = _mode_label(prepared, r)
            result.rows.append({"spec": label, "mode": mode, "seed": seed,
                                "MAE": m, "RMSE": rm})
            if (label, mode) not in order:
                order.append((label, mode))
        if outcome["diverged"]:
            result.notes.append(
                f"run (gamma {label}, seed {seed}) diverged: "
                f"{outcome['history'].divergence_note}")
    result.summary = _aggregate(result.rows, order)
    return result
