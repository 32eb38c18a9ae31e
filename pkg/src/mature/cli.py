"""Command-line entry point for reproducible forecasting experiments.

Every command that writes files targets one run directory (default
``$MATURE_RUN_ROOT/<command>``, root falling back to ``./runs``). A run
directory is append-only: re-targeting a non-empty one requires --force.
Each run echoes its fully resolved configuration to resolved_config.json
and lists every output with a digest in manifest.json, so a run can be
re-executed bitwise from its own artifacts.

Configuration is a JSON file with up to three sections: "model",
"training", and "data". Unknown keys anywhere are rejected. Command-line
flags override file values, which override the built-in defaults. A
resolved_config.json from an earlier run is itself a valid --config file.

Errors print one line to stderr with a stable code prefix (E_CONFIG,
E_DATA, E_SPEC, E_DIMENSION, E_CHECKPOINT, E_DIVERGENCE, E_CONTRACT,
E_IO) and exit nonzero; argparse usage problems exit 2.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from datetime import timedelta
from pathlib import Path

from . import __version__
from .data import (
    ModePairDataset,
    NormalizationState,
    SynthConfig,
    export_csv,
    filter_low_demand,
    ingest_csv,
    load_pair,
    save_pair,
    synthesize,
    window_range,
)
from .baselines import fit_ha, fit_lr
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    DivergenceError,
    MatureError,
    SpecError,
)
from .evaluation import (
    MetricsReport,
    ModeMetrics,
    PredictionDump,
    compare,
    config_hash,
    evaluate_forecaster,
    mae,
    prepare,
    rmse,
    sweep_gamma,
)
from .figures import plot_comparison, plot_history, plot_predictions, plot_sweep
from .model import MODEL_KINDS, TRAINABLE_KINDS, ModelSpec, build, check_gradients
from .store import load_any, save_baseline, save_checkpoint
from .training import TrainConfig, train

BASELINES = ("HA", "LR")
ALL_KINDS = tuple(sorted(MODEL_KINDS))
_CANON = {k.lower(): k for k in ALL_KINDS}

DATA_DEFAULTS = {"test_days": 27, "val_fraction": 0.2, "role": "sparse",
                 "filter_threshold": None}

_ERROR_CODES = (
    (DivergenceError, "E_DIVERGENCE"),
    (CheckpointError, "E_CHECKPOINT"),
    (ConfigError, "E_CONFIG"),
    (SpecError, "E_SPEC"),
    (DataError, "E_DATA"),
    (DimensionError, "E_DIMENSION"),
    (ContractError, "E_CONTRACT"),
    (MatureError, "E_CONTRACT"),
    (OSError, "E_IO"),
)


# -- small argparse types -----------------------------------------------------------

def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _unit_float(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return value


def _kind(text: str) -> str:
    key = text.strip().lower()
    if key not in _CANON:
        raise argparse.ArgumentTypeError(
            f"unknown model kind {text!r}; choose from {', '.join(ALL_KINDS)}")
    return _CANON[key]


def _seed_list(text: str) -> list:
    try:
        seeds = [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("need at least one seed")
    return seeds


def _kind_list(text: str) -> list:
    return [_kind(tok) for tok in text.split(",") if tok.strip() != ""]


def _grid(text: str) -> list:
    """Parse a gamma grid: either 'start:stop:step' or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(
                f"grid must be start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise argparse.ArgumentTypeError("grid step must be positive")
        values = []
        k = 0
        while True:
            v = round(start + k * step, 10)
            if v > stop + 1e-9:
                break
            values.append(v)
            k += 1
        return values
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid values must be numbers: {text!r}")


# -- run directories and manifests ---------------------------------------------------

def run_root() -> Path:
    return Path(os.environ.get("MATURE_RUN_ROOT", "runs"))


def open_run_dir(out: str | None, command: str, force: bool) -> Path:
    path = Path(out) if out else run_root() / command
    if path.exists() and any(path.iterdir()) and not force:
        raise ConfigError(
            f"run directory {path} already has contents; pass --force to reuse it")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_run_files(run_dir: Path, command: str, params: dict, files: list) -> str:
    """Echo the resolved config, then the manifest covering every output."""
    cfg_hash = config_hash(params)
    resolved = {"command": command, "version": __version__,
                "config_hash": cfg_hash, "params": params}
    cfg_path = run_dir / "resolved_config.json"
    cfg_path.write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    outputs = []
    for f in sorted(set(files) | {cfg_path}):
        f = Path(f)
        outputs.append({"path": f.name, "bytes": f.stat().st_size,
                        "sha256": _sha256(f)})
    manifest = {"command": command, "version": __version__,
                "config_hash": cfg_hash, "outputs": outputs}
    (run_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return cfg_hash


# -- configuration resolution ---------------------------------------------------------

def _merge_section(name: str, defaults: dict, override: dict) -> dict:
    merged = dict(defaults)
    for key, value in override.items():
        if key not in defaults:
            raise ConfigError(f"config: unknown key {name}.{key}")
        merged[key] = value
    return merged


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError(f"config: {path} must hold a JSON object")
    if "params" in doc:
        doc = doc["params"]
    unknown = set(doc) - {"model", "training", "data"}
    if unknown:
        raise ConfigError(f"config: unknown section(s) {sorted(unknown)}")
    return doc


def resolve_params(args, file_params: dict) -> dict:
    """Defaults <- config file <- flags, with unknown keys rejected."""
    file_model = dict(file_params.get("model", {}))
    kind = getattr(args, "model", None) or file_model.get("kind") or "MATURE"
    if str(kind).lower() not in _CANON:
        raise ConfigError(f"config: unknown model.kind {kind!r}")
    kind = _CANON[str(kind).lower()]
    file_model.pop("kind", None)

    if kind in BASELINES:
        model_defaults = {"tau": 12}
        file_model = {k: v for k, v in file_model.items() if k == "tau"}
    else:
        model_defaults = ModelSpec(kind).to_dict()
        model_defaults.pop("kind")
    model = _merge_section("model", model_defaults, file_model)
    training = _merge_section("training", TrainConfig().to_dict(),
                              file_params.get("training", {}))
    data = _merge_section("data", DATA_DEFAULTS, file_params.get("data", {}))

    flag_map = {
        "hidden": ("model", "n_hidden"), "tau": ("model", "tau"),
        "segments": ("model", "n_segments"),
        "segment_size": ("model", "segment_size"), "gamma": ("model", "gamma"),
        "lr": ("training", "learning_rate"), "epochs": ("training", "epochs"),
        "batch_size": ("training", "batch_size"), "seed": ("training", "seed"),
        "weight_decay": ("training", "weight_decay"),
        "patience": ("training", "patience"), "clip_norm": ("training", "clip_norm"),
        "epsilon": ("training", "epsilon"),
        "test_days": ("data", "test_days"), "val_fraction": ("data", "val_fraction"),
        "role": ("data", "role"), "filter_threshold": ("data", "filter_threshold"),
    }
    sections = {"model": model, "training": training, "data": data}
    for flag, (section, key) in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None and key in sections[section]:
            sections[section][key] = value
    if data["role"] not in ("intensive", "sparse"):
        raise ConfigError(f"config: data.role must be intensive or sparse, "
                          f"got {data['role']!r}")
    # the loss weight lives in the training config; mirror it into the
    # model record so the echoed spec is self-consistent
    if "epsilon" in model:
        model["epsilon"] = training["epsilon"]
    model["kind"] = kind
    return {"model": model, "training": training, "data": data}


def _model_spec(params: dict) -> ModelSpec:
    return ModelSpec.from_dict(params["model"])


def _train_config(params: dict) -> TrainConfig:
    return TrainConfig.from_dict(params["training"])


def _apply_filter(pair: ModePairDataset, threshold) -> ModePairDataset:
    if threshold is None:
        return pair
    kept_r, _, dropped_r = filter_low_demand(pair.intensive, threshold)
    kept_s, _, dropped_s = filter_low_demand(pair.sparse, threshold)
    if dropped_r or dropped_s:
        print(f"filtered stations below mean demand {threshold}: "
              f"{len(dropped_r)} intensive, {len(dropped_s)} sparse")
    return ModePairDataset(intensive=kept_r, sparse=kept_s)


def _load_data(path: str) -> tuple:
    pair, meta = load_pair(path)
    return pair, meta, _sha256(Path(path))


# -- commands -------------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = SynthConfig(n_r=args.n_intensive, n_s=args.n_sparse, days=args.days,
                      seed=args.seed, noise=args.noise, coupling=args.coupling)
    run_dir = open_run_dir(args.out, "generate", args.force)
    pair = synthesize(cfg)
    dataset = run_dir / "dataset.bin"
    save_pair(dataset, pair, meta={"synth": cfg.to_dict()})
    csv_r = run_dir / "intensive.csv"
    csv_s = run_dir / "sparse.csv"
    export_csv(pair.intensive, csv_r)
    export_csv(pair.sparse, csv_s)
    write_run_files(run_dir, "generate", {"synth": cfg.to_dict()},
                    [dataset, csv_r, csv_s])
    for series in (pair.intensive, pair.sparse):
        print(f"{series.mode}: {series.n_stations} stations x {series.n_steps} "
              f"hourly steps ({args.days} days), mean {series.values.mean():.2f}, "
              f"max {series.values.max():.1f} passengers/hour")
    print(f"wrote {dataset}")
    return 0


def _fit_baseline(kind: str, prep, role: str):
    series = prep.series(role)
    lo, hi = prep.splits.train[0], prep.splits.val[1]
    if kind == "HA":
        return fit_ha(series.values[lo:hi], series.hour_of_day()[lo:hi])
    inputs, targets, _ = window_range(series.values, (lo, hi), prep.tau)
    return fit_lr(inputs, targets)


def cmd_train(args) -> int:
    params = resolve_params(args, load_config_file(args.config))
    pair, _, digest = _load_data(args.data)
    pair = _apply_filter(pair, params["data"]["filter_threshold"])
    kind = params["model"]["kind"]
    tau = params["model"]["tau"]
    data_p = params["data"]
    run_dir = open_run_dir(args.out, "train", args.force)
    prep = prepare(pair, tau=tau, test_days=data_p["test_days"],
                   val_fraction=data_p["val_fraction"])
    role = data_p["role"]
    stations = {r: list(prep.series(r).stations) for r in ("intensive", "sparse")}
    modes = {r: prep.series(r).mode for r in ("intensive", "sparse")}
    ckpt = run_dir / "checkpoint.bin"
    files = [ckpt]

    if kind in BASELINES:
        model = _fit_baseline(kind, prep, role)
        extra = {"params": params, "config_hash": config_hash(params),
                 "dataset_digest": digest, "role": role, "tau": tau,
                 "stations": stations, "modes": modes,
                 "step_hours": pair.intensive.step_hours}
        save_baseline(ckpt, kind, model, extra)
        write_run_files(run_dir, "train", params, files)
        print(f"fitted {kind} baseline on the {role} mode "
              f"({len(stations[role])} stations); no training loop needed")
        print(f"wrote {ckpt}")
        return 0

    spec = _model_spec(params)
    cfg = _train_config(params)
    if spec.multi_task:
        model = build(spec, prep.n_stations("intensive"),
                      prep.n_stations("sparse"), seed=cfg.seed)
        history = train(model, prep.joint("train"), prep.joint("val"), cfg)
    else:
        model = build(spec, prep.n_stations(role), seed=cfg.seed)
        history = train(model, prep.solo(role, "train"), prep.solo(role, "val"), cfg)

    extra = {"params": params, "config_hash": config_hash(params),
             "dataset_digest": digest, "role": role,
             "stations": stations, "modes": modes,
             "step_hours": pair.intensive.step_hours,
             "norms": {r: prep.norms[r].to_dict() for r in ("intensive", "sparse")},
             "best_epoch": history.best_epoch,
             "best_val_loss": history.best_val_loss}
    save_checkpoint(ckpt, model, extra)
    hist_csv = run_dir / "history.csv"
    history.to_csv(hist_csv)
    files.append(hist_csv)
    if history.epochs:
        files.append(plot_history(history, run_dir / "history.png"))
    write_run_files(run_dir, "train", params, files)
    print(f"trained {kind} ({model.param_count()} parameters) for "
          f"{len(history.epochs)} epochs; best validation loss "
          f"{history.best_val_loss:.6f} at epoch {history.best_epoch}")
    print(f"wrote {ckpt}")
    if history.diverged:
        raise DivergenceError(history.divergence_note)
    return 0


def _restore_norms(extra: dict) -> dict:
    return {role: NormalizationState.from_dict(d)
            for role, d in extra.get("norms", {}).items()}


def _check_stations(extra: dict, pair, ckpt_path, data_path) -> None:
    stored = extra.get("stations", {})
    current = {"intensive": pair.intensive, "sparse": pair.sparse}
    for role, series in current.items():
        if role in stored and list(series.stations) != stored[role]:
            raise CheckpointError(
                f"checkpoint {ckpt_path} (config {extra.get('config_hash')}) was "
                f"trained on different {role} stations than {data_path} "
                f"(digest {_sha256(Path(data_path))[:12]})")


def _baseline_report(kind, model, extra, prep, role):
    series = prep.series(role)
    steps = prep.batches[role]["test"][2]
    truth = series.values[steps]
    if kind == "HA":
        pred = model.predict_steps(series.hour_of_day()[steps])
    else:
        rng = prep.splits.test
        inputs, _, _ = window_range(series.values, rng, prep.tau)
        pred = model.predict(inputs)
    per_station = {st: {"mae": mae(pred[:, j], truth[:, j]),
                        "rmse": rmse(pred[:, j], truth[:, j])}
                   for j, st in enumerate(series.stations)}
    stamps = series.timestamps()
    dump = PredictionDump(mode=series.mode, role=role,
                          stations=list(series.stations),
                          timestamps=[stamps[int(t)] for t in steps],
                          truth=truth, prediction=pred)
    report = MetricsReport(
        label=kind, seed=0,
        modes=[ModeMetrics(mode=series.mode, role=role, mae=mae(pred, truth),
                           rmse=rmse(pred, truth), per_station=per_station)],
        metadata={"baseline": kind})
    return report, [dump]


def cmd_evaluate(args) -> int:
    kind, model, extra = load_any(args.checkpoint)
    pair, _, _ = _load_data(args.data)
    params = extra.get("params", {})
    data_p = {**DATA_DEFAULTS, **params.get("data", {})}
    pair = _apply_filter(pair, data_p["filter_threshold"])
    tau = extra.get("tau") or params.get("model", {}).get("tau", 12)
    _check_stations(extra, pair, args.checkpoint, args.data)
    run_dir = open_run_dir(args.out, "evaluate", args.force)
    prep = prepare(pair, tau=tau, test_days=data_p["test_days"],
                   val_fraction=data_p["val_fraction"],
                   norms=_restore_norms(extra) or None)
    role = extra.get("role", "sparse")
    seed = params.get("training", {}).get("seed", 0)
    if kind in BASELINES:
        report, dumps = _baseline_report(kind, model, extra, prep, role)
    else:
        report, dumps = evaluate_forecaster(model, prep, role=role, seed=seed)

    report_csv = run_dir / "report.csv"
    with open(report_csv, "w") as fh:
        fh.write("spec,mode,seed,MAE,RMSE\n")
        for m in report.modes:
            fh.write(f"{report.label},{m.mode},{report.seed},"
                     f"{m.mae!r},{m.rmse!r}\n")
    files = [report_csv]
    for dump in dumps:
        csv_path = run_dir / f"predictions_{dump.role}.csv"
        dump.to_csv(csv_path)
        files.append(csv_path)
        files.append(plot_predictions(dump, run_dir / f"predictions_{dump.role}.png"))
    write_run_files(run_dir, "evaluate", params or {"checkpoint_kind": kind}, files)
    for m in report.modes:
        print(f"{report.label} on {m.mode}: MAE {m.mae:.4f}, RMSE {m.rmse:.4f} "
              f"(passengers/hour)")
    print(f"wrote {report_csv}")
    return 0


def _read_window(path, series_label, stations, tau, step_hours):
    series = ingest_csv(path, mode=series_label, step_hours=step_hours)
    if list(series.stations) != list(stations):
        raise DataError(
            f"data: window file {path} stations {series.stations[:4]}... do not "
            f"match the checkpoint's {list(stations)[:4]}...")
    if series.n_steps < tau:
        raise DataError(
            f"data: window file {path} has {series.n_steps} steps; need tau={tau}")
    return series


def cmd_predict(args) -> int:
    kind, model, extra = load_any(args.checkpoint)
    tau = extra.get("tau") or extra.get("params", {}).get("model", {}).get("tau", 12)
    step_hours = extra.get("step_hours", 1.0)
    stations = extra.get("stations", {})
    modes = extra.get("modes", {})
    role = extra.get("role", "sparse")
    norms = _restore_norms(extra)
    multi = False
    if kind in MODEL_KINDS:
        multi = ModelSpec.from_dict(extra["params"]["model"]).multi_task

    if multi:
        if not args.window_csv_sparse:
            raise ConfigError(
                "config: this checkpoint is multi-task; pass --window-csv for the "
                "intensive mode and --window-csv-sparse for the sparse mode")
        win_r = _read_window(args.window_csv, modes.get("intensive", "intensive"),
                             stations["intensive"], tau, step_hours)
        win_s = _read_window(args.window_csv_sparse, modes.get("sparse", "sparse"),
                             stations["sparse"], tau, step_hours)
        x_r = norms["intensive"].apply(win_r.values[-tau:])
        x_s = norms["sparse"].apply(win_s.values[-tau:])
        pred_r, pred_s = model.predict(x_r, x_s)
        outputs = [("intensive", win_r, norms["intensive"].invert(pred_r)),
                   ("sparse", win_s, norms["sparse"].invert(pred_s))]
    else:
        win = _read_window(args.window_csv, modes.get(role, role),
                           stations.get(role, []), tau, step_hours)
        if kind == "HA":
            hours = win.hour_of_day()
            next_hour = float((hours[-1] + step_hours) % 24.0)
            pred = model.predict_hour(next_hour)
        elif kind == "LR":
            pred = model.predict(win.values[-tau:])
        else:
            pred = norms[role].invert(model.predict(norms[role].apply(
                win.values[-tau:])))
        outputs = [(role, win, pred)]

    lines = ["timestamp,mode,station_id,prediction"]
    for role_name, win, pred in outputs:
        stamp = win.start + timedelta(hours=float(win.n_steps * win.step_hours))
        text = stamp.isoformat(sep=" ")
        for j, station in enumerate(win.stations):
            lines.append(f"{text},{win.mode},{station},{float(pred[j])!r}")
    body = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(body)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(body)
    return 0


def cmd_compare(args) -> int:
    params = resolve_params(args, load_config_file(args.config))
    pair, _, _ = _load_data(args.data)
    pair = _apply_filter(pair, params["data"]["filter_threshold"])
    run_dir = open_run_dir(args.out, "compare", args.force)
    prep = prepare(pair, tau=params["model"]["tau"],
                   test_days=params["data"]["test_days"],
                   val_fraction=params["data"]["val_fraction"])
    defaults = _model_spec(params) if params["model"]["kind"] in MODEL_KINDS \
        else None
    entries = []
    for kind in args.specs:
        if kind in BASELINES:
            entries.append(kind)
        else:
            base = defaults if defaults is not None else ModelSpec(kind)
            entries.append(replace(base, kind=kind))
    result = compare(entries, prep, _train_config(params), seeds=args.seeds,
                     role=params["data"]["role"], jobs=args.jobs)
    run_params = {**params, "specs": list(args.specs), "seeds": list(args.seeds)}
    runs_csv = run_dir / "runs.csv"
    summary_csv = run_dir / "summary.csv"
    result.to_csv(runs_csv)
    result.summary_to_csv(summary_csv)
    files = [runs_csv, summary_csv,
             plot_comparison(result.summary, run_dir / "comparison.png")]
    write_run_files(run_dir, "compare", run_params, files)
    print(result.format_table())
    for note in result.notes:
        print(f"note: {note}", file=sys.stderr)
    print(f"wrote {runs_csv}")
    return 0


def cmd_sweep_gamma(args) -> int:
    params = resolve_params(args, load_config_file(args.config))
    pair, _, _ = _load_data(args.data)
    pair = _apply_filter(pair, params["data"]["filter_threshold"])
    run_dir = open_run_dir(args.out, "sweep-gamma", args.force)
    prep = prepare(pair, tau=params["model"]["tau"],
                   test_days=params["data"]["test_days"],
                   val_fraction=params["data"]["val_fraction"])
    if params["model"]["kind"] in BASELINES:
        raise ConfigError("config: the gamma sweep trains the adaptive model; "
                          "model.kind must be a network kind")
    base = _model_spec(params)
    if base.kind != "MATURE":
        base = replace(base, kind="MATURE")
    result = sweep_gamma(args.grid, prep, _train_config(params),
                         seeds=args.seeds, jobs=args.jobs, defaults=base)
    run_params = {**params, "grid": [float(g) for g in args.grid],
                  "seeds": list(args.seeds)}
    runs_csv = run_dir / "sweep_runs.csv"
    summary_csv = run_dir / "sweep_summary.csv"
    result.to_csv(runs_csv)
    result.summary_to_csv(summary_csv)
    files = [runs_csv, summary_csv, plot_sweep(result.summary, run_dir / "sweep.png")]
    write_run_files(run_dir, "sweep-gamma", run_params, files)
    print(result.format_table())
    for note in result.notes:
        print(f"note: {note}", file=sys.stderr)
    print(f"wrote {summary_csv}")
    return 0


def _parse_dims(text: str) -> dict:
    mapping = {"h": "n_hidden", "k": "n_segments", "s": "segment_size",
               "tau": "tau", "nr": "n_r", "ns": "n_s"}
    dims = {}
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if "=" not in token:
            raise ConfigError(f"config: dims entries look like h=6, got {token!r}")
        key, _, value = token.partition("=")
        key = key.strip().lower()
        if key not in mapping:
            raise ConfigError(
                f"config: unknown dim {key!r}; known: {', '.join(mapping)}")
        dims[mapping[key]] = int(value)
    return dims


def cmd_gradcheck(args) -> int:
    kinds = sorted(TRAINABLE_KINDS) if args.model is None else [args.model]
    dims = _parse_dims(args.dims) if args.dims else {}
    failed = []
    for kind in kinds:
        report = check_gradients(kind, seed=args.seed, tolerance=args.tolerance,
                                 **dims)
        name, worst = report.worst
        print(f"== {kind} ==")
        print(report.format())
        print(f"   worst {worst:.3e} at {name} (tolerance {args.tolerance:g})")
        if not report.passed:
            failed.append(kind)
    if failed:
        print(f"E_GRADCHECK: gradient check failed for {', '.join(failed)}",
              file=sys.stderr)
        return 1
    return 0


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mature",
        description="Memory-augmented multi-task forecasting experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="synthesize a two-mode demand dataset")
    gen.add_argument("--out", help="run directory (default $MATURE_RUN_ROOT/generate)")
    gen.add_argument("--n-intensive", type=_positive_int, default=100)
    gen.add_argument("--n-sparse", type=_positive_int, default=10)
    gen.add_argument("--days", type=_positive_int, default=90)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--coupling", type=_unit_float, default=0.8)
    gen.add_argument("--noise", type=_unit_float, default=1.0)
    gen.add_argument("--force", action="store_true")
    gen.set_defaults(func=cmd_generate)

    def add_common(p, with_model=True):
        p.add_argument("--data", required=True, help="dataset container from generate")
        p.add_argument("--out", help="run directory")
        p.add_argument("--config", help="JSON config file (sections model/training/data)")
        if with_model:
            p.add_argument("--model", type=_kind, help="model kind")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--epochs", type=_positive_int, default=None)
        p.add_argument("--batch-size", dest="batch_size", type=_positive_int,
                       default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--weight-decay", dest="weight_decay", type=float,
                       default=None)
        p.add_argument("--patience", type=int, default=None)
        p.add_argument("--clip-norm", dest="clip_norm", type=float, default=None)
        p.add_argument("--epsilon", type=_unit_float, default=None,
                       help="loss weight on the intensive mode")
        p.add_argument("--gamma", type=_unit_float, default=None,
                       help="memory blend weight")
        p.add_argument("--hidden", type=_positive_int, default=None)
        p.add_argument("--tau", type=_positive_int, default=None)
        p.add_argument("--segments", type=_positive_int, default=None)
        p.add_argument("--segment-size", dest="segment_size", type=_positive_int,
                       default=None)
        p.add_argument("--test-days", dest="test_days", type=_positive_int,
                       default=None)
        p.add_argument("--val-fraction", dest="val_fraction", type=_unit_float,
                       default=None)
        p.add_argument("--role", choices=("intensive", "sparse"), default=None,
                       help="mode single-task models train on")
        p.add_argument("--filter-threshold", dest="filter_threshold", type=float,
                       default=None)
        p.add_argument("--force", action="store_true")

    tr = sub.add_parser("train", help="train one model and write a checkpoint")
    add_common(tr)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", help="run directory")
    ev.add_argument("--force", action="store_true")
    ev.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("predict", help="one-step forecast from a window CSV")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--window-csv", dest="window_csv", required=True,
                    help="CSV of at least tau steps (timestamp,station_id,boardings)")
    pr.add_argument("--window-csv-sparse", dest="window_csv_sparse",
                    help="sparse-mode window for multi-task checkpoints")
    pr.add_argument("--out", help="write predictions here instead of stdout")
    pr.set_defaults(func=cmd_predict)

    cp = sub.add_parser("compare", help="train several kinds and tabulate errors")
    add_common(cp, with_model=False)
    cp.add_argument("--model", type=_kind, default=None, help=argparse.SUPPRESS)
    cp.add_argument("--specs", type=_kind_list,
                    default=list(("HA", "LR", "MARN", "MARN-S", "MATURE")),
                    help="comma-separated kinds (default HA,LR,MARN,MARN-S,MATURE)")
    cp.add_argument("--seeds", type=_seed_list, default=[0, 1, 2, 3, 4])
    cp.add_argument("--jobs", type=_positive_int, default=1)
    cp.set_defaults(func=cmd_compare)

    sw = sub.add_parser("sweep-gamma", help="sensitivity of the memory blend weight")
    add_common(sw, with_model=False)
    sw.add_argument("--model", type=_kind, default=None, help=argparse.SUPPRESS)
    sw.add_argument("--grid", type=_grid, default=_grid("0:1:0.1"),
                    help="start:stop:step or comma list (default 0:1:0.1)")
    sw.add_argument("--seeds", type=_seed_list, default=[0, 1, 2, 3, 4])
    sw.add_argument("--jobs", type=_positive_int, default=1)
    sw.set_defaults(func=cmd_sweep_gamma)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    gc.add_argument("--model", type=_kind, default=None,
                    help="one trainable kind (default: all eight)")
    gc.add_argument("--tolerance", type=float, default=1e-4)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--dims", help="toy dims, e.g. h=6,K=3,S=4,tau=4,nr=3,ns=2")
    gc.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "gradcheck" and args.model in BASELINES:
        print("E_SPEC: gradcheck applies to trainable kinds only", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except tuple(cls for cls, _ in _ERROR_CODES) as exc:
        for cls, code in _ERROR_CODES:
            if isinstance(exc, cls):
                print(f"{code}: {exc}", file=sys.stderr)
                return 1
        raise  # unreachable


if __name__ == "__main__":
    sys.exit(main())
