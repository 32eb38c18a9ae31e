"""Deterministic binary containers for checkpoints and cached arrays.

Layout: an 8-byte magic, a little-endian uint64 header length, a compact
JSON header with sorted keys, then each array's raw bytes little-endian
in header order. Identical inputs produce identical bytes, so artifact
equality can be checked with a file hash.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

CHECKPOINT_MAGIC = b"MATCKPT1"
DATASET_MAGIC = b"MATDATA1"

_DTYPES = {"float64": "<f8", "int64": "<i8"}


def write_container(path, magic: bytes, header: dict, arrays: list[np.ndarray]) -> None:
    if len(magic) != 8:
        raise CheckpointError(f"store: magic must be 8 bytes, got {len(magic)}")
    entries = []
    blobs = []
    for arr in arrays:
        arr = np.asarray(arr)
        if arr.dtype.name not in _DTYPES:
            raise CheckpointError(f"store: unsupported dtype {arr.dtype.name}; use float64 or int64")
        entries.append({"shape": list(arr.shape), "dtype": arr.dtype.name})
        blobs.append(np.ascontiguousarray(arr, dtype=_DTYPES[arr.dtype.name]).tobytes())
    doc = {"header": header, "arrays": entries}
    payload = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def read_container(path, magic: bytes) -> tuple[dict, list[np.ndarray]]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"store: cannot read {path}: {exc}") from exc
    if len(raw) < 16 or raw[:8] != magic:
        raise CheckpointError(
            f"store: {path} is not a {magic.decode('ascii', 'replace')} container"
        )
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + hlen:
        raise CheckpointError(f"store: {path} is truncated (header)")
    try:
        doc = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"store: {path} has a corrupt header: {exc}") from exc
    arrays = []
    offset = 16 + hlen
    for entry in doc["arrays"]:
        shape = tuple(entry["shape"])
        dtype = np.dtype(_DTYPES[entry["dtype"]])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        if len(raw) < offset + nbytes:
            raise CheckpointError(f"store: {path} is truncated (arrays)")
        arr = np.frombuffer(raw[offset : offset + nbytes], dtype=dtype).reshape(shape)
        arrays.append(arr.astype(entry["dtype"], copy=True))
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"store: {path} has {len(raw) - offset} trailing bytes")
    return doc["header"], arrays


def save_checkpoint(path, forecaster, extra: dict | None = None) -> None:
    """Write a bit-exact snapshot of a forecaster's parameters."""
    from .model import Forecaster  # local import to avoid a cycle

    assert isinstance(forecaster, Forecaster)
    params = forecaster.parameters()
    header = {
        "family": "network",
        "spec": forecaster.spec.to_dict(),
        "seed": forecaster.seed,
        "n_r": forecaster.n_r,
        "n_s": forecaster.n_s,
        "names": [p.name for p in params],
        "extra": extra or {},
    }
    write_container(path, CHECKPOINT_MAGIC, header, [p.data for p in params])


def save_baseline(path, kind: str, model, extra: dict | None = None) -> None:
    """Write a fitted HA or LR baseline as a checkpoint container."""
    header = {"family": "baseline", "kind": kind, "extra": extra or {}}
    if kind == "HA":
        arrays = [model.bins, model.table]
    elif kind == "LR":
        header["used_ridge"] = bool(model.used_ridge)
        arrays = [model.W, model.b]
    else:
        raise CheckpointError(f"store: unknown baseline kind {kind!r}")
    write_container(path, CHECKPOINT_MAGIC, header, arrays)


def _load_network(path, header, arrays):
    from .model import ModelSpec, build

    spec = ModelSpec.from_dict(header["spec"])
    model = build(spec, header["n_r"], header["n_s"], header["seed"])
    params = model.parameters()
    names = [p.name for p in params]
    if names != header["names"]:
        raise CheckpointError(
            f"store: {path} parameter names do not match the rebuilt model; "
            f"expected {names[:3]}..., found {header['names'][:3]}..."
        )
    for p, arr in zip(params, arrays):
        if p.data.shape != arr.shape:
            raise CheckpointError(
                f"store: {path} shape mismatch for {p.name}: {arr.shape} vs {p.data.shape}"
            )
        p.data[...] = arr
    return model, header["extra"]


def _load_baseline(path, header, arrays):
    from .baselines import HistoricalAverage, LinearForecaster

    kind = header["kind"]
    if kind == "HA":
        bins, table = arrays
        return kind, HistoricalAverage(bins=bins, table=table), header["extra"]
    if kind == "LR":
        W, b = arrays
        return kind, LinearForecaster(W=W, b=b, used_ridge=header["used_ridge"]), \
            header["extra"]
    raise CheckpointError(f"store: {path} has unknown baseline kind {kind!r}")


def load_checkpoint(path):
    """Rebuild the forecaster recorded at `path`; returns (model, extra)."""
    header, arrays = read_container(path, CHECKPOINT_MAGIC)
    if header.get("family", "network") != "network":
        raise CheckpointError(
            f"store: {path} holds a baseline; use load_any to open it")
    return _load_network(path, header, arrays)


def load_any(path):
    """Open any checkpoint; returns (kind, model, extra).

    `kind` is the model kind string for networks ("LSTM", "MATURE", ...)
    or the baseline name ("HA", "LR").
    """
    header, arrays = read_container(path, CHECKPOINT_MAGIC)
    if header.get("family", "network") == "network":
        model, extra = _load_network(path, header, arrays)
        return model.spec.kind, model, extra
    return _load_baseline(path, header, arrays)
