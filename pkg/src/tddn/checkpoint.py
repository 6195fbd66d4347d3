"""Self-contained binary checkpoints.

Layout: an 8-byte magic, a little-endian u32 header length, a compact
JSON header, then the raw float64 payload. The header carries the model
shape, the data subset and column selection, the fitted scaler bounds
and the label cap, so a checkpoint can be evaluated without the
training-time configuration. The payload is hashed; loading verifies
the digest before touching any array.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import DegradationNetwork, ModelConfig, load_state_arrays, state_arrays
from .preprocess import LabelPolicy, Scaler, SensorSelection

MAGIC = b"TDDNCKPT"
FORMAT_VERSION = 1

_SCALER_MIN = "scaler.min"
_SCALER_MAX = "scaler.max"


class CheckpointError(Exception):
    """Raised when a checkpoint file is malformed or corrupted."""


@dataclass(frozen=True, eq=False)
class LoadedCheckpoint:
    model: DegradationNetwork
    scaler: Scaler
    selection: SensorSelection
    policy: LabelPolicy
    subset_id: str


def _config_to_dict(config: ModelConfig) -> dict:
    return {
        "window": config.window,
        "n_features": config.n_features,
        "conv_channels": list(config.conv_channels),
        "kernel": config.kernel,
        "attention_hidden": config.attention_hidden,
        "regressor_hidden": config.regressor_hidden,
    }


def _config_from_dict(raw: dict) -> ModelConfig:
    try:
        return ModelConfig(
            window=int(raw["window"]),
            n_features=int(raw["n_features"]),
            conv_channels=tuple(int(c) for c in raw["conv_channels"]),
            kernel=int(raw["kernel"]),
            attention_hidden=int(raw["attention_hidden"]),
            regressor_hidden=int(raw["regressor_hidden"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad model config in header: {exc}") from exc


def save_checkpoint(
    path: str | Path,
    model: DegradationNetwork,
    scaler: Scaler,
    selection: SensorSelection,
    policy: LabelPolicy,
    subset_id: str,
) -> None:
    """Write model parameters plus everything needed to reuse them."""
    arrays = state_arrays(model)
    arrays[_SCALER_MIN] = scaler.col_min
    arrays[_SCALER_MAX] = scaler.col_max
    order = list(arrays.keys())
    payload = b"".join(
        np.ascontiguousarray(arrays[name], dtype="<f8").tobytes() for name in order
    )
    header = {
        "format_version": FORMAT_VERSION,
        "subset_id": subset_id,
        "columns": list(selection.columns),
        "r_max": policy.r_max,
        "config": _config_to_dict(model.config),
        "arrays": [{"name": name, "shape": list(arrays[name].shape)} for name in order],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_checkpoint(path: str | Path) -> LoadedCheckpoint:
    """Read a checkpoint and rebuild the model it describes."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing checkpoint: {path}")
    blob = path.read_bytes()
    if len(blob) < len(MAGIC) + 4:
        raise CheckpointError(f"{path}: truncated before header")
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    (header_len,) = struct.unpack("<I", blob[len(MAGIC) : len(MAGIC) + 4])
    header_start = len(MAGIC) + 4
    if len(blob) < header_start + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[header_start : header_start + header_len])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {header.get('format_version')!r}"
        )

    payload = blob[header_start + header_len :]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header.get("payload_sha256"):
        raise CheckpointError(f"{path}: payload checksum mismatch")

    entries = header.get("arrays")
    if not isinstance(entries, list):
        raise CheckpointError(f"{path}: header lists no arrays")
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in entries:
        try:
            name = entry["name"]
            shape = tuple(int(s) for s in entry["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: bad array entry {entry!r}") from exc
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{path}: payload too short for array {name!r}")
        flat = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        arrays[name] = flat.reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing payload bytes")

    try:
        subset_id = header["subset_id"]
        columns = tuple(header["columns"])
        r_max = int(header["r_max"])
        col_min = arrays.pop(_SCALER_MIN)
        col_max = arrays.pop(_SCALER_MAX)
    except KeyError as exc:
        raise CheckpointError(f"{path}: header missing {exc}") from exc

    config = _config_from_dict(header.get("config", {}))
    try:
        selection = SensorSelection(subset_id=subset_id, columns=columns)
        policy = LabelPolicy(r_max=r_max)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    if selection.n_columns != config.n_features:
        raise CheckpointError(
            f"{path}: {selection.n_columns} columns for {config.n_features} model features"
        )
    scaler = Scaler(columns=columns, col_min=col_min, col_max=col_max)

    model = DegradationNetwork(config, rng=np.random.default_rng(0))
    try:
        load_state_arrays(model, arrays)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return LoadedCheckpoint(
        model=model,
        scaler=scaler,
        selection=selection,
        policy=policy,
        subset_id=subset_id,
    )
