"""Parameter checkpoint archive: format tag gsan-ckpt-v1.

A checkpoint is a zip archive holding `manifest.json` (format tag, run config
echo, model dims, and a tensor table of names/shapes/dtypes) plus
`tensors.bin`, the raw little-endian payloads concatenated in table order.
"""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np

from .config import RunConfig
from .layers import GsanParams, init_params

FORMAT_TAG = "gsan-ckpt-v1"


class CheckpointError(Exception):
    pass


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float64:
        return "f64"
    if arr.dtype == np.float32:
        return "f32"
    raise CheckpointError(f"unsupported tensor dtype {arr.dtype}")


_NP_DTYPES = {"f64": "<f8", "f32": "<f4"}


def save_checkpoint(path, params: GsanParams, config: RunConfig) -> None:
    table = []
    payload = bytearray()
    for name, arr in params.named():
        arr = np.ascontiguousarray(arr)
        tag = _dtype_tag(arr)
        table.append({"name": name, "shape": list(arr.shape), "dtype": tag})
        payload += arr.astype(_NP_DTYPES[tag]).tobytes()
    manifest = {
        "format": FORMAT_TAG,
        "config": config.to_dict(),
        "n_features": params.n_features,
        "n_classes": params.n_classes,
        "tensors": table,
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, sort_keys=True, indent=1))
        zf.writestr("tensors.bin", bytes(payload))


def load_checkpoint(path) -> tuple[GsanParams, RunConfig]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"no checkpoint at {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            payload = zf.read("tensors.bin")
    except (zipfile.BadZipFile, KeyError) as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from None
    if manifest.get("format") != FORMAT_TAG:
        raise CheckpointError(f"unknown checkpoint format {manifest.get('format')!r}")
    config = RunConfig.from_dict(manifest["config"])
    params = init_params(config, manifest["n_features"], manifest["n_classes"],
                         np.random.default_rng(0),
                         dtype=np.float64 if config.dtype == "f64" else np.float32)
    loaded: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest["tensors"]:
        dt = np.dtype(_NP_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dt.itemsize
        arr = np.frombuffer(payload[offset:offset + nbytes], dtype=dt).reshape(entry["shape"])
        loaded[entry["name"]] = arr.astype(dt.newbyteorder("="))
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError("tensor payload length does not match the manifest")

    def fill(structure_params: GsanParams) -> None:
        for name, arr in structure_params.named():
            if name not in loaded:
                raise CheckpointError(f"checkpoint is missing tensor {name!r}")
            if tuple(arr.shape) != tuple(loaded[name].shape):
                raise CheckpointError(
                    f"tensor {name!r} has shape {loaded[name].shape}, expected {arr.shape}")
            arr[...] = loaded[name]

    fill(params)
    return params, config
