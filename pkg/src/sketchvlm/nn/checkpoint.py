"""Flat checkpoint container: weights.bin of little-endian float64 arrays
described by a manifest.json with shapes, config, and step counter."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MANIFEST = "manifest.json"
WEIGHTS = "weights.bin"


def save_checkpoint(
    directory, arrays: dict[str, np.ndarray], config: dict, step: int
) -> None:
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    names = sorted(arrays)
    manifest = {
        "format": "sketchvlm-checkpoint-v1",
        "step": step,
        "config": config,
        "arrays": [
            {"name": n, "shape": list(arrays[n].shape)} for n in names
        ],
    }
    with open(path / MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    with open(path / WEIGHTS, "wb") as fh:
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict, int]:
    path = Path(directory)
    with open(path / MANIFEST) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "sketchvlm-checkpoint-v1":
        raise ValueError(f"unrecognized checkpoint format in {path}")
    raw = (path / WEIGHTS).read_bytes()
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        span = count * 8
        arrays[entry["name"]] = (
            np.frombuffer(raw[offset : offset + span], dtype="<f8")
            .astype(np.float64)
            .reshape(shape)
        )
        offset += span
    if offset != len(raw):
        raise ValueError("weights.bin length does not match manifest")
    return arrays, manifest["config"], manifest["step"]
