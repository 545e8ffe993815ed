"""Flat checkpoints: an ordered list of (name, shape, row-major values).

``.json`` files hold::

    {"format": "exertion-loop-checkpoint/1",
     "tensors": [{"name": "blocks.0.conv1.weight", "shape": [256, 1, 5], "values": [...]}, ...]}

Any other suffix is written as a NumPy ``.npz`` archive with the same ordered
entries (binary, much smaller for the ~1M-parameter encoder).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ShapeError
from .layers import Module

FORMAT = "exertion-loop-checkpoint/1"


def state_entries(module: Module) -> list[tuple[str, np.ndarray]]:
    entries = [(name, p.value) for name, p in module.named_parameters()]
    entries += [(name, b) for name, b in module.named_buffers()]
    return entries


def save_checkpoint(path, entries: list[tuple[str, np.ndarray]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".json":
        doc = {"format": FORMAT, "tensors": [
            {"name": name, "shape": list(arr.shape), "values": [float(v) for v in np.ravel(arr)]}
            for name, arr in entries]}
        path.write_text(json.dumps(doc))
    else:
        with open(path, "wb") as fh:
            np.savez(fh, __order__=np.array([n for n, _ in entries]),
                     **{f"t{i}": np.asarray(a) for i, (_, a) in enumerate(entries)})


def load_checkpoint(path) -> list[tuple[str, np.ndarray]]:
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        if doc.get("format") != FORMAT:
            raise ValueError(f"{path}: unrecognized checkpoint format {doc.get('format')!r}")
        return [(t["name"], np.asarray(t["values"], dtype=np.float64).reshape(t["shape"]))
                for t in doc["tensors"]]
    with np.load(path) as z:
        names = [str(n) for n in z["__order__"]]
        return [(n, z[f"t{i}"]) for i, n in enumerate(names)]


def save_module(module: Module, path) -> None:
    save_checkpoint(path, state_entries(module))


def load_module(module: Module, path) -> Module:
    """Copy checkpoint values into ``module`` (names and shapes must match exactly)."""
    loaded = load_checkpoint(path)
    targets = state_entries(module)
    if [n for n, _ in loaded] != [n for n, _ in targets]:
        raise ShapeError(f"{path}: tensor names do not match the module layout")
    for (name, src), (_, dst) in zip(loaded, targets):
        if src.shape != dst.shape:
            raise ShapeError(f"{name}: checkpoint shape {src.shape} vs module shape {dst.shape}")
        dst[...] = src.astype(dst.dtype)
    return module
