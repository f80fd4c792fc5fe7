"""Checkpoint container shared by controller and shared-pool snapshots.

Plain JSON: named float64 arrays stored row-major with their shapes, plus a
metadata block. Floats are emitted with Python's shortest round-trip repr,
so save -> load -> save is byte-identical and arrays round-trip exactly.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "naslab-checkpoint-v1"


def save_arrays(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    doc = {
        "format": FORMAT,
        "kind": kind,
        "meta": meta,
        "arrays": {
            name: {"shape": list(a.shape), "data": [float(x) for x in np.asarray(a, dtype=np.float64).ravel()]}
            for name, a in arrays.items()
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_arrays(path):
    """Return (kind, meta, arrays)."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path}: not a {FORMAT} file")
    arrays = {
        name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["arrays"].items()
    }
    return doc["kind"], doc["meta"], arrays
