"""Shape-tagged array encoding shared by dataset, checkpoint and report files.

Arrays are stored as ``{"shape": [...], "data": [...]}`` with the data
flattened row-major. Floats go through :func:`json.dumps`, which writes the
shortest decimal that round-trips, so decoding is bit-exact.
"""

from __future__ import annotations

import json

import numpy as np


class FormatError(ValueError):
    """A file or record does not follow the expected layout."""


def encode_array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": [float(x) for x in a.reshape(-1)]}


def decode_array(obj, field: str = "array", ndim: int | None = None) -> np.ndarray:
    if not isinstance(obj, dict) or "shape" not in obj or "data" not in obj:
        raise FormatError(f"{field}: expected an object with 'shape' and 'data'")
    shape, data = obj["shape"], obj["data"]
    if not isinstance(shape, list) or not all(isinstance(s, int) and s >= 0 for s in shape):
        raise FormatError(f"{field}: bad shape {shape!r}")
    if ndim is not None and len(shape) != ndim:
        raise FormatError(f"{field}: expected {ndim} dimensions, got shape {shape}")
    if not isinstance(data, list):
        raise FormatError(f"{field}: 'data' must be a list")
    if len(data) != int(np.prod(shape, dtype=np.int64)):
        raise FormatError(f"{field}: shape {shape} needs {int(np.prod(shape))} values, got {len(data)}")
    try:
        arr = np.array(data, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{field}: non-numeric data ({exc})") from None
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{field}: non-finite values")
    return arr.reshape(shape)


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"
