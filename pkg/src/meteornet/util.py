"""Shared error types and small helpers used across the package."""
from __future__ import annotations

import os

import numpy as np


class InputError(ValueError):
    """Invalid argument, reference, or shape supplied by the caller."""


class FormatError(InputError):
    """Malformed or unsupported on-disk data (bad magic, truncated payload)."""


class ResourceLimitError(InputError):
    """Requested configuration exceeds the built-in resource bounds."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


def as_float_array(values, name: str, shape=None) -> np.ndarray:
    """Convert to a float64 array, checking finiteness and an optional shape.

    ``shape`` entries of ``None`` match any extent.
    """
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None:
        if arr.ndim != len(shape):
            raise InputError(f"{name}: expected {len(shape)} dimensions, got {arr.ndim}")
        for axis, want in enumerate(shape):
            if want is not None and arr.shape[axis] != want:
                raise InputError(f"{name}: expected shape {shape}, got {arr.shape}")
    if arr.size and not np.isfinite(arr).all():
        raise InputError(f"{name}: contains non-finite values")
    return arr


def worker_count() -> int:
    """Worker cap from the METEOR_THREADS environment variable (default 1)."""
    raw = os.environ.get("METEOR_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"METEOR_THREADS must be an integer, got {raw!r}")
    return max(1, n)
