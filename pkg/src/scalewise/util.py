"""Shared plumbing: canonical JSON, hashing, thread budget."""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np


def canonical_json(obj) -> str:
    """Serialize with sorted keys and no whitespace so equal values hash equally."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def array_checksum(*arrays: np.ndarray) -> str:
    """SHA-256 over shape, dtype and raw bytes of one or more arrays."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(repr((a.shape, a.dtype.str)).encode("ascii"))
        h.update(a.tobytes())
    return h.hexdigest()


def thread_budget() -> int:
    """Worker cap from SCALEWISE_THREADS; 0 or unset picks a small default."""
    raw = os.environ.get("SCALEWISE_THREADS", "0").strip()
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"SCALEWISE_THREADS must be an integer, got {raw!r}") from exc
    if n < 0:
        raise ValueError("SCALEWISE_THREADS must be >= 0")
    if n == 0:
        return max(1, min(4, os.cpu_count() or 1))
    return n
