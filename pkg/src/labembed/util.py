"""Shared numeric and bookkeeping helpers."""

from __future__ import annotations

import hashlib

import numpy as np


def sigmoid(z):
    """Numerically stable logistic function, elementwise."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    if out.ndim == 0:
        return float(out)
    return out


def log_sigmoid(z):
    """log(sigmoid(z)) computed without overflow, elementwise."""
    z = np.asarray(z, dtype=float)
    # log sigma(z) = -log(1 + exp(-z)) = min(z, 0) - log1p(exp(-|z|))
    return np.minimum(z, 0.0) - np.log1p(np.exp(-np.abs(z)))


def derive_seed(seed: int, label: str) -> int:
    """Derive a stable per-stage seed from a global seed and a stage label.

    Hash-based so stages can be re-run independently of one another and the
    result does not depend on platform integer width.
    """
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def bytes_sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
