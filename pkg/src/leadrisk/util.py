"""Small numeric and serialization helpers used throughout the package."""
from __future__ import annotations

import hashlib
import json

import numpy as np


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


def softplus(z):
    # log(1 + e^z) without overflow
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def derive_seed(*parts: int) -> int:
    """Deterministic child seed from a master seed and stream indices.

    Used to give every (fold, spec) task and every tree its own RNG stream so
    results do not depend on scheduling order.
    """
    ss = np.random.SeedSequence(list(parts))
    return int(ss.generate_state(1, np.uint64)[0])


def rng_for(*parts: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(parts)))


def canonical_json(obj) -> str:
    """JSON text with sorted keys and round-trip-exact floats."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def fmt_float(x) -> str:
    """Shortest decimal string that parses back to the same float."""
    if x is None:
        return ""
    xf = float(x)
    if np.isnan(xf):
        return "nan"
    return repr(xf)
