"""Deterministic parameter initialization.

Every parameter draws from its own RNG stream keyed by (seed, sha256 of
the parameter name).  Two models that share a parameter name therefore
initialize it identically under the same seed, regardless of what other
parameters either model owns.  Variant-equivalence checks (for example a
two-cell model with an extra adaption block against the same model
without it) rely on this.
"""
from __future__ import annotations

import hashlib

import numpy as np

from .autodiff import Parameter


def param_rng(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int(w) for w in np.frombuffer(digest[:16], dtype="<u4")]
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + words))


def uniform_param(seed: int, name: str, shape, bound: float) -> Parameter:
    """uniform(-bound, bound), seeded per parameter name."""
    rng = param_rng(seed, name)
    return Parameter(name, rng.uniform(-bound, bound, size=shape))


def zeros_param(name: str, shape) -> Parameter:
    return Parameter(name, np.zeros(shape))
