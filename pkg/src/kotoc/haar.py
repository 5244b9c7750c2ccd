"""Haar-random unitaries and counter-based random streams."""

from __future__ import annotations

import numpy as np

from .errors import SizeLimitError

MAX_HAAR_DIM = 4096


def stream(base_seed: int, *counters: int) -> np.random.Generator:
    """Independent generator for the counter tuple, e.g. (base_seed, sample, step)."""
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=tuple(int(c) for c in counters))
    return np.random.Generator(np.random.PCG64(ss))


def sample_haar(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar unitary from the QR decomposition of a complex Gaussian matrix.

    Columns of Q are rescaled by the phases of the diagonal of R, which makes the
    distribution exactly Haar.
    """
    if dim > MAX_HAAR_DIM:
        raise SizeLimitError(f"Haar dimension {dim} exceeds {MAX_HAAR_DIM}")
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    diag = np.diagonal(r)
    return q * (diag / np.abs(diag))
