"""Observable tuples for k-OTOC runs."""

from __future__ import annotations

import numpy as np

from .errors import DomainError
from .haar import stream
from .markov import channel_eigenoperators
from .replica import Gate, load_observable

MODES = ("eigenoperator", "random-traceless", "random", "eigen-plus-identity")


def random_hermitian(d: int, rng: np.random.Generator, traceless: bool = True) -> np.ndarray:
    """GUE-like Hermitian matrix scaled to Tr(x^2)/d = 1."""
    z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    x = (z + z.conj().T) / 2
    if traceless:
        x -= np.trace(x) / d * np.eye(d)
    return x / np.sqrt(np.trace(x @ x).real / d)


def generate(mode: str, gate: Gate, k: int, *, seed: int = 0, eps: float = 1e-4,
             identical: bool = False) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """(a_ops, b_ops) for one generation mode.

    ``identical`` repeats a single a and a single b on every replica (random modes only).
    ``eigen-plus-identity`` shifts only the first a by eps times the identity.
    """
    d = gate.d_a
    if mode in ("eigenoperator", "eigen-plus-identity"):
        _, a, b = channel_eigenoperators(gate)
        a_ops, b_ops = [a.copy() for _ in range(k)], [b.copy() for _ in range(k)]
        if mode == "eigen-plus-identity":
            a_ops[0] = a_ops[0] + eps * np.eye(d)
        return a_ops, b_ops
    if mode in ("random-traceless", "random"):
        traceless = mode == "random-traceless"
        rng = stream(seed, 1)
        n = 1 if identical else k
        a = [random_hermitian(d, rng, traceless) for _ in range(n)]
        b = [random_hermitian(d, rng, traceless) for _ in range(n)]
        return (a * k, b * k) if identical else (a, b)
    raise DomainError(f"unknown observable mode {mode!r}; choose from {', '.join(MODES)}")


def from_files(a_paths, b_paths, k: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Load observables from JSON files; a single file is repeated on all k replicas."""
    def load(paths):
        mats = [load_observable(p).entries for p in paths]
        if len(mats) == 1:
            mats = mats * k
        if len(mats) != k:
            raise DomainError(f"need 1 or {k} observable files, got {len(mats)}")
        return mats
    return load(a_paths), load(b_paths)
