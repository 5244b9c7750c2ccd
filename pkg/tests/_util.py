"""Shared helpers for the test suite."""

import numpy as np

from kotoc.channel import du_perturbed, haar_random


def herm(d, rng, traceless=False):
    z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    x = (z + z.conj().T) / 2
    if traceless:
        x -= np.trace(x) / d * np.eye(d)
    return x / np.sqrt(np.trace(x @ x).real / d)


def ops(d, k, rng, traceless=False):
    return [herm(d, rng, traceless) for _ in range(k)]


def gates(d, n=3):
    return [haar_random(d, d, seed=s) for s in range(n)]


def perturbed(d, seed=1):
    return du_perturbed(d, J=0.3, eps=0.3, seed=seed)
