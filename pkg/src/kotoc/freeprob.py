"""Moments, free cumulants and the free-probability steady state of k-OTOCs.

The state is the normalized trace phi(x) = Tr(x)/d. Inside every block the operators are
multiplied in ascending element order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from .errors import DimensionError, SizeLimitError
from .ncpart import NcPartition, enumerate_nc, kreweras, lattice

MAX_FREEPROB_K = 5


def _mats(ops, k: int | None = None) -> list[np.ndarray]:
    mats = [np.asarray(getattr(o, "entries", o), dtype=complex) for o in ops]
    if k is not None and len(mats) != k:
        raise DimensionError(f"expected {k} operators, got {len(mats)}")
    d = mats[0].shape[0]
    if any(m.shape != (d, d) for m in mats):
        raise DimensionError("operators must share one square dimension")
    return mats


def phi(x: np.ndarray) -> complex:
    return complex(np.trace(x)) / x.shape[0]


def moment(nu: NcPartition, ops) -> complex:
    """Product over blocks of nu of phi(ordered block product)."""
    mats = _mats(ops, nu.k)
    val = 1.0 + 0j
    for block in nu.blocks:
        val *= phi(reduce(np.matmul, [mats[i - 1] for i in block]))
    return val


def free_cumulant(sigma: NcPartition, ops) -> complex:
    """Moebius inversion sum_{nu <= sigma} moment(nu) mu(nu, sigma)."""
    lat = lattice(sigma.k)
    j = lat.index[sigma]
    return complex(sum(moment(lat.elements[i], ops) * lat.mobius[i, j] for i in lat.down[j]))


@dataclass(frozen=True)
class MomentTable:
    k: int
    values: dict


@dataclass(frozen=True)
class CumulantTable:
    k: int
    values: dict


def moment_table(ops) -> MomentTable:
    k = len(ops)
    return MomentTable(k, {nu: moment(nu, ops) for nu in enumerate_nc(k)})


def cumulant_table(ops, moments: MomentTable | None = None) -> CumulantTable:
    k = len(ops)
    mom = moments or moment_table(ops)
    lat = lattice(k)
    vals = {}
    for j, sigma in enumerate(lat.elements):
        vals[sigma] = complex(sum(mom.values[lat.elements[i]] * lat.mobius[i, j] for i in lat.down[j]))
    return CumulantTable(k, vals)


def moments_from_cumulants(cum: CumulantTable) -> MomentTable:
    """Zeta transform: phi_nu = sum_{sigma <= nu} kappa_sigma."""
    lat = lattice(cum.k)
    vals = {}
    for j, nu in enumerate(lat.elements):
        vals[nu] = complex(sum(cum.values[lat.elements[i]] for i in lat.down[j]))
    return MomentTable(cum.k, vals)


def _check_k(k: int) -> None:
    if not 1 <= k <= MAX_FREEPROB_K:
        raise SizeLimitError(f"free-probability tables support 1 <= k <= {MAX_FREEPROB_K}")


def roundtrip_check(k: int, ops) -> float:
    """|phi_full - sum over NC(k) of kappa_sigma|."""
    _check_k(k)
    cum = cumulant_table(_mats(ops, k))
    full = moment(NcPartition.full_cycle(k), ops)
    return float(abs(full - sum(cum.values.values())))


def steady_state_terms(k: int, a_ops, b_ops) -> dict:
    """Per-partition terms kappa_sigma(a) * phi_{sigma*}(b)."""
    _check_k(k)
    a = _mats(a_ops, k)
    b = _mats(b_ops, k)
    cum = cumulant_table(a)
    return {sigma: cum.values[sigma] * moment(kreweras(sigma), b) for sigma in enumerate_nc(k)}


def steady_state_prediction(k: int, a_ops, b_ops) -> complex:
    """sum_sigma kappa_sigma(a_1..a_k) phi_{sigma*}(b_1..b_k)."""
    return complex(sum(steady_state_terms(k, a_ops, b_ops).values()))
