"""Thermodynamic-limit k-OTOC as a sum over multichains of NC(k).

    C(t) = d_A^{-1} d_C^{k-1} sum_chains W_chain (b_full| M_{nu_t sigma_t} ... M_{nu_1 sigma_1} |a_id)

with W_chain the product of W_{nu_i sigma_{i+1}} = d_C^{-k+|nu_i^{-1} sigma_{i+1}|} mu(nu_i, sigma_{i+1}).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import build_channel, diagnose
from .errors import SizeLimitError
from .ncpart import (NcPartition, combined_singletons, cycle_count_rel, enumerate_multichains, lattice,
                     mobius, Multichain)
from .replica import Gate, OperatorCache, apply_M_raw, as_flat, bottom_tensor, top_covector_tensor

MAX_T = 64
MAX_AUDIT_CHAINS = 10 ** 6


def max_k_for(d_a: int) -> int:
    """Memory policy for the series routes."""
    return 5 if d_a <= 2 else 4 if d_a == 3 else 3


@dataclass
class OtocSeries:
    k: int
    t_values: list
    values: np.ndarray
    method: str
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if len(self.t_values) != len(self.values):
            raise ValueError("t_values and values differ in length")

    @property
    def max_imag(self) -> float:
        return float(np.max(np.abs(self.values.imag))) if len(self.values) else 0.0

    def at(self, t: int) -> complex:
        return complex(self.values[self.t_values.index(t)])


@dataclass(frozen=True)
class ChainContribution:
    chain: Multichain
    weight: float
    value: complex
    bound: float
    within_bound: bool


def weingarten_factor(nu: NcPartition, sigma: NcPartition, d_c: int) -> float:
    """d_c^{-k + |nu^{-1} sigma|} mu(nu, sigma)."""
    return float(d_c) ** (-nu.k + cycle_count_rel(nu, sigma)) * mobius(nu, sigma)


def weingarten_matrix(k: int, d_c: int) -> np.ndarray:
    """W[i, j] over lattice indices (canonical order)."""
    lat = lattice(k)
    return lat.mobius * float(d_c) ** (lat.cycles_rel - k)


def check_caps(gate: Gate, k: int, t_max: int) -> None:
    if k < 1 or k > max_k_for(gate.d_a):
        raise SizeLimitError(f"k={k} exceeds the memory policy for d_A={gate.d_a}")
    if t_max < 0 or t_max > MAX_T:
        raise SizeLimitError(f"t_max must lie in 0..{MAX_T}")


def provenance(gate: Gate, **extra) -> dict:
    return {"gate_hash": gate.fingerprint, "d_a": gate.d_a, "d_c": gate.d_c, **extra}


def boundary_flat(a_ops, b_ops):
    """(|a_id) flat, (b_full| flat covector)."""
    return as_flat(bottom_tensor(a_ops)), as_flat(top_covector_tensor(b_ops))


def kotoc_multichain(gate: Gate, a_ops, b_ops, k: int, t_max: int, *, threads: int = 1,
                     strategy: str = "auto", cache: OperatorCache | None = None) -> OtocSeries:
    """C^(k)(t) for t = 0..t_max by depth-first traversal of the multichain tree.

    Each node of the tree holds the partially evolved replica vector of its prefix, so
    common prefixes are evaluated once. The value at t=0 is phi(a_1 b_1 ... a_k b_k).
    """
    check_caps(gate, k, t_max)
    lat = lattice(k)
    wmat = weingarten_matrix(k, gate.d_c)
    bottom, top = boundary_flat(a_ops, b_ops)
    pref = float(gate.d_c) ** (k - 1) / gate.d_a
    els = lat.elements

    def M(nu, sigma, v):
        return apply_M_raw(els[nu], els[sigma], gate, v, strategy=strategy, cache=cache)

    def visit(step, nu, vec, weight, acc):
        if nu == lat.top:
            acc[step] += weight * (top @ vec)
        if step == t_max:
            return
        for sigma in lat.up[nu]:
            w = weight * wmat[nu, sigma]
            for nu2 in lat.up[sigma]:
                visit(step + 1, nu2, M(nu2, sigma, vec), w, acc)

    def branch(nu1):
        acc = np.zeros(t_max + 1, dtype=complex)
        visit(1, nu1, M(nu1, lat.bottom, bottom), 1.0, acc)
        return acc

    total = np.zeros(t_max + 1, dtype=complex)
    if t_max >= 1:
        firsts = list(lat.up[lat.bottom])
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                parts = list(ex.map(branch, firsts))
        else:
            parts = [branch(n) for n in firsts]
        for p in parts:
            total += p
        total *= pref
    total[0] = (top @ bottom) / gate.d_a
    return OtocSeries(k, list(range(t_max + 1)), total, "multichain", provenance(gate, k=k))


def count_multichains(k: int, t: int) -> int:
    from .ncpart import count_multichains as _count
    return _count(k, t)


def _frob(ops) -> float:
    return float(np.prod([np.linalg.norm(np.asarray(getattr(o, "entries", o))) for o in ops]))


def audit_exponent(chain_parts, k: int) -> int:
    """m = min over the chain's partitions of n(s) + n(s*); one shared sequence when k = 1."""
    if k == 1:
        return 1
    return min(combined_singletons(p) for p in chain_parts)


def decay_rate(gate: Gate) -> float:
    """r = max(|lambda|, restricted operator norm of M)."""
    dg = diagnose(gate)
    return max(abs(dg.lambda_sub), dg.restricted_norm)


def chain_audit(gate: Gate, a_ops, b_ops, k: int, t: int, *, slack: float = 1e-12,
                strategy: str = "auto") -> list[ChainContribution]:
    """Weight, boundary-contracted value and per-chain decay bound of every multichain."""
    check_caps(gate, k, t)
    n = count_multichains(k, t)
    if n > MAX_AUDIT_CHAINS:
        raise SizeLimitError(f"{n} chains exceed the audit cap {MAX_AUDIT_CHAINS}")
    r = decay_rate(gate)
    norms = _frob(a_ops) * _frob(b_ops)
    bottom, top = boundary_flat(a_ops, b_ops)
    out = []
    for chain in enumerate_multichains(k, t):
        seq = chain.seq
        weight = 1.0
        vec = bottom
        for i in range(t):
            sigma, nu = seq[2 * i], seq[2 * i + 1]
            if i > 0:
                weight *= weingarten_factor(seq[2 * i - 1], sigma, gate.d_c)
            vec = apply_M_raw(nu, sigma, gate, vec, strategy=strategy)
        value = complex(top @ vec)
        m = audit_exponent(seq, k)
        bound = r ** (m * max(t - k + 1, 0)) * norms
        out.append(ChainContribution(chain, weight, value, bound, abs(value) <= bound * (1 + 1e-9) + slack))
    return out


def diagonal_path_value(gate: Gate, a_ops, b_ops, sigma: NcPartition, t: int, strategy: str = "auto") -> complex:
    """(b_full| M_{sigma sigma}^t |a_id) for the synthetic all-diagonal path."""
    bottom, top = boundary_flat(a_ops, b_ops)
    vec = bottom
    for _ in range(t):
        vec = apply_M_raw(sigma, sigma, gate, vec, strategy=strategy)
    return complex(top @ vec)


def k1_reference(gate: Gate, a, b, t_max: int) -> np.ndarray:
    """Tr[b M^t(a)]/d_A from the channel matrix alone."""
    ch = build_channel(gate)
    a = np.asarray(getattr(a, "entries", a), dtype=complex)
    b = np.asarray(getattr(b, "entries", b), dtype=complex)
    out = []
    x = a
    for _ in range(t_max + 1):
        out.append(np.trace(b @ x) / gate.d_a)
        x = ch.apply(x)
    return np.array(out)


def k2_eigen_closed_form(gate: Gate, a_lam, b_lam, lam: complex, t_max: int) -> np.ndarray:
    """k=2 eigenoperator series: lam^{2t-2} t d_C (b|M_{full,id}|a)/d_A - lam^{2t} (t-1) (b|a)/d_A."""
    bottom, top = boundary_flat([a_lam, a_lam], [b_lam, b_lam])
    ident, full = NcPartition.identity(2), NcPartition.full_cycle(2)
    jump = complex(top @ apply_M_raw(full, ident, gate, bottom))
    base = complex(top @ bottom)
    out = [base / gate.d_a]
    for t in range(1, t_max + 1):
        out.append(lam ** (2 * t - 2) * t * gate.d_c * jump / gate.d_a - lam ** (2 * t) * (t - 1) * base / gate.d_a)
    return np.array(out)
