"""Markovian influence-matrix evolution on NC(k) (x) replica space.

The transfer matrix acts block-wise,

    T_{nu rho} = sum_{rho <= sigma <= nu} M_{nu sigma} W_{sigma rho},

and C^(k)(t) = ((psi_b| T^t |psi_a)). Ket states store replica vectors per partition; bra
states store covector components directly (contraction is a plain sum of products).
"""

from __future__ import annotations

import functools
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import build_channel, diagnose, eigenoperators
from .errors import DegeneracyError, DimensionError, DomainError, SizeLimitError
from .ncpart import NcPartition, catalan, compose, enumerate_nc, lattice
from .multichain import OtocSeries, boundary_flat, check_caps, provenance, weingarten_matrix
from .replica import (Gate, OperatorCache, ReplicaVector, apply_M_raw, as_flat, bottom_tensor, perm_tensor,
                      top_covector_tensor)


MAX_BASIS_BYTES = 256 * 2**20


@dataclass
class MarkovState:
    """Per-partition replica vectors, rows of ``data`` in canonical lattice order.

    ``bra=True`` marks a covector whose rows are bra components.
    """

    k: int
    d: int
    data: np.ndarray
    bra: bool = False

    def __post_init__(self):
        n = catalan(self.k)
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.shape != (n, self.d ** (2 * self.k)):
            raise DimensionError(f"state must have shape ({n}, {self.d ** (2 * self.k)}), got {self.data.shape}")

    @classmethod
    def zeros(cls, k: int, d: int, bra: bool = False) -> "MarkovState":
        return cls(k, d, np.zeros((catalan(k), d ** (2 * k)), dtype=complex), bra)

    @classmethod
    def from_components(cls, k: int, d: int, comps: dict, bra: bool = False) -> "MarkovState":
        st = cls.zeros(k, d, bra)
        lat = lattice(k)
        for p, v in comps.items():
            st.data[lat.index[p]] = v.data if isinstance(v, ReplicaVector) else v
        return st

    def __getitem__(self, p: NcPartition) -> ReplicaVector:
        return ReplicaVector(self.d, self.k, self.data[lattice(self.k).index[p]])

    @property
    def components(self) -> dict:
        """Nonzero components as {partition: ReplicaVector}."""
        lat = lattice(self.k)
        return {lat.elements[i]: ReplicaVector(self.d, self.k, self.data[i])
                for i in range(len(lat)) if np.any(self.data[i])}

    def copy(self) -> "MarkovState":
        return MarkovState(self.k, self.d, self.data.copy(), self.bra)


def contract(left: MarkovState, right: MarkovState) -> complex:
    """((left|right)) for a bra state and a ket state."""
    if not left.bra or right.bra:
        raise DomainError("contract expects (bra, ket)")
    if (left.k, left.d) != (right.k, right.d):
        raise DimensionError("state shapes differ")
    return complex(np.sum(left.data * right.data))


# ---------------------------------------------------------------------------
# transfer application

def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def kappa_step(state: MarkovState, d_c: int) -> MarkovState:
    """kappa_sigma = sum_{rho <= sigma} W_{sigma rho} phi_rho (bra: sum over sigma >= rho)."""
    lat = lattice(state.k)
    w = weingarten_matrix(state.k, d_c) * lat.order.T  # [sigma, rho] nonzero for rho <= sigma
    if state.bra:
        return MarkovState(state.k, state.d, w.T @ state.data, True)
    return MarkovState(state.k, state.d, w @ state.data)


def phi_step(state: MarkovState, gate: Gate, *, threads: int = 1, strategy: str = "auto",
             cache: OperatorCache | None = None) -> MarkovState:
    """phi_nu = sum_{sigma <= nu} M_{nu sigma} kappa_sigma (bra: act from the right)."""
    lat = lattice(state.k)
    els = lat.elements
    live = [i for i in range(len(lat)) if np.any(state.data[i])]

    if state.bra:
        def one(sigma):
            acc = np.zeros(state.data.shape[1], dtype=complex)
            for nu in lat.up[sigma]:
                if nu in live:
                    acc += apply_M_raw(els[nu], els[sigma], gate, state.data[nu], left=True,
                                       strategy=strategy, cache=cache)
            return acc
    else:
        def one(nu):
            acc = np.zeros(state.data.shape[1], dtype=complex)
            for sigma in lat.down[nu]:
                if sigma in live:
                    acc += apply_M_raw(els[nu], els[sigma], gate, state.data[sigma],
                                       strategy=strategy, cache=cache)
            return acc

    rows = _map(one, range(len(lat)), threads)
    return MarkovState(state.k, state.d, np.array(rows), state.bra)


def transfer_apply(state: MarkovState, gate: Gate, **kw) -> MarkovState:
    """T|state)) for kets, ((state|T for bras."""
    if state.d != gate.d_a:
        raise DimensionError("state and gate dimensions differ")
    if state.bra:
        return kappa_step(phi_step(state, gate, **kw), gate.d_c)
    return phi_step(kappa_step(state, gate.d_c), gate, **kw)


def two_step_evolution(state: MarkovState, gate: Gate, **kw) -> tuple[MarkovState, MarkovState]:
    """One kappa-step (Weingarten/Moebius mixing) followed by one phi-step (channel maps)."""
    kap = kappa_step(state, gate.d_c)
    return kap, phi_step(kap, gate, **kw)


def kappa_initial(a_ops, k: int, d_c: int) -> MarkovState:
    """kappa_0: only the identity component, equal to d_C^k |a_id) (this is W |psi_a)))."""
    bottom = as_flat(bottom_tensor(a_ops))
    st = MarkovState.zeros(k, bottom_dim(bottom, k))
    st.data[lattice(k).bottom] = float(d_c) ** k * bottom
    return st


def bottom_dim(flat: np.ndarray, k: int) -> int:
    return int(round(flat.shape[0] ** (1.0 / (2 * k))))


def boundary_states(a_ops, b_ops, k: int, d_c: int) -> tuple[MarkovState, MarkovState]:
    """|psi_a)) with components d_C^{|rho|} |a_id); ((psi_b| = (d_A d_C)^{-1} (b_full| on the full cycle."""
    bottom, top = boundary_flat(a_ops, b_ops)
    d = bottom_dim(bottom, k)
    lat = lattice(k)
    psi_a = MarkovState.zeros(k, d)
    for i, p in enumerate(lat.elements):
        psi_a.data[i] = float(d_c) ** p.num_blocks * bottom
    psi_b = MarkovState.zeros(k, d, bra=True)
    psi_b.data[lat.top] = top / (d * d_c)
    return psi_a, psi_b


def kotoc_transfer(gate: Gate, a_ops, b_ops, k: int, t_max: int, *, threads: int = 1,
                   strategy: str = "auto", cache: OperatorCache | None = None) -> OtocSeries:
    """C^(k)(t) = ((psi_b| T^t |psi_a)) for t = 0..t_max."""
    check_caps(gate, k, t_max)
    psi_a, psi_b = boundary_states(a_ops, b_ops, k, gate.d_c)
    vals = [contract(psi_b, psi_a)]
    st = psi_a
    for _ in range(t_max):
        st = transfer_apply(st, gate, threads=threads, strategy=strategy, cache=cache)
        vals.append(contract(psi_b, st))
    return OtocSeries(k, list(range(t_max + 1)), vals, "transfer", provenance(gate, k=k))


# ---------------------------------------------------------------------------
# eigenstates

@dataclass
class EigenstatePair:
    label: NcPartition
    right: MarkovState
    left: MarkovState
    eigenvalue: complex
    dressing: tuple | None = None


def _leading_right(sigma: NcPartition, d_a: int, d_c: int, ops=None) -> MarkovState:
    """d_A^{|sigma|-k} sum_{rho >= sigma} d_C^{|rho|} (dressed) |sigma) on component rho."""
    k = sigma.k
    lat = lattice(k)
    vec = as_flat(perm_tensor(sigma.perm, d_a).astype(complex) if ops is None else bottom_tensor(ops, sigma.perm))
    st = MarkovState.zeros(k, d_a)
    i = lat.index[sigma]
    for j in lat.up[i]:
        st.data[j] = float(d_a) ** (sigma.num_blocks - k) * float(d_c) ** lat.elements[j].num_blocks * vec
    return st


def _leading_left(nu: NcPartition, d_a: int, d_c: int, ops=None) -> MarkovState:
    """sum_{rho <= nu} (d_A d_C)^{-|rho|} mu(nu, rho) (dressed) (rho| on component rho."""
    k = nu.k
    lat = lattice(k)
    j = lat.index[nu]
    st = MarkovState.zeros(k, d_a, bra=True)
    for i in lat.down[j]:
        rho = lat.elements[i]
        cov = perm_tensor(rho.perm, d_a).astype(complex) if ops is None else top_covector_tensor(ops, rho.perm)
        st.data[i] = float(d_a * d_c) ** (-rho.num_blocks) * lat.mobius[j, i] * as_flat(cov)
    return st


def leading_eigenstates(k: int, d_a: int, d_c: int) -> list[EigenstatePair]:
    """Biorthogonal eigenvalue-1 family labelled by NC(k)."""
    return [EigenstatePair(s, _leading_right(s, d_a, d_c), _leading_left(s, d_a, d_c), 1.0)
            for s in enumerate_nc(k)]


def steady_state(gate: Gate, a_ops, b_ops, k: int) -> complex:
    """sum_sigma ((psi_b|phi_sigma)) ((kappa_sigma|psi_a))."""
    cls = diagnose(gate).ergodicity_class
    if cls not in ("ergodic-mixing", "maximally-ergodic"):
        warnings.warn(f"gate is {cls}; the leading-eigenstate projector does not give the long-time limit")
    psi_a, psi_b = boundary_states(a_ops, b_ops, k, gate.d_c)
    total = 0j
    for pair in leading_eigenstates(k, gate.d_a, gate.d_c):
        total += contract(psi_b, pair.right) * contract(pair.left, psi_a)
    return total


def nu_tilde(nu: NcPartition, m: int, n: int) -> NcPartition:
    """nu composed with the transposition (m n): splits the block holding slots m != n (1-based).

    Examples: (123) with (1,2) gives (13)(2); (1234) with (1,3) gives (14)(23).
    """
    if m == n:
        raise DomainError("m and n must differ")
    if set(nu.block_containing(m)) != set(nu.block_containing(n)):
        raise DomainError(f"slots {m} and {n} are not in a common block of {nu}")
    tau = list(range(nu.k))
    tau[m - 1], tau[n - 1] = n - 1, m - 1
    return NcPartition.from_perm(compose(nu.perm, tau))


def _single(op: np.ndarray, slot: int, k: int) -> list[np.ndarray]:
    d = op.shape[0]
    return [op if j == slot - 1 else np.eye(d) for j in range(k)]


@dataclass
class DressedFamily:
    """Eigenvalue-lambda eigenstates dressed at one slot, with the biorthogonal left family."""

    k: int
    eigenvalue: complex
    a_lambda: np.ndarray
    b_lambda: np.ndarray
    right: dict          # (sigma, m) -> MarkovState
    raw_left: dict       # (nu, n) -> MarkovState
    left: dict           # (nu, n) -> MarkovState, biorthogonalized

    def pairs(self) -> list[EigenstatePair]:
        return [EigenstatePair(s, self.right[(s, m)], self.left[(s, m)], self.eigenvalue, (m, self.a_lambda))
                for (s, m) in self.right]


def channel_eigenoperators(gate: Gate, tol: float = 1e-8):
    """(lambda, a_lambda, b_lambda) for a real, nondegenerate subleading eigenvalue."""
    dg = diagnose(gate, tol)
    lam = dg.lambda_sub
    if abs(lam.imag) > tol:
        raise DegeneracyError(f"subleading eigenvalue {lam:.6g} is complex")
    a, b = eigenoperators(dg, build_channel(gate), tol=tol)
    return float(lam.real), a, b


def dressed_eigenstates(gate: Gate, k: int, tol: float = 1e-8) -> DressedFamily:
    """|phi^m_sigma)) = a_{lambda,m}|phi_sigma)), ((kappa^n_nu| = ((kappa_nu| b_{lambda,n}, biorthogonalized.

    Both labels refer to the backward (primed) index of a replica. For the ket |sigma) that
    index equals the forward index of replica sigma(m), where a_lambda is applied; the bra
    carries b_lambda on the primed index i_n' as in the top boundary vector. With this
    convention the raw overlaps follow delta_{sigma, nu_tilde(m, n)}.
    """
    lam, a, b = channel_eigenoperators(gate, tol)
    return _dressed_family(gate, k, lam, a, b)


def _dressed_family(gate: Gate, k: int, lam: complex, a: np.ndarray, b: np.ndarray) -> DressedFamily:
    d_a, d_c = gate.d_a, gate.d_c
    right, raw = {}, {}
    for s in enumerate_nc(k):
        for m in range(1, k + 1):
            # label m: a_lambda on the backward index of replica m, i.e. unprimed slot sigma(m)
            right[(s, m)] = _leading_right(s, d_a, d_c, _single(a, s.perm[m - 1] + 1, k))
            raw[(s, m)] = _leading_left(s, d_a, d_c, _single(b, m, k))

    @functools.lru_cache(maxsize=None)
    def tilde(nu: NcPartition, n: int) -> MarkovState:
        st = raw[(nu, n)].copy()
        for m in nu.block_containing(n):
            if m != n:
                st.data -= tilde(nu_tilde(nu, m, n), m).data
        return st

    left = {key: tilde(*key) for key in raw}
    return DressedFamily(k, lam, a, b, right, raw, left)


@dataclass
class SpectralBasis:
    """Leading family plus one single-dressed family per nontrivial channel eigenvalue.

    Rows of ``right`` and ``left`` are flattened states with left @ right.T = 1. These
    families span every eigenvalue of T whose modulus exceeds the largest product of two
    nontrivial channel eigenvalues.
    """

    eigenvalues: np.ndarray   # one per row
    groups: np.ndarray        # family index per row, 0 for the leading family
    right: np.ndarray
    left: np.ndarray

    def biorthogonality_error(self) -> float:
        return float(np.max(np.abs(self.left @ self.right.T - np.eye(len(self.eigenvalues)))))


def spectral_basis(gate: Gate, k: int, tol: float = 1e-8) -> SpectralBasis:
    """Analytic eigenstates of T for eigenvalue 1 and every nontrivial channel eigenvalue."""
    dg = diagnose(gate, tol)
    ch = build_channel(gate)
    evals = np.array(dg.eigenvalues)
    n_states = catalan(k) * (1 + k * (len(evals) - 1))
    nbytes = 2 * 16 * n_states * catalan(k) * gate.d_a ** (2 * k)
    if nbytes > MAX_BASIS_BYTES:
        raise SizeLimitError(f"spectral basis needs {nbytes / 2**20:.0f} MiB (cap {MAX_BASIS_BYTES >> 20} MiB)")
    pairs = leading_eigenstates(k, gate.d_a, gate.d_c)
    rights = [p.right.data.ravel() for p in pairs]
    lefts = [p.left.data.ravel() for p in pairs]
    lams = [1.0 + 0j] * len(pairs)
    groups = [0] * len(pairs)
    g = 0
    for i, lam in enumerate(evals):
        if i == dg.trivial_index or abs(lam) < tol:
            continue
        if np.sum(np.abs(evals - lam) < tol) > 1:
            raise DegeneracyError(f"channel eigenvalue {lam:.6g} is degenerate")
        g += 1
        a, b = eigenoperators(dg, ch, index=i, tol=tol)
        fam = _dressed_family(gate, k, complex(lam), a, b)
        for key in fam.right:
            rights.append(fam.right[key].data.ravel())
            lefts.append(fam.left[key].data.ravel())
            lams.append(complex(lam))
            groups.append(g)
    return SpectralBasis(np.array(lams), np.array(groups), np.array(rights), np.array(lefts))


def kotoc_transfer_deflated(gate: Gate, a_ops, b_ops, k: int, t_max: int, *, cancel_tol: float = 1e-12,
                            basis: SpectralBasis | None = None, **kw) -> OtocSeries:
    """C^(k)(t) with the slow eigenmodes of T handled analytically.

    The state is split as |psi_a)) = P|psi_a)) + |r)), with P the spectral projector onto
    ``spectral_basis``. The P part contributes sum_j lambda_j^t ((psi_b|R_j)) ((L_j|psi_a));
    a family whose summed contribution is below ``cancel_tol`` times the total magnitude of
    all terms counts as exactly zero. The remainder is evolved with T and re-projected every step, so roundoff never
    feeds the slow modes. This resolves decays far below the double-precision floor of the
    plain evolution, which stalls near 1e-16.
    """
    check_caps(gate, k, t_max)
    basis = basis or spectral_basis(gate, k)
    psi_a, psi_b = boundary_states(a_ops, b_ops, k, gate.d_c)
    shape = psi_a.data.shape
    top = psi_b.data.ravel()
    coef = basis.left @ psi_a.data.ravel()
    ends = basis.right @ top
    terms = coef * ends
    weights = np.zeros(len(terms), dtype=complex)
    scale = max(np.abs(terms).sum(), abs(top @ psi_a.data.ravel()))
    for grp in np.unique(basis.groups):
        sel = basis.groups == grp
        if abs(terms[sel].sum()) > cancel_tol * scale:
            weights[sel] = terms[sel]
    r = psi_a.data.ravel() - basis.right.T @ coef
    vals = []
    for t in range(t_max + 1):
        if t:
            st = transfer_apply(MarkovState(k, psi_a.d, r.reshape(shape)), gate, **kw)
            r = st.data.ravel()
            r = r - basis.right.T @ (basis.left @ r)
        vals.append(np.sum(weights * basis.eigenvalues ** t) + top @ r)
    return OtocSeries(k, list(range(t_max + 1)), vals, "transfer-deflated", provenance(gate, k=k))


def multi_dressed_left(gate: Gate, nu: NcPartition, slots, *, enable: bool = False) -> tuple[MarkovState, complex]:
    """Left state ((kappa_nu| dressed with b_lambda at several slots in distinct blocks (eigenvalue lambda^m).

    T only moves bra components down the lattice, so the dressed slots stay in distinct blocks
    of every component and the state is exact. The family is not complete, so it sits behind
    ``enable``.
    """
    if not enable:
        raise DomainError("multi-dressed eigenstates are experimental; pass enable=True")
    owners = [nu.block_containing(m) for m in slots]
    if len(set(owners)) != len(owners):
        raise DomainError("no two dressed slots may share a block")
    lam, _, b = channel_eigenoperators(gate)
    d = gate.d_a
    ops = [b if j + 1 in slots else np.eye(d) for j in range(nu.k)]
    return _leading_left(nu, d, gate.d_c, ops), lam ** len(slots)


# ---------------------------------------------------------------------------
# influence-matrix MPS export

def influence_mps(k: int, d_c: int) -> dict:
    """Site tensors of the influence matrix on the temporal lattice.

    Sites alternate between an input site (tensor ``A[b_in, sigma, phys]``, carrying
    d_C^{-k} W_{sigma b_in} and the C-replica ket |sigma)_C) and an output site (tensor
    ``B[sigma, nu, phys]`` carrying the step function of sigma <= nu and the C-replica
    bra (nu|_C). Physical legs have dimension d_C^{2k} in the global replica layout.
    """
    lat = lattice(k)
    n = len(lat)
    w = weingarten_matrix(k, d_c)
    perms = np.array([as_flat(perm_tensor(p.perm, d_c)) for p in lat.elements])
    A = np.zeros((n, n, d_c ** (2 * k)))
    B = np.zeros((n, n, d_c ** (2 * k)))
    for i in range(n):
        for j in lat.up[i]:
            A[i, j] = float(d_c) ** (-k) * w[j, i] * perms[j]
            B[i, j] = perms[j]
    bottom = np.array([float(d_c) ** p.num_blocks for p in lat.elements])
    top = np.zeros(n)
    top[lat.top] = 1.0 / d_c
    return {"A": A, "B": B, "bottom": bottom, "top": top, "partitions": [p.to_json() for p in lat.elements]}


def export_influence_mps(k: int, d_c: int, t: int, path) -> Path:
    """Write the influence-matrix MPS for t steps to an ``.npz`` container with JSON metadata."""
    mps = influence_mps(k, d_c)
    meta = {
        "format": "kotoc-influence-mps/1",
        "k": k, "d_c": d_c, "t": t,
        "bond_dimension": catalan(k),
        "physical_dimension": d_c ** (2 * k),
        "site_pattern": "A B " * t,
        "physical_layout": "(i1, i1', ..., ik, ik'), i1 fastest",
        "partitions": mps["partitions"],
        "contraction": "C(t) = (1/d_A) * bottom . [A B]^t . top against the folded system gates "
                       "(U (x) U*)^{(x)k}, with |a_id) and (b_full| as system boundaries",
    }
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, A=mps["A"], B=mps["B"], bottom=mps["bottom"], top=mps["top"],
                 metadata=np.array(json.dumps(meta)))
    return path


def load_influence_mps(path) -> dict:
    with np.load(path, allow_pickle=False) as z:
        out = {key: z[key] for key in ("A", "B", "bottom", "top")}
        out["metadata"] = json.loads(str(z["metadata"]))
    return out


def _folded_gate_apply(ac: np.ndarray, gate: Gate, k: int) -> np.ndarray:
    """Apply (U (x) U*)^{(x)k} to a tensor with axes (A replicas 2k, C replicas 2k)."""
    u = gate.tensor()
    uc = u.conj()
    t = ac
    for j in range(2 * k):
        g = u if j % 2 == 0 else uc
        # legs: A replica slot j at axis j, C replica slot j at axis 2k + j
        t = np.tensordot(g, t, axes=([2, 3], [j, 2 * k + j]))
        t = np.moveaxis(t, [0, 1], [j, 2 * k + j])
    return t


def contract_influence_mps(mps: dict, gate: Gate, a_ops, b_ops, t_max: int | None = None) -> np.ndarray:
    """Re-contract an exported influence MPS with explicit folded gates; returns C(t), t = 0..t_max."""
    meta = mps["metadata"]
    k, d_c = meta["k"], meta["d_c"]
    if d_c != gate.d_c:
        raise DimensionError("gate bath dimension does not match the MPS")
    t_max = meta["t"] if t_max is None else t_max
    d_a = gate.d_a
    bottom, top = boundary_flat(a_ops, b_ops)
    A, B = mps["A"], mps["B"]
    n = A.shape[0]
    state = np.outer(mps["bottom"], bottom)      # bond x A-replica vector
    out = [complex(mps["top"] @ (state @ top)) / d_a]
    shape = (d_a,) * (2 * k) + (d_c,) * (2 * k)
    for _ in range(t_max):
        new = np.zeros_like(state)
        for sigma in range(n):
            weights = A[:, sigma, :]               # b_in x phys
            if not np.any(weights):
                continue
            ac = np.einsum("ba,bp->ap", state, weights)
            ac = as_flat_pair(ac, shape)
            ac = _folded_gate_apply(ac, gate, k)
            mat = ac.reshape(d_a ** (2 * k), d_c ** (2 * k), order="F")
            for nu in range(n):
                if np.any(B[sigma, nu]):
                    new[nu] += mat @ B[sigma, nu]
        state = new
        out.append(complex(mps["top"] @ (state @ top)) / d_a)
    return np.array(out)


def as_flat_pair(mat: np.ndarray, shape: tuple) -> np.ndarray:
    """(A-flat, C-flat) matrix -> tensor with A replica axes followed by C replica axes."""
    return mat.reshape(shape, order="F")
