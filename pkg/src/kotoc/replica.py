"""Replicated-space kernel: permutation states, dressed boundary vectors and the maps M_{nu sigma}.

A replica vector on ``2k`` copies of a ``d``-dimensional space has length ``d**(2k)`` and index
layout ``(i1, i1', i2, i2', ..., ik, ik')`` with ``i1`` varying fastest. Internally the flat
vector is viewed as a tensor with axes in that logical order through Fortran-order reshapes.
"""

from __future__ import annotations

import hashlib
import json
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionError, SizeLimitError, ValidationError
from .ncpart import NcPartition, cycle_count_rel

UNITARY_TOL = 1e-10
HERMITIAN_TOL = 1e-12
DENSE_MAX_DIM = 4096
MAX_REPLICA_DIM = 1 << 22
DEFAULT_CACHE_BYTES = 512 * 1024 ** 2


# ---------------------------------------------------------------------------
# value types

@dataclass(frozen=True, eq=False)
class Observable:
    """Hermitian d x d matrix."""

    d: int
    entries: np.ndarray

    def __post_init__(self):
        m = np.array(self.entries, dtype=complex)
        if m.shape != (self.d, self.d):
            raise DimensionError(f"observable must be {self.d}x{self.d}, got {m.shape}")
        viol = float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0
        if viol > HERMITIAN_TOL:
            raise ValidationError(f"observable not Hermitian: max violation {viol:.3e}", viol)
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    def is_traceless(self, tol: float = 1e-10) -> bool:
        return abs(np.trace(self.entries)) / self.d <= tol


@dataclass(frozen=True, eq=False)
class Gate:
    """Unitary on A (x) C, rows indexed by (A-index, C-index) with the C index fastest."""

    d_a: int
    d_c: int
    entries: np.ndarray

    def __post_init__(self):
        m = np.array(self.entries, dtype=complex)
        n = self.d_a * self.d_c
        if m.shape != (n, n):
            raise DimensionError(f"gate must be {n}x{n}, got {m.shape}")
        viol = unitarity_violation(m)
        if viol > UNITARY_TOL:
            raise ValidationError(f"gate not unitary: max violation {viol:.3e}", viol)
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def fingerprint(self) -> str:
        fp = self.__dict__.get("_fp")
        if fp is None:
            h = hashlib.sha256()
            h.update(f"{self.d_a},{self.d_c};".encode())
            h.update(np.ascontiguousarray(self.entries).tobytes())
            fp = h.hexdigest()[:16]
            object.__setattr__(self, "_fp", fp)
        return fp

    def tensor(self) -> np.ndarray:
        """View as U[x, y, a, c]: out A, out C, in A, in C."""
        return self.entries.reshape(self.d_a, self.d_c, self.d_a, self.d_c)


def unitarity_violation(m: np.ndarray) -> float:
    return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))))


@dataclass(frozen=True, eq=False)
class ReplicaVector:
    """Complex vector of length d**(2k) in the global replica layout."""

    d: int
    k: int
    data: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.data, dtype=complex).reshape(-1)
        if v.shape[0] != self.d ** (2 * self.k):
            raise DimensionError(f"replica vector length {v.shape[0]} != {self.d}^{2 * self.k}")
        object.__setattr__(self, "data", v)

    def tensor(self) -> np.ndarray:
        return as_tensor(self.data, self.d, self.k)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def _same(self, other: "ReplicaVector"):
        if (self.d, self.k) != (other.d, other.k):
            raise DimensionError("replica vectors of different shape")

    def __add__(self, other):
        self._same(other)
        return ReplicaVector(self.d, self.k, self.data + other.data)

    def __sub__(self, other):
        self._same(other)
        return ReplicaVector(self.d, self.k, self.data - other.data)

    def __mul__(self, c):
        return ReplicaVector(self.d, self.k, self.data * c)

    __rmul__ = __mul__


def as_tensor(flat: np.ndarray, d: int, k: int) -> np.ndarray:
    """Flat replica vector -> tensor with axes (i1, i1', ..., ik, ik')."""
    return flat.reshape((d,) * (2 * k), order="F")


def as_flat(tensor: np.ndarray) -> np.ndarray:
    return tensor.reshape(-1, order="F")


def _matrix(op) -> np.ndarray:
    return np.asarray(op.entries if isinstance(op, Observable) else op, dtype=complex)


def _check_dim(d: int, k: int) -> None:
    if d ** (2 * k) > MAX_REPLICA_DIM:
        raise SizeLimitError(f"replica dimension {d}^{2 * k} exceeds budget {MAX_REPLICA_DIM}")


# ---------------------------------------------------------------------------
# permutation and boundary vectors

def perm_tensor(perm: Sequence[int], d: int) -> np.ndarray:
    """Real tensor with entry 1 where i'_j = i_{perm(j)} for every j."""
    k = len(perm)
    _check_dim(d, k)
    t = np.zeros((d,) * (2 * k))
    grids = np.indices((d,) * k).reshape(k, -1)
    idx = []
    for j in range(k):
        idx.append(grids[j])
        idx.append(grids[perm[j]])
    t[tuple(idx)] = 1.0
    return t


def permutation_vector(sigma: NcPartition, d: int, k: int | None = None) -> ReplicaVector:
    """Unnormalized permutation state |sigma)."""
    if k is not None and k != sigma.k:
        raise DimensionError("partition size does not match k")
    return ReplicaVector(d, sigma.k, as_flat(perm_tensor(sigma.perm, d)))


def overlap(left: ReplicaVector, right: ReplicaVector) -> complex:
    """Sum of conj(left) * right."""
    left._same(right)
    return complex(np.vdot(left.data, right.data))


def apply_slot(tensor: np.ndarray, op: np.ndarray, axis: int) -> np.ndarray:
    """Contract ``op[x, y]`` with ``tensor`` along ``axis`` (y), result x in the same place."""
    out = np.tensordot(op, tensor, axes=([1], [axis]))
    return np.moveaxis(out, 0, axis)


def _check_ops(ops, k: int) -> list[np.ndarray]:
    mats = [_matrix(o) for o in ops]
    if len(mats) != k:
        raise DimensionError(f"expected {k} operators, got {len(mats)}")
    d = mats[0].shape[0]
    for m in mats:
        if m.shape != (d, d):
            raise DimensionError("operators must share one square dimension")
    return mats


def bottom_tensor(ops, perm: Sequence[int] | None = None) -> np.ndarray:
    """Tensor of (a_1 (x) 1 (x) ... (x) a_k (x) 1)|perm); identity permutation by default."""
    k = len(ops)
    mats = _check_ops(ops, k)
    d = mats[0].shape[0]
    t = perm_tensor(tuple(range(k)) if perm is None else perm, d).astype(complex)
    for j, m in enumerate(mats):
        t = apply_slot(t, m, 2 * j)
    return t


def top_covector_tensor(ops, perm: Sequence[int] | None = None) -> np.ndarray:
    """Covector components of (perm| (1 (x) b_1 (x) ... (x) 1 (x) b_k), full cycle by default.

    For the full cycle the component at (i1, i1', ..., ik, ik') is
    (b_1)_{i1' i2} (b_2)_{i2' i3} ... (b_k)_{ik' i1}.
    """
    k = len(ops)
    mats = _check_ops(ops, k)
    d = mats[0].shape[0]
    if perm is None:
        perm = NcPartition.full_cycle(k).perm
    t = perm_tensor(perm, d).astype(complex)
    for j, m in enumerate(mats):
        t = apply_slot(t, m, 2 * j + 1)
    return t


def dress_bottom(ops, sigma: NcPartition | None = None) -> ReplicaVector:
    """|a_sigma) = (a_1 (x) 1 (x) ... (x) a_k (x) 1)|sigma)."""
    k = len(ops)
    if sigma is not None and sigma.k != k:
        raise DimensionError("partition size does not match operator count")
    t = bottom_tensor(ops, None if sigma is None else sigma.perm)
    return ReplicaVector(t.shape[0], k, as_flat(t))


def dress_top(ops) -> ReplicaVector:
    """Ket whose bra is (b_full|, so ``overlap(dress_top(b), v) = (b_full|v)``."""
    t = top_covector_tensor(ops)
    return ReplicaVector(t.shape[0], len(ops), as_flat(t).conj())


# ---------------------------------------------------------------------------
# the sandwiched maps M_{nu sigma}

def _labels(k: int):
    a = list(range(0, k))
    ap = list(range(k, 2 * k))
    x = list(range(2 * k, 3 * k))
    xp = list(range(3 * k, 4 * k))
    c = list(range(4 * k, 5 * k))
    y = list(range(5 * k, 6 * k))
    return a, ap, x, xp, c, y


def _interleave(p, q):
    return [v for pair in zip(p, q) for v in pair]


def _gate_operands(nu_perm, sigma_perm, u, uc):
    """Operands/sublists of the folded gates with C contracted against (nu| and |sigma).

    Gates are listed so that consecutive operands share a C leg: forward replica j shares
    c_j with backward replica sigma^{-1}(j), which shares y_{nu(l)} with forward replica nu(l).
    Contracting in this order keeps at most a few C legs open at any time.
    """
    k = len(nu_perm)
    a, ap, x, xp, c, y = _labels(k)
    sigma_inv = [0] * k
    for i, j in enumerate(sigma_perm):
        sigma_inv[j] = i
    ops = []
    done = [False] * k
    for start in range(k):
        j = start
        while not done[j]:
            done[j] = True
            ops += [u, [x[j], y[j], a[j], c[j]]]
            l = sigma_inv[j]
            ops += [uc, [xp[l], y[nu_perm[l]], ap[l], c[sigma_perm[l]]]]
            j = nu_perm[l]
    return ops


def _sequential_path(n_operands: int) -> list:
    """Contract operand 0 with 1, then the running result with each following operand."""
    path = ["einsum_path", (0, 1)]
    for length in range(n_operands - 1, 1, -1):
        path.append((0, length - 1))
    return path


class OperatorCache:
    """Thread-safe LRU cache of dense M_{nu sigma} matrices bounded by a byte budget."""

    def __init__(self, budget_bytes: int = DEFAULT_CACHE_BYTES):
        self.budget = int(budget_bytes)
        self._data: OrderedDict = OrderedDict()
        self._bytes = 0
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key):
        with self._lock:
            m = self._data.get(key)
            if m is not None:
                self._data.move_to_end(key)
                self.hits += 1
            else:
                self.misses += 1
            return m

    def put(self, key, mat: np.ndarray) -> None:
        size = mat.nbytes
        if size > self.budget:
            return
        with self._lock:
            if key in self._data:
                return
            while self._bytes + size > self.budget and self._data:
                _, old = self._data.popitem(last=False)
                self._bytes -= old.nbytes
            self._data[key] = mat
            self._bytes += size

    def clear(self) -> None:
        with self._lock:
            self._data.clear()
            self._bytes = 0

    @property
    def nbytes(self) -> int:
        return self._bytes


default_cache = OperatorCache()
_path_cache: dict = {}
_path_lock = threading.Lock()


def _einsum(operands, out, key):
    with _path_lock:
        path = _path_cache.get(key)
    if path is None:
        path = np.einsum_path(*operands, out, optimize="greedy")[0]
        with _path_lock:
            _path_cache[key] = path
    return np.einsum(*operands, out, optimize=path)


def dense_M(nu: NcPartition, sigma: NcPartition, gate: Gate, cache: OperatorCache | None = None) -> np.ndarray:
    """Dense d_A^{2k} x d_A^{2k} matrix of M_{nu sigma} (cached)."""
    k = nu.k
    dim = gate.d_a ** (2 * k)
    if dim > DENSE_MAX_DIM:
        raise SizeLimitError(f"dense M needs d_A^(2k) = {dim} > {DENSE_MAX_DIM}")
    cache = default_cache if cache is None else cache
    key = (gate.fingerprint, k, nu.perm, sigma.perm)
    m = cache.get(key)
    if m is not None:
        return m
    u = gate.tensor()
    a, ap, x, xp, _, _ = _labels(k)
    ops = _gate_operands(nu.perm, sigma.perm, u, u.conj())
    out = _interleave(x, xp) + _interleave(a, ap)
    t = _einsum(ops, out, ("dense", k, gate.d_a, gate.d_c, nu.perm, sigma.perm))
    m = t.reshape(dim, dim, order="F") * float(gate.d_c) ** (-k)
    m.setflags(write=False)
    cache.put(key, m)
    return m


def _choose(strategy: str, gate: Gate, k: int, cache: OperatorCache) -> str:
    if strategy not in ("auto", "dense", "otf"):
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy != "auto":
        return strategy
    dim = gate.d_a ** (2 * k)
    if dim <= DENSE_MAX_DIM and 4 * 16 * dim * dim <= cache.budget:
        return "dense"
    return "otf"


def apply_M_raw(nu: NcPartition, sigma: NcPartition, gate: Gate, v: np.ndarray, *,
                left: bool = False, strategy: str = "auto", cache: OperatorCache | None = None) -> np.ndarray:
    """Apply M_{nu sigma} to a flat vector (``left=True``: act on a covector from the right).

    ``v`` may carry extra trailing batch axes; its leading axis is the replica index.
    """
    k = nu.k
    if sigma.k != k:
        raise DimensionError("nu and sigma must share k")
    dim = gate.d_a ** (2 * k)
    if v.shape[0] != dim:
        raise DimensionError(f"vector length {v.shape[0]} != d_A^(2k) = {dim}")
    cache = default_cache if cache is None else cache
    if _choose(strategy, gate, k, cache) == "dense":
        m = dense_M(nu, sigma, gate, cache)
        return (m.T @ v) if left else (m @ v)
    u = gate.tensor()
    a, ap, x, xp, _, _ = _labels(k)
    batch = v.shape[1:]
    nb = int(np.prod(batch)) if batch else 1
    tv = v.reshape((gate.d_a,) * (2 * k) + (nb,), order="F")
    b = [6 * k]
    src, dst = (_interleave(x, xp), _interleave(a, ap)) if left else (_interleave(a, ap), _interleave(x, xp))
    ops = [tv, src + b] + _gate_operands(nu.perm, sigma.perm, u, u.conj())
    out = np.einsum(*ops, dst + b, optimize=_sequential_path(2 * k + 1)) * float(gate.d_c) ** (-k)
    return out.reshape((dim,) + batch, order="F")


def apply_M(nu: NcPartition, sigma: NcPartition, gate: Gate, v: ReplicaVector, *,
            strategy: str = "auto", cache: OperatorCache | None = None) -> ReplicaVector:
    """Return d_C^{-k} (1_A (x) (nu|_C) (U (x) U*)^{(x)k} (1_A (x) |sigma)_C) applied to ``v``."""
    if v.k != nu.k or v.d != gate.d_a:
        raise DimensionError("vector does not match gate/partition dimensions")
    out = apply_M_raw(nu, sigma, gate, v.data, strategy=strategy, cache=cache)
    return ReplicaVector(v.d, v.k, out)


def m_eigenvalue(nu: NcPartition, sigma: NcPartition, d_c: int) -> float:
    """d_C^{-k + |nu^{-1} sigma|}: eigenvalue of M_{nu sigma} on |sigma) (and (nu| on the left)."""
    return float(d_c) ** (-nu.k + cycle_count_rel(nu, sigma))


# ---------------------------------------------------------------------------
# JSON file format: {"d_a": int, "d_c": int (gates), "matrix": [[[re, im], ...], ...]}

def _encode_matrix(m: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def _decode_matrix(rows) -> np.ndarray:
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise ValidationError("matrix must be a row-major list of [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def load_gate(path) -> Gate:
    try:
        doc = json.loads(Path(path).read_text())
        d_a, d_c = int(doc["d_a"]), int(doc["d_c"])
        m = _decode_matrix(doc["matrix"])
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed gate file {path}: {exc}") from exc
    return Gate(d_a, d_c, m)


def save_gate(gate: Gate, path) -> None:
    doc = {"d_a": gate.d_a, "d_c": gate.d_c, "matrix": _encode_matrix(gate.entries)}
    Path(path).write_text(json.dumps(doc))


def load_observable(path) -> Observable:
    try:
        doc = json.loads(Path(path).read_text())
        d = int(doc["d_a"])
        m = _decode_matrix(doc["matrix"])
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed observable file {path}: {exc}") from exc
    return Observable(d, m)


def save_observable(obs: Observable, path) -> None:
    doc = {"d_a": obs.d, "matrix": _encode_matrix(obs.entries)}
    Path(path).write_text(json.dumps(doc))
