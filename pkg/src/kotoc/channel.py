"""Single-site unital channel M(a) = Tr_C[U (a (x) 1) U^dagger] / d_C: spectrum, ergodicity class,
operator entanglement, mixing bound, dual-unitarity and a small gate library.

Operators are vectorized in the k=1 replica layout: entry (i, i') of ``a`` sits at flat index
``i + d*i'`` (column-major), so the channel matrix coincides with M_{id,id} at k=1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from urllib.parse import parse_qsl

import numpy as np
import scipy.linalg

from .errors import DegeneracyError, DomainError, DimensionError, ValidationError
from .haar import sample_haar, stream
from .replica import Gate, load_gate

CLASSES = ("non-interacting", "non-ergodic", "ergodic-non-mixing", "ergodic-mixing", "maximally-ergodic")
CHANNEL_TOL = 1e-10


def vec(a: np.ndarray) -> np.ndarray:
    return np.asarray(a).reshape(-1, order="F")


def unvec(v: np.ndarray, d: int) -> np.ndarray:
    return np.asarray(v).reshape(d, d, order="F")


@dataclass(frozen=True, eq=False)
class ChannelMatrix:
    d: int
    entries: np.ndarray

    def apply(self, a: np.ndarray) -> np.ndarray:
        return unvec(self.entries @ vec(a), self.d)

    def choi(self) -> np.ndarray:
        """Choi matrix sum_{ij} |i><j| (x) M(|i><j|)."""
        d = self.d
        c = np.zeros((d * d, d * d), dtype=complex)
        for i in range(d):
            for j in range(d):
                e = np.zeros((d, d))
                e[i, j] = 1.0
                c[i * d:(i + 1) * d, j * d:(j + 1) * d] = self.apply(e)
        return c

    def check(self, tol: float = CHANNEL_TOL) -> dict:
        """Unitality, trace preservation and Choi positivity defects."""
        d = self.d
        one = vec(np.eye(d))
        unital = float(np.max(np.abs(self.entries @ one - one)))
        trace_pres = float(np.max(np.abs(one.conj() @ self.entries - one.conj())))
        choi_min = float(np.min(np.linalg.eigvalsh(self.choi())))
        return {"unital": unital, "trace_preserving": trace_pres, "choi_min_eig": choi_min,
                "ok": unital <= tol and trace_pres <= tol and choi_min >= -tol}


def build_channel(gate: Gate) -> ChannelMatrix:
    """Dense matrix of a -> Tr_C[U (a (x) 1_C) U^dagger] / d_C on vectorized operators."""
    u = gate.tensor()
    m = np.einsum("xyac,zybc->xzab", u, u.conj()) / gate.d_c
    return ChannelMatrix(gate.d_a, m.reshape(gate.d_a ** 2, gate.d_a ** 2, order="F"))


@dataclass(frozen=True)
class ChannelDiagnostics:
    eigenvalues: tuple
    lambda_sub: complex
    restricted_norm: float
    op_entropy: float
    mixing_bound: float | None
    ergodicity_class: str
    dual_unitary: bool | None
    trivial_index: int = field(default=0, repr=False)

    def to_json(self) -> dict:
        return {
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "lambda_sub": [float(self.lambda_sub.real), float(self.lambda_sub.imag)],
            "lambda_sub_abs": float(abs(self.lambda_sub)),
            "restricted_norm": self.restricted_norm,
            "op_entropy": self.op_entropy,
            "mixing_bound": self.mixing_bound,
            "ergodicity_class": self.ergodicity_class,
            "dual_unitary": self.dual_unitary,
        }


def _trivial_mode(evals: np.ndarray, evecs: np.ndarray, d: int, tol: float) -> int:
    """Index of the eigenpair representing the identity (trivial) mode."""
    ident = vec(np.eye(d)) / np.sqrt(d)
    unit = np.nonzero(np.abs(np.abs(evals) - 1.0) < tol)[0]
    if unit.size == 0:
        raise DegeneracyError("no unit-modulus eigenvalue found")
    cols = evecs[:, unit] / np.linalg.norm(evecs[:, unit], axis=0)
    single = np.abs(cols.conj().T @ ident) ** 2
    best = int(np.argmax(single))
    if single[best] > 0.99:
        return int(unit[best])
    # degenerate unit eigenvalues: the identity only needs to lie in their common eigenspace
    near_one = unit[np.abs(evals[unit] - 1.0) < tol]
    if near_one.size:
        q, _ = np.linalg.qr(evecs[:, near_one])
        if np.linalg.norm(q.conj().T @ ident) ** 2 > 0.99:
            return int(near_one[np.argmax(np.abs(evecs[:, near_one].conj().T @ ident))])
    raise DegeneracyError(
        f"trivial eigenvector ambiguous: best squared overlap with identity {single[best]:.3f}")


def _sorted_eig(m: np.ndarray):
    evals, vl, vr = scipy.linalg.eig(m, left=True, right=True)
    order = np.lexsort((-evals.imag, -evals.real, -np.round(np.abs(evals), 12)))
    return evals[order], vl[:, order], vr[:, order]


def restricted_norm(channel: ChannelMatrix) -> float:
    """Operator 2-norm of M restricted to traceless operators."""
    d = channel.d
    e = vec(np.eye(d)) / np.sqrt(d)
    p = np.eye(d * d) - np.outer(e, e.conj())
    return float(np.linalg.norm(p @ channel.entries @ p, 2))


def classify(evals: np.ndarray, trivial: int, tol: float) -> str:
    n_one = int(np.sum(np.abs(evals - 1.0) < tol))
    if n_one == evals.size:
        return "non-interacting"
    if n_one > 1:
        return "non-ergodic"
    rest = np.delete(evals, trivial)
    if rest.size and np.any(np.abs(rest) > 1.0 - tol):
        return "ergodic-non-mixing"
    if rest.size == 0 or np.all(np.abs(rest) < tol):
        return "maximally-ergodic"
    return "ergodic-mixing"


def diagnose(gate: Gate, tol: float = 1e-8) -> ChannelDiagnostics:
    if not 0 < tol <= 1e-2:
        raise DomainError("tol must lie in (0, 1e-2]")
    ch = build_channel(gate)
    evals, _, vr = _sorted_eig(ch.entries)
    triv = _trivial_mode(evals, vr, gate.d_a, tol)
    rest = np.delete(evals, triv)
    lam = complex(rest[np.argmax(np.abs(rest))]) if rest.size else 0j
    du = is_dual_unitary(gate) if gate.d_a == gate.d_c else None
    return ChannelDiagnostics(
        eigenvalues=tuple(complex(z) for z in evals),
        lambda_sub=lam,
        restricted_norm=restricted_norm(ch),
        op_entropy=operator_entropy(gate),
        mixing_bound=mixing_bound(gate),
        ergodicity_class=classify(evals, triv, tol),
        dual_unitary=du,
        trivial_index=triv,
    )


def operator_entropy(gate: Gate) -> float:
    """Linear entropy 1 - sum_j gamma_j^2 / (d_A d_C)^2 of the operator-Schmidt spectrum."""
    r = gate.tensor().transpose(0, 2, 1, 3).reshape(gate.d_a ** 2, gate.d_c ** 2)
    gam = np.linalg.svd(r, compute_uv=False) ** 2
    return float(1.0 - np.sum(gam ** 2) / (gate.d_a * gate.d_c) ** 2)


def mixing_bound(gate: Gate) -> float | None:
    """sqrt(d_A^2 (1 - E(U)) - 1), an upper bound on |lambda| when d_A <= d_C."""
    if gate.d_a > gate.d_c:
        return None
    rad = gate.d_a ** 2 * (1.0 - operator_entropy(gate)) - 1.0
    if rad < -1e-12:
        return None
    return float(np.sqrt(max(rad, 0.0)))


def dual_matrix(gate: Gate) -> np.ndarray:
    """Space-time reshuffle: rows (c, y), columns (a, x) of U[x, y, a, c]."""
    if gate.d_a != gate.d_c:
        raise DimensionError("dual-unitarity needs d_A == d_C")
    d = gate.d_a
    return gate.tensor().transpose(3, 1, 2, 0).reshape(d * d, d * d)


def is_dual_unitary(gate: Gate, tol: float = 1e-10) -> bool:
    m = dual_matrix(gate)
    return bool(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))) < tol)


def _hermitize(m: np.ndarray) -> np.ndarray:
    h1 = m + m.conj().T
    h2 = 1j * (m - m.conj().T)
    return h1 if np.linalg.norm(h1) >= np.linalg.norm(h2) else h2


def eigenoperators(diag: ChannelDiagnostics, channel: ChannelMatrix, index: int | None = None,
                   tol: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Right/left eigenoperators (a, b) with Tr(b a)/d = 1.

    ``index`` selects an eigenvalue position in ``diag.eigenvalues``; by default the subleading
    eigenvalue is used and must be nondegenerate. Real eigenvalues give Hermitian operators.
    """
    d = channel.d
    evals, vl, vr = _sorted_eig(channel.entries)
    if index is None:
        lam = diag.lambda_sub
        cand = np.nonzero(np.abs(evals - lam) < tol)[0]
        if cand.size == 0:
            raise DegeneracyError("subleading eigenvalue not found in the spectrum")
        if cand.size > 1:
            raise DegeneracyError(f"subleading eigenvalue {lam:.6g} is degenerate ({cand.size} copies)")
        i = int(cand[0])
    else:
        i = int(index)
        lam = evals[i]
        if np.sum(np.abs(evals - lam) < tol) > 1:
            warnings.warn("selected eigenvalue is degenerate; eigenoperator is not unique")
    a = unvec(vr[:, i], d)
    # left eigenvector l with l^H M = lam l^H: covector c = conj(l), and Tr(b X) = c . vec(X)
    b = unvec(vl[:, i].conj(), d).T
    if abs(np.imag(lam)) < tol:
        a = _hermitize(a)
        b = _hermitize(b)
    a = a / np.sqrt(np.trace(a.conj().T @ a).real / d)
    b = b / (np.trace(b @ a) / d)
    return a, b


# ---------------------------------------------------------------------------
# gate library

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def swap(d: int = 2) -> Gate:
    m = np.zeros((d * d, d * d))
    for a in range(d):
        for c in range(d):
            m[c * d + a, a * d + c] = 1.0
    return Gate(d, d, m)


def identity(d_a: int = 2, d_c: int | None = None) -> Gate:
    d_c = d_a if d_c is None else d_c
    return Gate(d_a, d_c, np.eye(d_a * d_c))


def controlled_phase(d: int = 2, phi: float = np.pi) -> Gate:
    """diag(exp(i phi a c)) on A (x) C."""
    a, c = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    return Gate(d, d, np.diag(np.exp(1j * phi * (a * c).reshape(-1))))


def haar_random(d_a: int = 2, d_c: int | None = None, seed: int = 0) -> Gate:
    d_c = d_a if d_c is None else d_c
    return Gate(d_a, d_c, sample_haar(d_a * d_c, stream(seed, 0)))


def _xx_yy_zz(J: float) -> np.ndarray:
    h = np.pi / 4 * np.kron(PAULI["X"], PAULI["X"]) + np.pi / 4 * np.kron(PAULI["Y"], PAULI["Y"]) \
        + J * np.kron(PAULI["Z"], PAULI["Z"])
    return scipy.linalg.expm(-1j * h)


def dual_unitary_qubit(J: float = 0.0, dressings=None, seed: int | None = None) -> Gate:
    """(u1 (x) u2) exp[-i(pi/4 XX + pi/4 YY + J ZZ)] (v1 (x) v2).

    ``dressings`` is (u1, u2, v1, v2); when omitted they are Haar-random from ``seed``, or
    trivial if ``seed`` is None too.
    """
    if dressings is None:
        if seed is None:
            dressings = [np.eye(2)] * 4
        else:
            dressings = [sample_haar(2, stream(seed, 1, j)) for j in range(4)]
    u1, u2, v1, v2 = (np.asarray(x, dtype=complex) for x in dressings)
    m = np.kron(u1, u2) @ _xx_yy_zz(J) @ np.kron(v1, v2)
    return Gate(2, 2, m)


def dual_unitary_base(d: int, J: float, seed: int | None) -> Gate:
    """Dual-unitary gate at any d: the qubit family for d=2, SWAP times a controlled phase otherwise."""
    if d == 2:
        return dual_unitary_qubit(J, seed=seed)
    core = swap(d).entries @ controlled_phase(d, J).entries
    if seed is None:
        return Gate(d, d, core)
    u = [sample_haar(d, stream(seed, 1, j)) for j in range(4)]
    return Gate(d, d, np.kron(u[0], u[1]) @ core @ np.kron(u[2], u[3]))


def unitary_power(w: np.ndarray, eps: float) -> np.ndarray:
    """Principal-branch power w**eps of a unitary via its Schur form."""
    t, z = scipy.linalg.schur(w, output="complex")
    ph = np.angle(np.diagonal(t))
    return (z * np.exp(1j * eps * ph)) @ z.conj().T


def du_perturbed(d: int = 2, J: float = 0.3, eps: float = 0.1, seed: int = 0) -> Gate:
    """W**eps times a dressed dual-unitary gate, with W Haar-random (eps=1 gives a Haar gate)."""
    base = dual_unitary_base(d, J, seed)
    w = sample_haar(d * d, stream(seed, 2))
    m = unitary_power(w, eps) @ base.entries
    # re-orthonormalize away rounding from the Schur power
    u, _, vh = np.linalg.svd(m)
    return Gate(d, d, u @ vh)


def product_gate(u_a: np.ndarray, u_c: np.ndarray) -> Gate:
    return Gate(u_a.shape[0], u_c.shape[0], np.kron(u_a, u_c))


_LIBRARY = {
    "haar_random": (haar_random, {"d_a": int, "d_c": int, "seed": int}),
    "dual_unitary_qubit": (dual_unitary_qubit, {"J": float, "seed": int}),
    "du_perturbed": (du_perturbed, {"d": int, "J": float, "eps": float, "seed": int}),
    "swap": (swap, {"d": int}),
    "identity": (identity, {"d_a": int, "d_c": int}),
    "controlled_phase": (controlled_phase, {"d": int, "phi": float}),
}


def gate_library(name: str, params: dict | None = None, seed: int | None = None) -> Gate:
    """Deterministic library gate for (name, params, seed)."""
    params = dict(params or {})
    if name == "from_file":
        if "path" not in params:
            raise DomainError("from_file needs a 'path' parameter")
        return load_gate(params["path"])
    if name not in _LIBRARY:
        raise DomainError(f"unknown gate {name!r}; choose from {sorted(_LIBRARY) + ['from_file']}")
    fn, types = _LIBRARY[name]
    if seed is not None and "seed" in types:
        params.setdefault("seed", seed)
    kwargs = {}
    for key, val in params.items():
        if key not in types:
            raise DomainError(f"gate {name!r} has no parameter {key!r}")
        try:
            kwargs[key] = types[key](val)
        except (TypeError, ValueError) as exc:
            raise DomainError(f"bad value for {key}: {val!r}") from exc
    return fn(**kwargs)


def parse_gate_spec(spec: str) -> Gate:
    """``file:<path>`` or ``lib:<name>?key=value&...``."""
    if spec.startswith("file:"):
        return load_gate(spec[5:])
    if spec.startswith("lib:"):
        body = spec[4:]
        name, _, query = body.partition("?")
        return gate_library(name, dict(parse_qsl(query)))
    raise ValidationError(f"gate spec must start with 'file:' or 'lib:', got {spec!r}")
