"""Finite-bath Monte Carlo oracle for k-OTOCs.

Each realization draws fresh Haar unitaries V_t on C (x) E for every step and evolves the
observables with U_t = (1_A (x) V_t)(U (x) 1_E) on the full D-dimensional space. Streams are
derived from (base_seed, sample, step, ...) so results do not depend on scheduling.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import reduce

import numpy as np

from .errors import DimensionError, DomainError, SizeLimitError
from .haar import sample_haar, stream
from .replica import Gate

MAX_DIM = 4096

__all__ = ["McConfig", "McEstimate", "McScan", "sample_haar", "finite_kotoc_single", "estimate",
           "extended_bath_estimate", "scan", "pairwise_sum", "fit_loglog_slope"]


@dataclass(frozen=True)
class McConfig:
    d_a: int
    d_c: int
    d_e: int
    k: int
    t_max: int
    n_samples: int
    base_seed: int = 0
    layout: str = "single"       # "single" or "brickwork"
    n_baths: int = 1             # L for the brickwork layout

    def __post_init__(self):
        if self.layout not in ("single", "brickwork"):
            raise DomainError(f"unknown bath layout {self.layout!r}")
        if self.n_samples < 2:
            raise DomainError("n_samples must be at least 2")
        if self.k < 1 or self.t_max < 0:
            raise DomainError("k >= 1 and t_max >= 0 required")
        if self.n_baths < 1 or (self.layout == "single" and self.n_baths != 1):
            raise DomainError("the single layout uses exactly one bath")
        if self.dim > MAX_DIM:
            raise SizeLimitError(f"total dimension {self.dim} exceeds {MAX_DIM}")

    @property
    def env_dim(self) -> int:
        return self.d_e ** self.n_baths

    @property
    def dim(self) -> int:
        return self.d_a * self.d_c * self.env_dim

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class McEstimate:
    config: McConfig
    mean: np.ndarray          # complex, per t
    variance: np.ndarray      # E|c - mean|^2 with Bessel correction, per t
    samples: np.ndarray       # (n_samples, t_max + 1) single-realization values
    seeds: list = field(default_factory=list)

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(self.variance / self.n)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    def iqr(self, t: int) -> float:
        """Interquartile range of the real parts at time t."""
        q1, q3 = np.percentile(self.samples[:, t].real, [25, 75])
        return float(q3 - q1)

    def tail_frequency(self, t: int, target: complex, eps: float) -> float:
        """Empirical P(|c - target| > eps) at time t."""
        return float(np.mean(np.abs(self.samples[:, t] - target) > eps))


def pairwise_sum(x: np.ndarray) -> np.ndarray:
    """Sum over axis 0 along a fixed binary tree, independent of how rows were produced."""
    n = x.shape[0]
    if n == 1:
        return x[0].copy()
    h = n // 2
    return pairwise_sum(x[:h]) + pairwise_sum(x[h:])


def _check_ops(ops, k: int, d: int, name: str) -> list[np.ndarray]:
    mats = [np.asarray(getattr(o, "entries", o), dtype=complex) for o in ops]
    if len(mats) != k:
        raise DimensionError(f"expected {k} {name} operators, got {len(mats)}")
    for m in mats:
        if m.shape != (d, d):
            raise DimensionError(f"{name} operators must be {d}x{d}")
        if np.max(np.abs(m - m.conj().T)) > 1e-12:
            raise DomainError(f"{name} operators must be Hermitian")
    return mats


def _env_unitary(cfg: McConfig, sample: int, step: int) -> np.ndarray:
    """V_t on C (x) E_1 (x) ... (x) E_L, C slowest."""
    if cfg.layout == "single":
        return sample_haar(cfg.d_c * cfg.d_e, stream(cfg.base_seed, sample, step))
    sites = [cfg.d_c] + [cfg.d_e] * cfg.n_baths

    def layer(parity: int) -> np.ndarray:
        blocks, x = [], 0
        if parity == 1:
            blocks.append(np.eye(sites[0]))
            x = 1
        while x < len(sites):
            if x + 1 < len(sites):
                dim = sites[x] * sites[x + 1]
                # the (C, E_1) brick shares the single-bath stream, so L = 1 reproduces it exactly
                key = (sample, step) if x == 0 else (sample, step, parity, x)
                blocks.append(sample_haar(dim, stream(cfg.base_seed, *key)))
                x += 2
            else:
                blocks.append(np.eye(sites[x]))
                x += 1
        return reduce(np.kron, blocks)

    return layer(0) @ layer(1)


def finite_kotoc_single(cfg: McConfig, gate: Gate, a_ops, b_ops, sample: int) -> np.ndarray:
    """Single-realization values (1/D) Tr[A_1(t) B_1 ... A_k(t) B_k] for t = 0..t_max."""
    if (gate.d_a, gate.d_c) != (cfg.d_a, cfg.d_c):
        raise DimensionError("gate dimensions do not match the configuration")
    a = _check_ops(a_ops, cfg.k, cfg.d_a, "a")
    b = _check_ops(b_ops, cfg.k, cfg.d_a, "b")
    rest = cfg.d_c * cfg.env_dim
    env = cfg.env_dim
    big_a = [np.kron(x, np.eye(rest)) for x in a]
    big_b = [np.kron(x, np.eye(rest)) for x in b]
    u_step = np.kron(gate.entries, np.eye(env))
    total = np.eye(cfg.dim, dtype=complex)
    out = []
    for t in range(cfg.t_max + 1):
        if t:
            v = _env_unitary(cfg, sample, t)
            total = np.kron(np.eye(cfg.d_a), v) @ (u_step @ total)
        prod = np.eye(cfg.dim, dtype=complex)
        for x, y in zip(big_a, big_b):
            prod = prod @ (total @ x @ total.conj().T) @ y
        out.append(np.trace(prod) / cfg.dim)
    return np.array(out)


def estimate(cfg: McConfig, gate: Gate, a_ops, b_ops, *, threads: int = 1) -> McEstimate:
    """Mean, variance and standard error over ``cfg.n_samples`` independent realizations."""
    def one(i):
        return finite_kotoc_single(cfg, gate, a_ops, b_ops, i)

    idx = range(cfg.n_samples)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(one, idx))
    else:
        rows = [one(i) for i in idx]
    samples = np.array(rows)
    n = samples.shape[0]
    mean = pairwise_sum(samples) / n
    var = pairwise_sum(np.abs(samples - mean) ** 2) / (n - 1)
    seeds = [(cfg.base_seed, i) for i in idx]
    return McEstimate(cfg, mean, var, samples, seeds)


def extended_bath_estimate(cfg: McConfig, gate: Gate, a_ops, b_ops, *, threads: int = 1) -> McEstimate:
    """Estimate with the environment evolved by a two-layer random brickwork of L baths."""
    if cfg.layout != "brickwork":
        raise DomainError("extended_bath_estimate needs layout='brickwork'")
    return estimate(cfg, gate, a_ops, b_ops, threads=threads)


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


@dataclass
class McScan:
    d_e: list
    t: int
    reference: complex
    estimates: list
    deviation: np.ndarray
    variance: np.ndarray
    deviation_slope: float
    variance_slope: float
    variance_prefactor: float     # empirical K in Var ~ K d_E^-2, mean of Var * d_E^2 over the grid

    def rows(self) -> list[dict]:
        return [{"d_e": d, "mean_re": e.mean[self.t].real, "mean_im": e.mean[self.t].imag,
                 "stderr": float(e.stderr[self.t]), "variance": float(e.variance[self.t]),
                 "deviation": float(dev)}
                for d, e, dev in zip(self.d_e, self.estimates, self.deviation)]


def scan(base: McConfig, d_e_list, gate: Gate, a_ops, b_ops, reference: complex, t: int, *,
         threads: int = 1) -> McScan:
    """Estimates over a d_E grid with log-log slopes of |mean - reference| and of the variance."""
    ests = []
    for d_e in d_e_list:
        cfg = McConfig(**{**base.to_json(), "d_e": int(d_e)})
        ests.append(estimate(cfg, gate, a_ops, b_ops, threads=threads))
    dev = np.array([abs(e.mean[t] - reference) for e in ests])
    var = np.array([e.variance[t] for e in ests])
    pref = float(np.mean(var * np.asarray(d_e_list, float) ** 2))
    return McScan(list(d_e_list), t, reference, ests, dev, var,
                  fit_loglog_slope(d_e_list, dev), fit_loglog_slope(d_e_list, var), pref)
