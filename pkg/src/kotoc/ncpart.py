"""Noncrossing partitions of {1..k}: enumeration, order, Kreweras complement, Moebius function
and multichains.

A partition is stored both as its blocks (1-based, each block ascending) and as the
permutation whose cycles are the blocks traversed in ascending order. Permutations are
0-based tuples ``p`` with ``p[i]`` the image of ``i``; products compose right to left,
``(p q)(i) = p(q(i))``.
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass, field
from math import comb
from typing import Iterator, Sequence

import numpy as np

from .errors import DimensionError, DomainError, OrderError, SizeLimitError

MAX_ENUM_K = 10
MAX_CHAIN_K = 6


def catalan(n: int) -> int:
    return comb(2 * n, n) // (n + 1)


# ---------------------------------------------------------------------------
# permutation helpers (0-based tuples)

def compose(p: Sequence[int], q: Sequence[int]) -> tuple[int, ...]:
    """Return the product ``p q`` acting as ``i -> p[q[i]]``."""
    return tuple(p[j] for j in q)


def inverse(p: Sequence[int]) -> tuple[int, ...]:
    inv = [0] * len(p)
    for i, j in enumerate(p):
        inv[j] = i
    return tuple(inv)


def cycles(p: Sequence[int]) -> list[list[int]]:
    """Cycles of ``p`` (0-based), each starting at its smallest element."""
    seen = [False] * len(p)
    out = []
    for start in range(len(p)):
        if seen[start]:
            continue
        cyc = []
        j = start
        while not seen[j]:
            seen[j] = True
            cyc.append(j)
            j = p[j]
        out.append(cyc)
    return out


def count_cycles(p: Sequence[int]) -> int:
    return len(cycles(p))


# ---------------------------------------------------------------------------

def _is_noncrossing(blocks: Sequence[Sequence[int]], k: int) -> bool:
    """Single left-to-right stack scan over block openings and closings."""
    owner = [0] * (k + 1)
    for b, block in enumerate(blocks):
        for x in block:
            owner[x] = b
    first = {b: block[0] for b, block in enumerate(blocks)}
    last = {b: block[-1] for b, block in enumerate(blocks)}
    stack: list[int] = []
    for x in range(1, k + 1):
        b = owner[x]
        if first[b] == x:
            stack.append(b)
        elif not stack or stack[-1] != b:
            return False
        if last[b] == x:
            stack.pop()
    return True


@dataclass(frozen=True)
class NcPartition:
    """Noncrossing partition of {1..k}.

    ``blocks`` holds 1-based ascending blocks sorted by their smallest element; ``perm`` is
    the 0-based image array of the permutation whose cycles are the blocks.
    """

    k: int
    blocks: tuple[tuple[int, ...], ...]
    perm: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        k = self.k
        if k < 1:
            raise DomainError("k must be positive")
        blocks = tuple(sorted((tuple(sorted(b)) for b in self.blocks), key=lambda b: b[0] if b else 0))
        flat = [x for b in blocks for x in b]
        if any(len(b) == 0 for b in blocks) or sorted(flat) != list(range(1, k + 1)):
            raise DomainError(f"blocks {self.blocks} do not partition 1..{k}")
        if not _is_noncrossing(blocks, k):
            raise DomainError(f"blocks {self.blocks} are crossing")
        perm = [0] * k
        for b in blocks:
            for x, y in zip(b, b[1:] + b[:1]):
                perm[x - 1] = y - 1
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "perm", tuple(perm))

    # constructors
    @classmethod
    def identity(cls, k: int) -> "NcPartition":
        """The all-singletons partition (identity permutation)."""
        return cls(k, tuple((i,) for i in range(1, k + 1)))

    @classmethod
    def full_cycle(cls, k: int) -> "NcPartition":
        """The one-block partition (cyclic permutation 1 -> 2 -> ... -> k -> 1)."""
        return cls(k, (tuple(range(1, k + 1)),))

    @classmethod
    def from_perm(cls, perm: Sequence[int]) -> "NcPartition":
        """Build from a 0-based permutation; its cycles must be ascending and noncrossing."""
        k = len(perm)
        cyc = cycles(perm)
        for c in cyc:
            # every cycle must run through its elements in ascending cyclic order
            if any(perm[c[i]] != c[(i + 1) % len(c)] for i in range(len(c))) or c != sorted(c):
                raise DomainError(f"permutation {tuple(perm)} is not a noncrossing-partition permutation")
        return cls(k, tuple(tuple(x + 1 for x in c) for c in cyc))

    @classmethod
    def parse(cls, text: str, k: int | None = None) -> "NcPartition":
        """Parse cycle notation such as ``(134)(2)`` or ``(1 3 4)(2)``."""
        groups = re.findall(r"\(([^()]*)\)", text)
        if not groups:
            raise DomainError(f"cannot parse partition {text!r}")
        blocks = []
        for g in groups:
            parts = g.replace(",", " ").split()
            if len(parts) == 1 and len(parts[0]) > 1:
                parts = list(parts[0])
            blocks.append(tuple(int(x) for x in parts))
        kk = max(x for b in blocks for x in b)
        if k is not None:
            if k < kk:
                raise DomainError(f"element {kk} exceeds k={k}")
            present = {x for b in blocks for x in b}
            blocks += [(x,) for x in range(1, k + 1) if x not in present]
            kk = k
        return cls(kk, tuple(blocks))

    # properties
    @property
    def num_blocks(self) -> int:
        """Number of cycles |sigma|."""
        return len(self.blocks)

    @property
    def rank(self) -> int:
        return self.k - len(self.blocks)

    def block_index(self) -> tuple[int, ...]:
        """0-based block label for every (0-based) element."""
        lab = [0] * self.k
        for b, block in enumerate(self.blocks):
            for x in block:
                lab[x - 1] = b
        return tuple(lab)

    def block_containing(self, x: int) -> tuple[int, ...]:
        for b in self.blocks:
            if x in b:
                return b
        raise DomainError(f"{x} not in 1..{self.k}")

    def __str__(self) -> str:
        sep = "" if self.k < 10 else " "
        return "".join("(" + sep.join(str(x) for x in b) + ")" for b in self.blocks)

    def sort_key(self):
        return (self.rank, self.perm)

    def to_json(self) -> list[list[int]]:
        return [list(b) for b in self.blocks]


def _check_same_k(a: NcPartition, b: NcPartition) -> None:
    if a.k != b.k:
        raise DimensionError(f"partitions of different sizes: {a.k} vs {b.k}")


def leq(nu: NcPartition, sigma: NcPartition) -> bool:
    """True iff every block of ``nu`` lies inside a block of ``sigma``."""
    _check_same_k(nu, sigma)
    lab = sigma.block_index()
    return all(len({lab[x - 1] for x in b}) == 1 for b in nu.blocks)


def kreweras(sigma: NcPartition) -> NcPartition:
    """Kreweras complement sigma^{-1} full_cycle."""
    full = NcPartition.full_cycle(sigma.k).perm
    return NcPartition.from_perm(compose(inverse(sigma.perm), full))


def cycle_count_rel(nu: NcPartition, sigma: NcPartition) -> int:
    """Number of cycles of nu^{-1} sigma."""
    _check_same_k(nu, sigma)
    return count_cycles(compose(inverse(nu.perm), sigma.perm))


def mobius(nu: NcPartition, sigma: NcPartition) -> int:
    """Product over cycles V of nu^{-1} sigma of (-1)^{|V|-1} Catalan(|V|-1)."""
    _check_same_k(nu, sigma)
    val = 1
    for c in cycles(compose(inverse(nu.perm), sigma.perm)):
        n = len(c) - 1
        val *= (-1) ** n * catalan(n)
    return val


def mobius_sum_check(sigma: NcPartition, nu: NcPartition) -> int:
    """Sum of mobius(nu, rho) over the interval sigma <= rho <= nu."""
    if not leq(sigma, nu):
        raise OrderError(f"{sigma} is not below {nu}")
    lat = lattice(sigma.k)
    return sum(mobius(nu, lat.elements[j]) for j in lat.interval(lat.index[sigma], lat.index[nu]))


def num_singletons(sigma: NcPartition) -> int:
    return sum(1 for b in sigma.blocks if len(b) == 1)


def combined_singletons(sigma: NcPartition) -> int:
    """n(sigma) + n(sigma*)."""
    return num_singletons(sigma) + num_singletons(kreweras(sigma))


# ---------------------------------------------------------------------------
# enumeration

@functools.lru_cache(maxsize=None)
def _nc_blocks(n: int) -> tuple[tuple[tuple[int, ...], ...], ...]:
    """All noncrossing partitions of 0..n-1 as block tuples (unsorted order)."""
    if n == 0:
        return ((),)
    out = []

    def grow(last: int, block: tuple[int, ...]):
        # close the block of 0: the tail after ``last`` is partitioned independently
        tail = n - last - 1
        for rest in _nc_blocks(tail):
            yield (block,) + tuple(tuple(x + last + 1 for x in b) for b in rest)
        # or extend it with a later element q; the gap between is partitioned independently
        for q in range(last + 1, n):
            gap = q - last - 1
            for gp in _nc_blocks(gap):
                shifted = tuple(tuple(x + last + 1 for x in b) for b in gp)
                for rest in grow(q, block + (q,)):
                    yield shifted + rest

    out.extend(grow(0, (0,)))
    return tuple(out)


@functools.lru_cache(maxsize=None)
def _enumerate(k: int) -> tuple[NcPartition, ...]:
    parts = [NcPartition(k, tuple(tuple(x + 1 for x in b) for b in bl)) for bl in _nc_blocks(k)]
    parts.sort(key=NcPartition.sort_key)
    return tuple(parts)


def enumerate_nc(k: int) -> list[NcPartition]:
    """All noncrossing partitions of {1..k} in canonical (rank, perm) order."""
    if not 1 <= k <= MAX_ENUM_K:
        raise SizeLimitError(f"enumeration supports 1 <= k <= {MAX_ENUM_K}, got {k}")
    return list(_enumerate(k))


class Lattice:
    """Index-based view of NC(k) with cached order relations and Moebius values.

    Elements are in canonical order, so index 0 is the identity and the last index is
    the full cycle.
    """

    def __init__(self, k: int):
        self.k = k
        self.elements = tuple(enumerate_nc(k))
        self.index = {p: i for i, p in enumerate(self.elements)}
        n = len(self.elements)
        self.order = np.zeros((n, n), dtype=bool)
        for i, a in enumerate(self.elements):
            for j, b in enumerate(self.elements):
                self.order[i, j] = leq(a, b)
        self.up = tuple(tuple(int(j) for j in np.nonzero(self.order[i])[0]) for i in range(n))
        self.down = tuple(tuple(int(i) for i in np.nonzero(self.order[:, j])[0]) for j in range(n))
        self.mobius = np.array([[mobius(a, b) for b in self.elements] for a in self.elements], dtype=np.int64)
        self.cycles_rel = np.array(
            [[cycle_count_rel(a, b) for b in self.elements] for a in self.elements], dtype=np.int64)
        self.bottom = 0
        self.top = n - 1

    def __len__(self):
        return len(self.elements)

    def interval(self, i: int, j: int) -> list[int]:
        """Indices r with elements[i] <= elements[r] <= elements[j]."""
        return [r for r in self.up[i] if self.order[r, j]]

    def pairs(self) -> list[tuple[int, int]]:
        """All comparable pairs (lower, upper)."""
        return [(i, j) for i in range(len(self)) for j in self.up[i]]


@functools.lru_cache(maxsize=None)
def lattice(k: int) -> Lattice:
    return Lattice(k)


# ---------------------------------------------------------------------------
# multichains

@dataclass(frozen=True)
class Multichain:
    """Nondecreasing sequence identity = s1 <= n1 <= ... <= st <= nt = full cycle."""

    k: int
    t: int
    seq: tuple[NcPartition, ...]

    def __post_init__(self):
        if len(self.seq) != 2 * self.t:
            raise DimensionError("multichain must hold 2t partitions")
        if self.seq[0] != NcPartition.identity(self.k) or self.seq[-1] != NcPartition.full_cycle(self.k):
            raise OrderError("multichain must start at the identity and end at the full cycle")
        for a, b in zip(self.seq, self.seq[1:]):
            if not leq(a, b):
                raise OrderError(f"multichain not monotone at {a} -> {b}")

    @property
    def sigmas(self) -> tuple[NcPartition, ...]:
        return self.seq[0::2]

    @property
    def nus(self) -> tuple[NcPartition, ...]:
        return self.seq[1::2]


def _check_chain_caps(k: int, t: int) -> None:
    if not 1 <= k <= MAX_CHAIN_K:
        raise SizeLimitError(f"multichains support 1 <= k <= {MAX_CHAIN_K}, got {k}")
    if t < 1:
        raise DomainError("t must be at least 1")


def multichain_indices(k: int, t: int) -> Iterator[tuple[int, ...]]:
    """Depth-first enumeration of multichains as tuples of lattice indices."""
    _check_chain_caps(k, t)
    lat = lattice(k)
    length = 2 * t
    seq = [lat.bottom]

    def walk():
        pos = len(seq)
        if pos == length:
            if seq[-1] == lat.top:
                yield tuple(seq)
            return
        for j in lat.up[seq[-1]]:
            if pos == length - 1 and j != lat.top:
                continue
            seq.append(j)
            yield from walk()
            seq.pop()

    yield from walk()


def enumerate_multichains(k: int, t: int) -> Iterator[Multichain]:
    """Yield every multichain of NC(k) with t time steps exactly once."""
    lat = lattice(k)
    for idx in multichain_indices(k, t):
        yield Multichain(k, t, tuple(lat.elements[i] for i in idx))


def count_multichains(k: int, t: int) -> int:
    """Exact count of multichains, by path counting over the lattice order."""
    _check_chain_caps(k, t)
    lat = lattice(k)
    counts = np.zeros(len(lat), dtype=object)
    counts[lat.bottom] = 1
    order = lat.order.astype(object)
    for _ in range(2 * t - 1):
        counts = counts @ order
    return int(counts[lat.top])
