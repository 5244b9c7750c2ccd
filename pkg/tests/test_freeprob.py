import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kotoc.errors import DimensionError, SizeLimitError
from kotoc.freeprob import (cumulant_table, free_cumulant, moment, moment_table, moments_from_cumulants,
                            roundtrip_check, steady_state_prediction, steady_state_terms)
from kotoc.ncpart import NcPartition, enumerate_nc

from _util import herm, ops


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(2, 4), st.integers(0, 10 ** 6))
def test_moment_cumulant_round_trip(k, d, seed):
    a = ops(d, k, np.random.default_rng(seed))
    assert roundtrip_check(k, a) < 1e-10
    back = moments_from_cumulants(cumulant_table(a))
    mt = moment_table(a)
    for nu in enumerate_nc(k):
        assert back.values[nu] == pytest.approx(mt.values[nu], abs=1e-10)


def test_low_order_cumulants():
    rng = np.random.default_rng(0)
    x, y = herm(3, rng), herm(3, rng)
    phi = lambda m: np.trace(m) / 3
    assert free_cumulant(NcPartition.full_cycle(1), [x]) == pytest.approx(phi(x))
    assert free_cumulant(NcPartition.full_cycle(2), [x, y]) == pytest.approx(phi(x @ y) - phi(x) * phi(y))


def test_identity_has_no_higher_cumulants():
    one = [np.eye(2)] * 3
    for s in enumerate_nc(3):
        want = 1.0 if s == NcPartition.identity(3) else 0.0
        assert free_cumulant(s, one) == pytest.approx(want, abs=1e-14)


def test_moment_block_ordering():
    rng = np.random.default_rng(2)
    a = ops(2, 3, rng)
    nu = NcPartition(3, ((1, 3), (2,)))
    assert moment(nu, a) == pytest.approx(np.trace(a[0] @ a[2]) / 2 * np.trace(a[1]) / 2)


def test_steady_state_traceless_vanishes():
    rng = np.random.default_rng(3)
    for k in range(1, 5):
        a, b = ops(3, k, rng, traceless=True), ops(3, k, rng, traceless=True)
        # only partitions without singletons in sigma and sigma* survive; for k <= 2 none do
        if k <= 2:
            assert abs(steady_state_prediction(k, a, b)) < 1e-12


def test_steady_state_k1():
    rng = np.random.default_rng(4)
    a, b = ops(2, 1, rng), ops(2, 1, rng)
    assert steady_state_prediction(1, a, b) == pytest.approx(np.trace(a[0]) / 2 * np.trace(b[0]) / 2)


def test_steady_terms_cover_lattice():
    rng = np.random.default_rng(5)
    terms = steady_state_terms(3, ops(2, 3, rng), ops(2, 3, rng))
    assert len(terms) == 5


def test_errors():
    with pytest.raises(SizeLimitError):
        roundtrip_check(6, [np.eye(2)] * 6)
    with pytest.raises(DimensionError):
        moment(NcPartition.identity(2), [np.eye(2)])
