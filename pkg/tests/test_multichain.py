import numpy as np
import pytest

from kotoc.channel import diagnose, dual_unitary_qubit, haar_random
from kotoc.errors import SizeLimitError
from kotoc.markov import channel_eigenoperators
from kotoc.multichain import (audit_exponent, chain_audit, diagonal_path_value, k1_reference,
                              k2_eigen_closed_form, kotoc_multichain, weingarten_matrix)
from kotoc.ncpart import NcPartition, count_multichains, lattice

from _util import ops, perturbed


def test_t0_is_the_plain_trace():
    rng = np.random.default_rng(0)
    a, b = ops(2, 3, rng), ops(2, 3, rng)
    direct = np.trace(a[0] @ b[0] @ a[1] @ b[1] @ a[2] @ b[2]) / 2
    assert kotoc_multichain(haar_random(2, 2, seed=0), a, b, 3, 0).values[0] == pytest.approx(direct)


@pytest.mark.parametrize("d", [2, 3])
def test_k1_matches_channel_reference(d):
    rng = np.random.default_rng(d)
    gate = haar_random(d, d, seed=1)
    a, b = ops(d, 1, rng), ops(d, 1, rng)
    got = kotoc_multichain(gate, a, b, 1, 8).values
    assert np.allclose(got, k1_reference(gate, a[0], b[0], 8), atol=1e-13)


def test_k2_closed_form():
    gate = perturbed(3)
    lam, a, b = channel_eigenoperators(gate)
    got = kotoc_multichain(gate, [a, a], [b, b], 2, 10).values
    assert np.allclose(got, k2_eigen_closed_form(gate, a, b, lam, 10), atol=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_identity_observables_give_one(k):
    one = [np.eye(2)] * k
    vals = kotoc_multichain(haar_random(2, 2, seed=3), one, one, k, 5).values
    assert np.allclose(vals, 1.0, atol=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_dual_unitary_zero(k):
    rng = np.random.default_rng(k)
    gate = dual_unitary_qubit(0.3, seed=2)
    a, b = ops(2, k, rng, traceless=True), ops(2, k, rng, traceless=True)
    vals = kotoc_multichain(gate, a, b, k, 5).values
    start = 1 if k == 1 else 2
    assert np.max(np.abs(vals[start:])) < 1e-12


def test_threads_do_not_change_result():
    rng = np.random.default_rng(4)
    gate = haar_random(2, 2, seed=4)
    a, b = ops(2, 3, rng), ops(2, 3, rng)
    one = kotoc_multichain(gate, a, b, 3, 4).values
    many = kotoc_multichain(gate, a, b, 3, 4, threads=3).values
    assert np.allclose(one, many, atol=1e-14)


def test_caps():
    gate = haar_random(3, 3, seed=0)
    with pytest.raises(SizeLimitError):
        kotoc_multichain(gate, [np.eye(3)] * 5, [np.eye(3)] * 5, 5, 2)
    with pytest.raises(SizeLimitError):
        kotoc_multichain(gate, [np.eye(3)], [np.eye(3)], 1, 65)


def test_weingarten_diagonal_and_domain_wall():
    for d in (2, 3, 5):
        w = weingarten_matrix(2, d)
        assert np.allclose(np.diag(w), 1.0)
        lat = lattice(2)
        assert w[lat.top, lat.bottom] == pytest.approx(-1.0 / d)


def test_audit_covers_every_chain_and_sums_to_series():
    rng = np.random.default_rng(5)
    gate = haar_random(2, 2, seed=5)
    a, b = ops(2, 2, rng, traceless=True), ops(2, 2, rng, traceless=True)
    t = 4
    rows = chain_audit(gate, a, b, 2, t)
    assert len(rows) == count_multichains(2, t)
    assert all(r.within_bound for r in rows)
    total = sum(r.weight * r.value for r in rows) * gate.d_c / gate.d_a
    assert total == pytest.approx(kotoc_multichain(gate, a, b, 2, t).values[t], abs=1e-12)


def test_audit_exponent():
    i, f = NcPartition.identity(2), NcPartition.full_cycle(2)
    assert audit_exponent((i, f), 1) == 1
    assert audit_exponent((i, i, f, f), 2) == 2


def test_diagonal_path_identity_partition():
    gate = haar_random(2, 2, seed=6)
    one = [np.eye(2)] * 2
    val = diagonal_path_value(gate, one, one, NcPartition.identity(2), 5)
    assert val == pytest.approx(diagonal_path_value(gate, one, one, NcPartition.identity(2), 0))


def test_series_is_real_for_hermitian_eigen_observables():
    gate = perturbed(2)
    assert abs(diagnose(gate).lambda_sub.imag) < 1e-12
    lam, a, b = channel_eigenoperators(gate)
    s = kotoc_multichain(gate, [a] * 3, [b] * 3, 3, 5)
    assert s.max_imag < 1e-12


@pytest.mark.parametrize("d,k", [(2, 2), (2, 3), (3, 2), (3, 3)])
def test_fitted_bound_constant_holds_later(d, k):
    # K fitted on t <= 3 from |C| <= K t^(k-1) r^(2t) must not be exceeded at later t
    from kotoc.markov import kotoc_transfer_deflated
    from kotoc.multichain import decay_rate
    gate = perturbed(d)
    r = decay_rate(gate)
    rng = np.random.default_rng(d * k)
    a, b = ops(d, k, rng, traceless=True), ops(d, k, rng, traceless=True)
    vals = np.abs(kotoc_transfer_deflated(gate, a, b, k, 16).values)
    t = np.arange(1, 17)
    scaled = vals[1:] / (t ** (k - 1) * r ** (2 * t))
    K = scaled[:3].max()
    assert np.all(scaled[3:] <= K * (1 + 1e-9))
