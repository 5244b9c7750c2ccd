import itertools

import numpy as np
import pytest

from kotoc.channel import build_channel, haar_random
from kotoc.errors import DimensionError, SizeLimitError, ValidationError
from kotoc.ncpart import NcPartition, count_cycles, compose, enumerate_nc, inverse, lattice
from kotoc.replica import (Gate, Observable, OperatorCache, apply_M, apply_M_raw, as_flat, bottom_tensor,
                           dense_M, dress_bottom, dress_top, load_gate, load_observable, m_eigenvalue,
                           overlap, perm_tensor, permutation_vector, save_gate, save_observable)

from _util import herm, ops


@pytest.mark.parametrize("d,k", [(2, 1), (2, 2), (2, 3), (3, 2)])
def test_overlap_law(d, k):
    for s, t in itertools.product(enumerate_nc(k), repeat=2):
        val = overlap(permutation_vector(s, d), permutation_vector(t, d))
        assert val == pytest.approx(d ** count_cycles(compose(inverse(s.perm), t.perm)))


@pytest.mark.parametrize("k", [1, 2, 3])
def test_boundary_contraction_is_trace(k):
    rng = np.random.default_rng(k)
    a, b = ops(2, k, rng), ops(2, k, rng)
    direct = np.trace(np.linalg.multi_dot([x for pair in zip(a, b) for x in pair] + [np.eye(2)])) / 2
    val = overlap(dress_top(b), dress_bottom(a)) / 2
    assert val == pytest.approx(direct, abs=1e-12)


def test_perm_tensor_identity_is_delta():
    t = perm_tensor((0,), 3)
    assert np.allclose(t, np.eye(3))


def test_k1_map_is_the_channel():
    rng = np.random.default_rng(0)
    gate = haar_random(3, 2, seed=4)
    a = herm(3, rng)
    one = NcPartition.identity(1)
    got = apply_M_raw(one, one, gate, as_flat(bottom_tensor([a])))
    want = build_channel(gate).apply(a)
    assert np.allclose(got.reshape(3, 3, order="F"), want, atol=1e-13)


@pytest.mark.parametrize("k", [2, 3])
def test_dense_and_on_the_fly_agree(k):
    gate = haar_random(2, 2, seed=7)
    rng = np.random.default_rng(1)
    v = rng.standard_normal(2 ** (2 * k)) + 1j * rng.standard_normal(2 ** (2 * k))
    lat = lattice(k)
    for i, j in lat.pairs():
        nu, sigma = lat.elements[j], lat.elements[i]
        for left in (False, True):
            x = apply_M_raw(nu, sigma, gate, v, strategy="dense", left=left, cache=OperatorCache())
            y = apply_M_raw(nu, sigma, gate, v, strategy="otf", left=left)
            assert np.allclose(x, y, atol=1e-13)


@pytest.mark.parametrize("d,k", [(2, 2), (2, 3), (3, 2)])
def test_permutation_states_are_eigenvectors(d, k):
    gate = haar_random(d, d, seed=2)
    lat = lattice(k)
    for i, j in lat.pairs():
        sigma, nu = lat.elements[i], lat.elements[j]
        lam = m_eigenvalue(nu, sigma, d)
        r = permutation_vector(sigma, d).data
        assert np.allclose(apply_M_raw(nu, sigma, gate, r), lam * r, atol=1e-12)
        l_ = permutation_vector(nu, d).data
        assert np.allclose(apply_M_raw(nu, sigma, gate, l_, left=True), lam * l_, atol=1e-12)


def test_apply_M_checks_dimensions():
    gate = haar_random(2, 2, seed=0)
    v = permutation_vector(NcPartition.identity(2), 3)
    with pytest.raises(DimensionError):
        apply_M(NcPartition.identity(2), NcPartition.identity(2), gate, v)


def test_dense_size_cap():
    gate = haar_random(3, 3, seed=0)
    with pytest.raises(SizeLimitError):
        dense_M(NcPartition.identity(5), NcPartition.identity(5), gate, OperatorCache())


def test_cache_respects_budget():
    cache = OperatorCache(budget_bytes=1 << 16)
    gate = haar_random(2, 2, seed=0)
    for s in enumerate_nc(3):
        dense_M(s, s, gate, cache)
    assert cache.nbytes <= 1 << 16


def test_gate_json_round_trip(tmp_path):
    gate = haar_random(2, 3, seed=5)
    save_gate(gate, tmp_path / "g.json")
    back = load_gate(tmp_path / "g.json")
    assert (back.d_a, back.d_c) == (2, 3)
    assert np.array_equal(back.entries, gate.entries)


def test_observable_json_round_trip(tmp_path):
    obs = Observable(2, herm(2, np.random.default_rng(0)))
    save_observable(obs, tmp_path / "o.json")
    assert np.array_equal(load_observable(tmp_path / "o.json").entries, obs.entries)


def test_non_unitary_gate_rejected():
    with pytest.raises(ValidationError, match="not unitary"):
        Gate(2, 2, 1.01 * np.eye(4))


def test_non_hermitian_observable_rejected():
    with pytest.raises(ValidationError, match="not Hermitian"):
        Observable(2, np.array([[0, 1], [0, 0]]))


def test_malformed_gate_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"d_a": 2, "matrix": []}')
    with pytest.raises(ValidationError):
        load_gate(p)
