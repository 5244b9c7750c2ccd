
import numpy as np
import pytest

from kotoc.channel import haar_random, identity
from kotoc.errors import DomainError
from kotoc.freeprob import steady_state_prediction
from kotoc.markov import (MarkovState, boundary_states, channel_eigenoperators, contract, dressed_eigenstates,
                          export_influence_mps, contract_influence_mps, influence_mps, kappa_initial,
                          kappa_step, kotoc_transfer, kotoc_transfer_deflated, leading_eigenstates,
                          load_influence_mps, multi_dressed_left, nu_tilde, spectral_basis, steady_state,
                          transfer_apply, two_step_evolution)
from kotoc.multichain import k1_reference, kotoc_multichain
from kotoc.ncpart import NcPartition, catalan, enumerate_nc, lattice

from _util import ops, perturbed


def P(text, k):
    return NcPartition.parse(text, k)


def random_state(k, d, rng, bra=False):
    n = catalan(k)
    return MarkovState(k, d, rng.standard_normal((n, d ** (2 * k))) + 1j * rng.standard_normal((n, d ** (2 * k))), bra)


@pytest.mark.parametrize("d", [2, 3])
def test_k1_transfer_is_channel(d):
    rng = np.random.default_rng(d)
    gate = haar_random(d, d, seed=2)
    a, b = ops(d, 1, rng), ops(d, 1, rng)
    got = kotoc_transfer(gate, a, b, 1, 10).values
    assert np.allclose(got, k1_reference(gate, a[0], b[0], 10), atol=1e-13)


def test_k2_block_formula():
    # for k=2: phi_id' = M_{id,id} kappa_id, phi_full' = M_{full,id} kappa_id + M_{full,full} kappa_full
    rng = np.random.default_rng(0)
    gate = haar_random(2, 2, seed=1)
    st = random_state(2, 2, rng)
    out = transfer_apply(st, gate)
    from kotoc.replica import apply_M_raw
    i, f = NcPartition.identity(2), NcPartition.full_cycle(2)
    d = 2
    k_id = st.data[0]
    k_full = st.data[1] - k_id / d
    assert np.allclose(out.data[0], apply_M_raw(i, i, gate, k_id))
    assert np.allclose(out.data[1], apply_M_raw(f, i, gate, k_id) + apply_M_raw(f, f, gate, k_full))


def test_zero_maps_to_zero():
    gate = haar_random(2, 2, seed=0)
    assert not np.any(transfer_apply(MarkovState.zeros(3, 2), gate).data)


def test_lower_triangular_in_lattice_order():
    # a state supported above sigma stays supported above sigma
    gate = haar_random(2, 2, seed=0)
    lat = lattice(3)
    rng = np.random.default_rng(1)
    for i in range(len(lat)):
        st = MarkovState.zeros(3, 2)
        st.data[i] = rng.standard_normal(st.data.shape[1])
        out = transfer_apply(st, gate)
        support = {j for j in range(len(lat)) if np.any(np.abs(out.data[j]) > 1e-14)}
        assert support <= set(lat.up[i])


def test_bra_transfer_is_adjoint_action():
    rng = np.random.default_rng(2)
    gate = haar_random(2, 2, seed=2)
    ket, bra = random_state(2, 2, rng), random_state(2, 2, rng, bra=True)
    assert contract(bra, transfer_apply(ket, gate)) == pytest.approx(contract(transfer_apply(bra, gate), ket))


def test_two_step_equals_transfer():
    rng = np.random.default_rng(3)
    gate = haar_random(2, 2, seed=3)
    st = random_state(3, 2, rng)
    kap, phi = two_step_evolution(st, gate)
    assert np.allclose(kap.data, kappa_step(st, 2).data)
    assert np.allclose(phi.data, transfer_apply(st, gate).data)


def test_kappa_of_boundary_is_initial():
    rng = np.random.default_rng(4)
    a, b = ops(2, 3, rng), ops(2, 3, rng)
    psi_a, _ = boundary_states(a, b, 3, 2)
    assert np.allclose(kappa_step(psi_a, 2).data, kappa_initial(a, 3, 2).data)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_identity_observables_give_one(k):
    one = [np.eye(3)] * k
    vals = kotoc_transfer(haar_random(3, 2, seed=0), one, one, k, 6).values
    assert np.allclose(vals, 1.0, atol=1e-12)


@pytest.mark.parametrize("d,k", [(2, 2), (2, 3), (2, 4), (3, 2), (3, 3)])
def test_multichain_transfer_agree(d, k):
    rng = np.random.default_rng(10 * d + k)
    gate = haar_random(d, d, seed=k)
    a, b = ops(d, k, rng), ops(d, k, rng)
    t = 5 if k < 4 else 3
    x = kotoc_multichain(gate, a, b, k, t).values
    y = kotoc_transfer(gate, a, b, k, t).values
    assert np.allclose(x, y, atol=1e-12 * np.max(np.abs(x)))


@pytest.mark.parametrize("d,k", [(2, 2), (2, 3), (3, 2), (2, 4)])
def test_leading_family(d, k):
    gate = haar_random(d, d, seed=5)
    pairs = leading_eigenstates(k, d, d)
    g = np.array([[contract(p.left, q.right) for q in pairs] for p in pairs])
    assert np.allclose(g, np.eye(len(pairs)), atol=1e-10)
    for p in pairs:
        assert np.allclose(transfer_apply(p.right, gate).data, p.right.data, atol=1e-10)
        assert np.allclose(transfer_apply(p.left, gate).data, p.left.data, atol=1e-10)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_steady_state_matches_free_probability(k):
    rng = np.random.default_rng(k)
    gate = haar_random(2, 2, seed=8)
    a, b = ops(2, k, rng), ops(2, k, rng)
    pred = steady_state_prediction(k, a, b)
    assert steady_state(gate, a, b, k) == pytest.approx(pred, abs=1e-12)
    late = kotoc_transfer(gate, a, b, k, 40).values[-1]
    assert late == pytest.approx(pred, abs=1e-8)


def test_steady_state_warns_for_non_mixing():
    with pytest.warns(UserWarning):
        steady_state(identity(2), [np.eye(2)] * 2, [np.eye(2)] * 2, 2)


def test_nu_tilde_examples():
    assert nu_tilde(P("(123)", 3), 1, 2) == P("(13)(2)", 3)
    assert nu_tilde(P("(12)", 2), 1, 2) == P("(1)(2)", 2)
    assert nu_tilde(P("(1234)", 4), 1, 3) == P("(14)(23)", 4)
    with pytest.raises(DomainError):
        nu_tilde(P("(12)(3)", 3), 1, 3)
    with pytest.raises(DomainError):
        nu_tilde(P("(12)(3)", 3), 1, 1)


@pytest.mark.parametrize("d,k", [(2, 2), (2, 3), (3, 2), (3, 3)])
def test_dressed_family(d, k):
    gate = perturbed(d)
    fam = dressed_eigenstates(gate, k)
    lam = fam.eigenvalue
    for key, r in fam.right.items():
        assert np.allclose(transfer_apply(r, gate).data, lam * r.data, atol=1e-10)
    for key, l_ in fam.left.items():
        assert np.allclose(transfer_apply(l_, gate).data, lam * l_.data, atol=1e-10)
    for (nu, n), raw in fam.raw_left.items():
        for (sigma, m), r in fam.right.items():
            if m == n:
                want = 1.0 if sigma == nu else 0.0
            else:
                same = set(nu.block_containing(m)) == set(nu.block_containing(n))
                want = 1.0 if same and sigma == nu_tilde(nu, m, n) else 0.0
            assert contract(raw, r) == pytest.approx(want, abs=1e-10)
            bi = 1.0 if (sigma, m) == (nu, n) else 0.0
            assert contract(fam.left[(nu, n)], r) == pytest.approx(bi, abs=1e-10)


def test_spectral_basis_biorthogonal():
    basis = spectral_basis(perturbed(2), 3)
    assert basis.biorthogonality_error() < 1e-10


@pytest.mark.parametrize("d,k", [(2, 2), (2, 3), (3, 2)])
def test_deflated_agrees_with_plain(d, k):
    rng = np.random.default_rng(d + k)
    gate = perturbed(d)
    a, b = ops(d, k, rng), ops(d, k, rng, traceless=True)
    x = kotoc_transfer(gate, a, b, k, 8).values
    y = kotoc_transfer_deflated(gate, a, b, k, 8).values
    assert np.allclose(x, y, atol=1e-12)


def test_deflated_resolves_below_double_floor():
    gate = perturbed(3)
    lam, a, b = channel_eigenoperators(gate)
    vals = kotoc_transfer_deflated(gate, [a, a], [b, b], 2, 30).values
    assert abs(vals[30]) < 1e-20
    ratio = abs(vals[30] / vals[29])
    assert ratio == pytest.approx(lam ** 2, rel=0.1)


def test_multi_dressed_is_gated():
    gate = perturbed(2)
    with pytest.raises(DomainError):
        multi_dressed_left(gate, NcPartition.identity(2), [1, 2])
    with pytest.raises(DomainError):
        multi_dressed_left(gate, P("(12)(3)", 3), [1, 2], enable=True)
    st, ev = multi_dressed_left(gate, NcPartition.identity(2), [1, 2], enable=True)
    lam = channel_eigenoperators(gate)[0]
    assert ev == pytest.approx(lam ** 2)
    assert np.allclose(transfer_apply(st, gate).data, ev * st.data, atol=1e-10)


def test_contract_argument_order():
    st = MarkovState.zeros(2, 2)
    with pytest.raises(DomainError):
        contract(st, st)


# influence-matrix MPS

def test_k1_influence_is_product_state():
    mps = influence_mps(1, 3)
    assert mps["A"].shape[:2] == (1, 1)
    assert np.allclose(mps["A"][0, 0], np.eye(3).ravel() / 3)


def test_k2_domain_wall_weights():
    d = 3
    mps = influence_mps(2, d)
    lat = lattice(2)
    from kotoc.replica import as_flat, perm_tensor
    full = as_flat(perm_tensor(NcPartition.full_cycle(2).perm, d))
    ident = as_flat(perm_tensor(NcPartition.identity(2).perm, d))
    # wall inside a step (odd position) costs 1, between steps (even position) -1/d_C
    assert np.allclose(mps["B"][lat.bottom, lat.top], full)
    assert np.allclose(mps["A"][lat.bottom, lat.top] * d ** 2, -full / d)
    assert np.allclose(mps["A"][lat.bottom, lat.bottom] * d ** 2, ident)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_mps_export_recontracts(tmp_path, k):
    rng = np.random.default_rng(k)
    gate = haar_random(2, 2, seed=k)
    a, b = ops(2, k, rng), ops(2, k, rng)
    path = export_influence_mps(k, 2, 4, tmp_path / "im.npz")
    mps = load_influence_mps(path)
    assert mps["metadata"]["bond_dimension"] == catalan(k)
    assert mps["A"].shape == (catalan(k), catalan(k), 2 ** (2 * k))
    got = contract_influence_mps(mps, gate, a, b)
    assert np.allclose(got, kotoc_multichain(gate, a, b, k, 4).values, atol=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_fully_dressed_diagonal_block_eigenvalue(k):
    from kotoc.replica import apply_M_raw, as_flat, bottom_tensor
    gate = perturbed(2)
    lam, a, _ = channel_eigenoperators(gate)
    for sigma in enumerate_nc(k):
        v = as_flat(bottom_tensor([a] * k, sigma.perm))
        assert np.allclose(apply_M_raw(sigma, sigma, gate, v), lam ** k * v, atol=1e-12)
