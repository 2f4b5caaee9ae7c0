"""Dense / iterative diagonalization baselines and the cluster lower bound."""

import numpy as np
import pytest

from wgsolve.errors import CapacityError
from wgsolve.hamiltonian import (
    PAULI_X,
    PAULI_Z,
    TwoLocalHamiltonian,
    TwoLocalObservable,
    build_lattice,
    ising,
)
from wgsolve.oracle import (
    anderson_bound,
    apply_observable,
    brute_reduced,
    build_dense_matrix,
    decompose_clusters,
    exact_ground_energy,
    exact_ground_state,
    lanczos_ground_energy,
)


def chain(n, b, periodic=True):
    return ising(build_lattice(1, (n,), periodic=periodic), b)


def tfim_energy_periodic(n, b):
    """Closed-form ground energy of the periodic transverse-field chain."""
    k = np.pi * (2 * np.arange(n) + 1) / n
    return -float(np.sum(np.sqrt(1.0 + b * b - 2.0 * b * np.cos(k))))


class TestDenseBaseline:
    def test_two_site_closed_form(self):
        assert exact_ground_energy(chain(2, 1.0, periodic=False)) == pytest.approx(
            -np.sqrt(5.0), abs=1e-12
        )

    def test_zero_field_is_classical(self):
        for n in (4, 6):
            h = chain(n, 0.0)
            assert exact_ground_energy(h) == pytest.approx(-float(n), abs=1e-12)

    def test_dense_matrix_matches_apply(self, rng):
        h = chain(5, 0.8)
        mat = build_dense_matrix(h)
        v = rng.normal(size=32) + 1j * rng.normal(size=32)
        np.testing.assert_allclose(apply_observable(h, v), mat @ v, atol=1e-12)

    def test_ground_state_pair_consistent(self):
        h = chain(6, 1.2)
        e, vec = exact_ground_state(h)
        np.testing.assert_allclose(apply_observable(h, vec), e * vec, atol=1e-10)
        assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-12)
        assert e == pytest.approx(exact_ground_energy(h, method="dense"), abs=1e-12)

    def test_dense_cap(self):
        with pytest.raises(CapacityError):
            exact_ground_energy(chain(18, 1.0), method="dense")


class TestLanczosBaseline:
    def test_agrees_with_dense(self):
        for b in (0.4, 1.0, 1.7):
            h = chain(10, b)
            dense = exact_ground_energy(h, method="dense")
            lan = exact_ground_energy(h, method="lanczos")
            assert lan == pytest.approx(dense, abs=1e-7)

    def test_agrees_with_closed_form(self):
        h = chain(14, 1.0)
        assert lanczos_ground_energy(h) == pytest.approx(
            tfim_energy_periodic(14, 1.0), abs=1e-8
        )

    def test_closed_form_matches_dense_small(self):
        for n, b in ((8, 0.5), (10, 1.3)):
            assert exact_ground_energy(chain(n, b), method="dense") == pytest.approx(
                tfim_energy_periodic(n, b), abs=1e-10
            )

    def test_auto_dispatch_and_cap(self):
        # auto uses the dense path when it fits and the iterative one above it
        h = chain(11, 0.9)
        assert exact_ground_energy(h, method="auto") == pytest.approx(
            exact_ground_energy(h, method="dense"), abs=1e-7
        )
        with pytest.raises(CapacityError):
            exact_ground_energy(chain(25, 1.0), method="lanczos")
        with pytest.raises(ValueError):
            exact_ground_energy(h, method="qmc")


class TestBruteReduced:
    def test_product_state_is_pure(self):
        psi = np.ones(8) / np.sqrt(8.0)
        rho = brute_reduced(psi, [1], 3)
        np.testing.assert_allclose(rho, 0.5 * np.ones((2, 2)), atol=1e-12)

    def test_bell_marginal_is_mixed(self):
        psi = np.zeros(4)
        psi[0] = psi[3] = 1 / np.sqrt(2.0)
        np.testing.assert_allclose(brute_reduced(psi, [0], 2), 0.5 * np.eye(2), atol=1e-12)

    def test_purity_matches_complement(self, rng):
        n = 6
        psi = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
        psi /= np.linalg.norm(psi)
        block = [0, 3, 4]
        rest = [1, 2, 5]
        pa = float(np.trace(brute_reduced(psi, block, n) @ brute_reduced(psi, block, n)).real)
        pb = float(np.trace(brute_reduced(psi, rest, n) @ brute_reduced(psi, rest, n)).real)
        assert pa == pytest.approx(pb, rel=1e-10)

    def test_site_order_is_significant(self, rng):
        n = 4
        psi = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
        psi /= np.linalg.norm(psi)
        r01 = brute_reduced(psi, [0, 1], n)
        r10 = brute_reduced(psi, [1, 0], n)
        swap = np.zeros((4, 4))
        swap[0, 0] = swap[3, 3] = swap[1, 2] = swap[2, 1] = 1.0
        np.testing.assert_allclose(r10, swap @ r01 @ swap, atol=1e-12)

    def test_input_checks(self):
        psi = np.ones(16) / 4.0
        with pytest.raises(ValueError):
            brute_reduced(psi, [1, 1], 4)
        with pytest.raises(CapacityError):
            brute_reduced(np.ones(2**12) / 2.0**6, list(range(11)), 12)


class TestClusterDecomposition:
    def test_pieces_sum_to_whole(self):
        h = chain(6, 1.1)
        decomp = decompose_clusters(h, (2,))
        total = np.zeros((2**6, 2**6), dtype=complex)
        for cl in decomp.clusters:
            local = build_dense_matrix(cl.hamiltonian)
            embed = _embed(local, cl.sites, 6)
            total += embed
        np.testing.assert_allclose(total, build_dense_matrix(h), atol=1e-12)

    def test_every_bond_lands_once(self):
        h = ising(build_lattice(2, (4, 4), periodic=True), 2.0)
        decomp = decompose_clusters(h, (2, 2))
        n_pair = sum(len(cl.hamiltonian.pair_terms) for cl in decomp.clusters)
        assert n_pair == len(h.pair_terms)
        shares = np.zeros(h.n_sites)
        for cl in decomp.clusters:
            for g, frac in cl.field_fractions:
                shares[g] += frac
        np.testing.assert_allclose(shares, 1.0, atol=1e-12)

    def test_shape_validation(self):
        h = chain(6, 1.0)
        with pytest.raises(ValueError):
            decompose_clusters(h, (4,))  # does not tile 6
        with pytest.raises(ValueError):
            decompose_clusters(h, (2, 2))  # wrong dimensionality
        bare = TwoLocalHamiltonian(2, ((0, 1, np.kron(PAULI_Z, PAULI_Z)),), ())
        with pytest.raises(ValueError):
            decompose_clusters(bare, (1,))


def _embed(local, sites, n):
    """Lift a k-site operator (listed-site order) to the full register."""
    dim = 2**n
    out = np.zeros((dim, dim), dtype=complex)
    k = len(sites)
    rest = [a for a in range(n) if a not in sites]
    for s in range(dim):
        sb = [(s >> (n - 1 - p)) & 1 for p in range(n)]
        row = sum(sb[a] << (k - 1 - i) for i, a in enumerate(sites))
        for t in range(2**k):
            tb = list(sb)
            for i, a in enumerate(sites):
                tb[a] = (t >> (k - 1 - i)) & 1
            tt = sum(bit << (n - 1 - p) for p, bit in enumerate(tb))
            out[tt, s] += local[t, row]
    return out


class TestAndersonBound:
    def test_zero_field_single_bonds_are_tight(self):
        h = chain(8, 0.0)
        assert anderson_bound(h, (1,)) == pytest.approx(-8.0, abs=1e-10)
        assert anderson_bound(h, (1,)) == pytest.approx(exact_ground_energy(h), abs=1e-10)

    def test_lower_bounds_exact(self):
        cases = [
            (chain(8, 0.5), (2,)),
            (chain(8, 1.5), (4,)),
            (ising(build_lattice(2, (3, 3), periodic=True), 2.5), (3, 1)),
        ]
        for h, shape in cases:
            lower = anderson_bound(h, shape)
            exact = exact_ground_energy(h)
            assert lower <= exact + 1e-9

    def test_larger_clusters_tighten(self):
        h = chain(20, 1.0)
        b4 = anderson_bound(h, (4,))
        b5 = anderson_bound(h, (5,))
        assert b5 >= b4 - 1e-12
        assert b5 <= tfim_energy_periodic(20, 1.0) + 1e-9
