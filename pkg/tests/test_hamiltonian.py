import numpy as np
import pytest

from wgsolve.errors import CapacityError
from wgsolve.hamiltonian import (
    PAULI_X,
    PAULI_Z,
    TwoLocalObservable,
    build_lattice,
    ising,
)


class TestBuildLattice:
    def test_ring_bond_count(self):
        assert build_lattice(1, [4], True).n_bonds == 4

    def test_square_bond_count(self):
        # 2N bonds on a periodic square lattice
        assert build_lattice(2, [3, 3], True).n_bonds == 18

    def test_cube_222_dedup(self):
        # wraparound bonds coincide with interior ones at extent 2
        assert build_lattice(3, [2, 2, 2], True).n_bonds == 12

    def test_open_chain(self):
        assert build_lattice(1, [5], False).n_bonds == 4

    def test_bad_dim(self):
        with pytest.raises(ValueError):
            build_lattice(4, [2, 2, 2, 2], True)
        with pytest.raises(ValueError):
            build_lattice(2, [3], True)

    def test_bonds_are_unique_unordered_pairs(self):
        lat = build_lattice(2, [2, 4], True)
        seen = set()
        for a, b in lat.bonds:
            assert a != b
            key = (min(a, b), max(a, b))
            assert key not in seen
            seen.add(key)


class TestLatticeGeometry:
    def test_minimal_image_distance(self):
        lat = build_lattice(1, (6,), True)
        assert lat.distance(0, 5) == pytest.approx(1.0)
        assert lat.distance(0, 3) == pytest.approx(3.0)

    def test_distance_symmetric_and_triangle(self, rng):
        lat = build_lattice(2, (4, 5), True)
        n = lat.n_sites
        for _ in range(40):
            a, b, c = rng.integers(0, n, 3)
            assert lat.distance(a, b) == pytest.approx(lat.distance(b, a))
            if len({a, b, c}) == 3:
                assert lat.distance(a, c) <= (
                    lat.distance(a, b) + lat.distance(b, c) + 1e-12
                )

    def test_translation_invariance_of_bonds(self):
        # shifting every site by one lattice vector permutes the bond set
        lat = build_lattice(1, (6,), True)
        bonds = {(min(a, b), max(a, b)) for a, b in lat.bonds}
        shifted = {tuple(sorted(((a + 1) % 6, (b + 1) % 6))) for a, b in bonds}
        assert bonds == shifted

    def test_distance_classes_match_brute_force(self):
        lat = build_lattice(2, (3, 4), True)
        classes = lat.pair_distance_classes()
        total = sum(len(p) for p in classes.values())
        n = lat.n_sites
        assert total == n * (n - 1) // 2
        for dist, pairs in classes.items():
            for a, b in pairs:
                assert lat.distance(a, b) == pytest.approx(dist, abs=1e-8)

    def test_displacement_classes_agree_with_small_path(self):
        # the large-lattice displacement route must partition pairs identically
        lat = build_lattice(2, (4, 4), True)
        small = lat.pair_distance_classes(r0=2.2)
        large = lat._displacement_classes(r0=2.2)
        assert set(small) == set(large)
        for key in small:
            s = {tuple(sorted(p)) for p in small[key].tolist()}
            l = {tuple(sorted(p)) for p in large[key].tolist()}
            assert s == l

    def test_all_pairs_capacity(self):
        lat = build_lattice(3, (30, 30, 30), True)
        with pytest.raises(CapacityError):
            lat.all_pairs()


class TestIsing:
    def test_term_structure(self):
        lat = build_lattice(1, (4,), True)
        h = ising(lat, transverse_field=0.7)
        assert len(h.pair_terms) == 4
        assert len(h.site_terms) == 4
        for _, _, mat in h.pair_terms:
            np.testing.assert_array_equal(mat, -np.kron(PAULI_Z, PAULI_Z))
        for _, mat in h.site_terms:
            np.testing.assert_allclose(mat, -0.7 * PAULI_X)

    def test_classical_limit_energy(self):
        from wgsolve.oracle import exact_ground_energy

        lat = build_lattice(1, (4,), True)
        assert exact_ground_energy(ising(lat, 0.0)) == pytest.approx(-4.0)

    def test_observable_validation(self):
        with pytest.raises(ValueError):
            TwoLocalObservable(
                n_sites=2, pair_terms=((0, 0, np.eye(4)),), site_terms=()
            )
        with pytest.raises(ValueError):
            TwoLocalObservable(
                n_sites=2, pair_terms=(), site_terms=((0, np.array([[0.0, 1.0], [0.0, 0.0]])),)
            )
        with pytest.raises(ValueError):
            TwoLocalObservable(n_sites=1, pair_terms=((0, 1, np.eye(4)),), site_terms=())
