"""Lattices and two-local spin Hamiltonians.

Sites live on 1-, 2- or 3-dimensional rectangular lattices, indexed row-major
over integer coordinates.  Hamiltonians are collections of Hermitian one- and
two-site terms; the transverse-field Ising builder is the one used throughout
the experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import CapacityError

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
PAULI_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)

#: largest site count for which O(N^2) pair enumeration is allowed
_PAIR_ENUM_CAP = 4000


@dataclass(frozen=True)
class Lattice:
    """Rectangular lattice with nearest-neighbor bonds (deduplicated)."""

    dim: int
    extents: Tuple[int, ...]
    periodic: bool
    coordinates: np.ndarray  # (n_sites, dim) int
    bonds: Tuple[Tuple[int, int], ...]

    @property
    def n_sites(self) -> int:
        return self.coordinates.shape[0]

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    def site_index(self, coord: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(int(c) for c in coord), self.extents))

    def displacement(self, a: int, b: int) -> np.ndarray:
        """Minimum-image integer displacement from a to b."""
        delta = self.coordinates[b] - self.coordinates[a]
        if self.periodic:
            ext = np.asarray(self.extents)
            delta = (delta + ext // 2) % ext - ext // 2
        return delta

    def distance(self, a: int, b: int) -> float:
        return float(np.linalg.norm(self.displacement(a, b)))

    def sublattice_parity(self) -> np.ndarray:
        return (self.coordinates.sum(axis=1) % 2).astype(int)

    def all_pairs(self) -> np.ndarray:
        """(P, 2) array of all site pairs a < b.  Capped: O(N^2) storage."""
        n = self.n_sites
        if n > _PAIR_ENUM_CAP:
            raise CapacityError("all-pair enumeration for %d sites" % n)
        a, b = np.triu_indices(n, k=1)
        return np.column_stack([a, b])

    def _min_image_delta(self, delta: np.ndarray) -> np.ndarray:
        if self.periodic:
            ext = np.asarray(self.extents)
            delta = (delta + ext // 2) % ext - ext // 2
        return delta

    def pairs_within(self, r0: float) -> np.ndarray:
        """All pairs with minimum-image distance < r0."""
        n = self.n_sites
        if n <= _PAIR_ENUM_CAP:
            pairs = self.all_pairs()
            delta = self._min_image_delta(self.coordinates[pairs[:, 1]] - self.coordinates[pairs[:, 0]])
            keep = np.linalg.norm(delta, axis=1) < r0
            return pairs[keep]
        return np.concatenate(
            [p for _, p in self._displacement_classes(r0).items()] or [np.empty((0, 2), int)]
        )

    def pair_distance_classes(self, r0: Optional[float] = None) -> dict:
        """Map rounded pair distance -> (P, 2) array of pairs at that distance.

        Distances are rounded to 9 decimals so float noise cannot split a
        class.  With ``r0`` set, only pairs closer than ``r0`` appear.
        """
        n = self.n_sites
        if n <= _PAIR_ENUM_CAP:
            pairs = self.all_pairs()
            delta = self._min_image_delta(self.coordinates[pairs[:, 1]] - self.coordinates[pairs[:, 0]])
            dist = np.linalg.norm(delta, axis=1)
            if r0 is not None:
                keep = dist < r0
                pairs, dist = pairs[keep], dist[keep]
            keys = np.round(dist, 9)
            return {float(k): pairs[keys == k] for k in np.unique(keys)}
        return self._displacement_classes(r0)

    def _displacement_classes(self, r0: Optional[float]) -> dict:
        """Translation-based pair classes for large periodic lattices."""
        if not self.periodic:
            raise CapacityError("pair classes for %d open-boundary sites" % self.n_sites)
        if r0 is None:
            raise CapacityError(
                "distance classes for %d sites need a cutoff radius" % self.n_sites
            )
        ext = np.asarray(self.extents)
        reach = int(np.ceil(r0))
        ranges = [np.arange(-min(reach, e - 1), min(reach, e - 1) + 1) for e in ext]
        offsets = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, self.dim)
        coords = self.coordinates
        classes: dict = {}
        seen = set()
        for off in offsets:
            img = self._min_image_delta(off.copy())
            dist = float(np.linalg.norm(img))
            if dist == 0.0 or dist >= r0:
                continue
            key = tuple(int(x) for x in np.asarray(img) % ext)
            mirror = tuple(int(x) for x in (-np.asarray(img)) % ext)
            if key in seen or mirror in seen:
                continue  # each unordered pair family once
            seen.add(key)
            b_coords = (coords + np.asarray(img)) % ext
            b_idx = np.ravel_multi_index(tuple(b_coords.T), self.extents)
            a_idx = np.arange(self.n_sites)
            if mirror == key:
                sel = a_idx < b_idx  # the shift is an involution; drop duplicates
                pairs = np.column_stack([a_idx[sel], b_idx[sel]])
            else:
                pairs = np.column_stack([np.minimum(a_idx, b_idx), np.maximum(a_idx, b_idx)])
            dkey = float(np.round(dist, 9))
            classes.setdefault(dkey, []).append(pairs)
        return {k: np.concatenate(v) for k, v in sorted(classes.items())}


def build_lattice(dim: int, extents: Sequence[int], periodic: bool) -> Lattice:
    """Nearest-neighbor rectangular lattice.

    Wraparound bonds that coincide with an interior bond (extent 2) collapse
    to a single bond, and extent-1 axes produce no self-bonds.
    """
    if dim not in (1, 2, 3):
        raise ValueError("dim must be 1, 2 or 3")
    extents = tuple(int(e) for e in extents)
    if len(extents) != dim:
        raise ValueError("need one extent per dimension")
    if any(e < 1 for e in extents):
        raise ValueError("extents must be positive")
    shape = extents
    coords = np.indices(shape).reshape(dim, -1).T.astype(int)
    n = coords.shape[0]
    bond_set = set()
    for axis in range(dim):
        for a in range(n):
            c = coords[a].copy()
            c[axis] += 1
            if c[axis] == shape[axis]:
                if not periodic:
                    continue
                c[axis] = 0
            b = int(np.ravel_multi_index(tuple(c), shape))
            if a == b:
                continue
            bond_set.add((min(a, b), max(a, b)))
    bonds = tuple(sorted(bond_set))
    lat = Lattice(dim, extents, bool(periodic), coords, bonds)
    degree = np.zeros(n, dtype=int)
    for a, b in bonds:
        degree[a] += 1
        degree[b] += 1
    if degree.max(initial=0) > 2 * dim:
        raise AssertionError("neighbor count exceeds 2*dim")  # pragma: no cover
    return lat


def _check_hermitian(mat: np.ndarray, dim: int, what: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=complex)
    if mat.shape != (dim, dim):
        raise ValueError("%s must be %dx%d" % (what, dim, dim))
    if np.max(np.abs(mat - mat.conj().T)) > 1e-12:
        raise ValueError("%s must be Hermitian" % what)
    mat = np.ascontiguousarray(mat)
    mat.setflags(write=False)
    return mat


@dataclass(frozen=True, eq=False)
class TwoLocalObservable:
    """Hermitian observable: sum of one-site (2x2) and two-site (4x4) terms.

    Pair matrices act on ``kron(site_a, site_b)`` with ``a < b`` site order.
    """

    n_sites: int
    pair_terms: Tuple[Tuple[int, int, np.ndarray], ...] = ()
    site_terms: Tuple[Tuple[int, np.ndarray], ...] = ()

    def __post_init__(self):
        pairs = []
        for a, b, mat in self.pair_terms:
            a, b = int(a), int(b)
            if not (0 <= a < self.n_sites and 0 <= b < self.n_sites) or a == b:
                raise ValueError("pair term sites out of range")
            pairs.append((a, b, _check_hermitian(mat, 4, "pair term")))
        sites = []
        for a, mat in self.site_terms:
            a = int(a)
            if not 0 <= a < self.n_sites:
                raise ValueError("site term out of range")
            sites.append((a, _check_hermitian(mat, 2, "site term")))
        object.__setattr__(self, "pair_terms", tuple(pairs))
        object.__setattr__(self, "site_terms", tuple(sites))

    @property
    def n_terms(self) -> int:
        return len(self.pair_terms) + len(self.site_terms)


@dataclass(frozen=True, eq=False)
class TwoLocalHamiltonian(TwoLocalObservable):
    """A two-local observable tagged with the lattice it was built on."""

    lattice: Optional[Lattice] = None
    label: str = ""


def ising(lattice: Lattice, transverse_field: float) -> TwoLocalHamiltonian:
    """H = -sum_<ab> sigma_z sigma_z - B sum_a sigma_x on the lattice bonds."""
    zz = -np.kron(PAULI_Z, PAULI_Z)
    x1 = -float(transverse_field) * PAULI_X
    return TwoLocalHamiltonian(
        n_sites=lattice.n_sites,
        pair_terms=tuple((a, b, zz) for a, b in lattice.bonds),
        site_terms=tuple((a, x1) for a in range(lattice.n_sites)),
        lattice=lattice,
        label="ising(B=%g)" % float(transverse_field),
    )
