"""Brute-force ground truths: exact diagonalization, dense partial traces,
and a rigorous cluster lower bound on the ground energy.

Everything here is deliberately independent of the block-evaluation engine so
it can arbitrate it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .errors import CapacityError
from .hamiltonian import TwoLocalHamiltonian, TwoLocalObservable, build_lattice

#: caps for the two diagonalization paths
DENSE_SITE_CAP = 16
LANCZOS_SITE_CAP = 24

#: dense partial-trace cap on the kept block
BRUTE_BLOCK_CAP = 10


def apply_observable(obs: TwoLocalObservable, psi: np.ndarray) -> np.ndarray:
    """Matrix-free observable application; psi may carry a trailing batch axis."""
    n = obs.n_sites
    real = not np.iscomplexobj(psi) and _is_real(obs)
    shape = (2,) * n + ((psi.shape[1],) if psi.ndim == 2 else ())
    t = psi.reshape(shape) if real or np.iscomplexobj(psi) else psi.astype(complex).reshape(shape)
    out = np.zeros_like(t)
    for a, b, mat in obs.pair_terms:
        m = mat.real if real else mat
        piece = np.tensordot(m.reshape(2, 2, 2, 2), t, axes=([2, 3], [a, b]))
        out += np.moveaxis(piece, [0, 1], [a, b])
    for a, mat in obs.site_terms:
        m = mat.real if real else mat
        piece = np.tensordot(m, t, axes=([1], [a]))
        out += np.moveaxis(piece, 0, a)
    return out.reshape(psi.shape)


def build_dense_matrix(obs: TwoLocalObservable) -> np.ndarray:
    """Materialize the full 2^N x 2^N matrix (dense cap applies)."""
    n = obs.n_sites
    if n > DENSE_SITE_CAP:
        raise CapacityError("dense matrix for %d sites exceeds the %d-site cap" % (n, DENSE_SITE_CAP))
    dim = 1 << n
    return apply_observable(obs, np.eye(dim, dtype=complex))


def _is_real(obs: TwoLocalObservable) -> bool:
    return all(np.all(m.imag == 0) for _, _, m in obs.pair_terms) and all(
        np.all(m.imag == 0) for _, m in obs.site_terms
    )


def lanczos_ground_energy(
    obs: TwoLocalObservable,
    seed: int = 7,
    max_steps: int = 400,
    rel_residual: float = 1e-8,
) -> float:
    """Smallest eigenvalue by Lanczos with full reorthogonalization.

    Seeded random start vector; iteration stops once the Ritz residual
    ``beta * |last eigenvector component|`` drops below ``rel_residual * |theta|``.
    """
    n = obs.n_sites
    if n > LANCZOS_SITE_CAP:
        raise CapacityError("Lanczos for %d sites exceeds the %d-site cap" % (n, LANCZOS_SITE_CAP))
    dim = 1 << n
    rng = np.random.default_rng(seed)
    dtype = float if _is_real(obs) else complex
    v = rng.standard_normal(dim)
    if dtype is complex:
        v = v + 1j * rng.standard_normal(dim)
    v = (v / np.linalg.norm(v)).astype(dtype)

    basis: List[np.ndarray] = [v]
    alphas: List[float] = []
    betas: List[float] = []
    theta = None
    for step in range(1, max_steps + 1):
        w = apply_observable(obs, basis[-1])
        alphas.append(float(np.vdot(basis[-1], w).real))
        vmat = np.stack(basis, axis=1)
        for _ in range(2):  # full reorthogonalization, twice for safety
            w = w - vmat @ (vmat.conj().T @ w)
        beta = float(np.linalg.norm(w))
        evals, evecs = scipy.linalg.eigh_tridiagonal(alphas, betas, select="a")
        theta = float(evals[0])
        residual = beta * abs(evecs[-1, 0])
        if residual < rel_residual * max(abs(theta), 1e-30) or beta < 1e-14 or step == dim:
            return theta
        betas.append(beta)
        basis.append(w / beta)
    raise RuntimeError("Lanczos did not converge in %d steps (theta=%r)" % (max_steps, theta))


def exact_ground_state(obs: TwoLocalObservable) -> Tuple[float, np.ndarray]:
    """Dense ground energy and a matching eigenvector (small systems only)."""
    if obs.n_sites > DENSE_SITE_CAP:
        raise CapacityError(
            "dense ground state beyond %d sites; use exact_ground_energy" % DENSE_SITE_CAP
        )
    mat = build_dense_matrix(obs)
    vals, vecs = scipy.linalg.eigh(mat, subset_by_index=(0, 0))
    return float(vals[0]), vecs[:, 0]


def exact_ground_energy(obs: TwoLocalObservable, method: str = "auto", seed: int = 7) -> float:
    """Exact ground-state energy via dense eigh (small) or Lanczos (medium).

    ``auto`` picks dense up to 12 sites and the iterative path up to the
    24-site cap; beyond that a CapacityError is raised.
    """
    n = obs.n_sites
    if method == "auto":
        method = "dense" if n <= 12 else "lanczos"
    if method == "dense":
        mat = build_dense_matrix(obs)
        return float(scipy.linalg.eigvalsh(mat)[0])
    if method == "lanczos":
        return lanczos_ground_energy(obs, seed=seed)
    raise ValueError("unknown method %r" % method)


def brute_reduced(psi: np.ndarray, sites: Sequence[int], n_sites: int) -> np.ndarray:
    """Partial trace of a dense state vector onto ``sites`` (in the given order).

    The first listed site is the most significant bit of the block index,
    matching the block-evaluation convention.
    """
    sites = [int(a) for a in sites]
    if len(sites) > BRUTE_BLOCK_CAP:
        raise CapacityError("brute partial trace beyond the %d-site cap" % BRUTE_BLOCK_CAP)
    if len(set(sites)) != len(sites):
        raise ValueError("block sites must be distinct")
    dim = 1 << n_sites
    psi = np.asarray(psi, dtype=complex).reshape(dim)
    t = psi.reshape((2,) * n_sites)
    t = np.moveaxis(t, sites, range(len(sites)))
    mat = t.reshape(1 << len(sites), -1)
    rho = mat @ mat.conj().T
    tr = float(np.trace(rho).real)
    return rho / tr


# -- cluster lower bound -------------------------------------------------------


@dataclass(frozen=True)
class Cluster:
    """One piece of an exact Hamiltonian decomposition."""

    sites: Tuple[int, ...]  # global site indices
    hamiltonian: TwoLocalObservable  # local-index observable on len(sites) sites
    field_fractions: Tuple[Tuple[int, float], ...]  # (global site, share) bookkeeping


@dataclass(frozen=True)
class ClusterDecomposition:
    """H = sum of cluster Hamiltonians; every pair term lands in exactly one cluster."""

    clusters: Tuple[Cluster, ...]


def decompose_clusters(ham: TwoLocalHamiltonian, cluster_shape: Sequence[int]) -> ClusterDecomposition:
    """Tile the lattice into blocks of ``cluster_shape`` sites.

    Internal bonds stay with their tile; every tile-crossing bond becomes its
    own two-site cluster.  Each site's field terms are split over the clusters
    it belongs to in proportion to the bond incidences the cluster keeps, so
    the cluster Hamiltonians sum exactly to ``ham``.
    """
    lat = ham.lattice
    if lat is None:
        raise ValueError("cluster decomposition needs the Hamiltonian's lattice")
    shape = tuple(int(c) for c in cluster_shape)
    if len(shape) != lat.dim or any(c < 1 for c in shape):
        raise ValueError("cluster shape must give a positive extent per dimension")
    if any(e % c for e, c in zip(lat.extents, shape)):
        raise ValueError("cluster shape %r does not tile extents %r" % (shape, lat.extents))

    coords = lat.coordinates
    tile_of = np.ravel_multi_index(
        tuple(coords[:, i] // shape[i] for i in range(lat.dim)),
        tuple(e // c for e, c in zip(lat.extents, shape)),
    )
    degree = np.zeros(lat.n_sites, dtype=int)
    for a, b, _ in ham.pair_terms:
        degree[a] += 1
        degree[b] += 1

    # incidences kept by each cluster; tiles first, crossing bonds after
    n_tiles = int(tile_of.max()) + 1 if lat.n_sites else 0
    tile_sites = [np.nonzero(tile_of == t)[0] for t in range(n_tiles)]
    tile_bonds: List[List[Tuple[int, int, np.ndarray]]] = [[] for _ in range(n_tiles)]
    crossing: List[Tuple[int, int, np.ndarray]] = []
    tile_inc = [dict() for _ in range(n_tiles)]
    for a, b, mat in ham.pair_terms:
        if tile_of[a] == tile_of[b]:
            t = int(tile_of[a])
            tile_bonds[t].append((a, b, mat))
            tile_inc[t][a] = tile_inc[t].get(a, 0) + 1
            tile_inc[t][b] = tile_inc[t].get(b, 0) + 1
        else:
            crossing.append((a, b, mat))

    site_field = {a: mat for a, mat in ham.site_terms}
    clusters: List[Cluster] = []

    def _local_obs(sites: np.ndarray, bonds, fractions) -> TwoLocalObservable:
        index = {int(g): i for i, g in enumerate(sites)}
        pair_terms = tuple((index[a], index[b], mat) for a, b, mat in bonds)
        site_terms = tuple(
            (index[g], frac * site_field[g]) for g, frac in fractions if g in site_field
        )
        return TwoLocalObservable(len(sites), pair_terms, site_terms)

    for t in range(n_tiles):
        sites = tile_sites[t]
        fractions = []
        for g in sites:
            g = int(g)
            if degree[g] == 0:
                fractions.append((g, 1.0))  # isolated site: its tile keeps the field
            else:
                inc = tile_inc[t].get(g, 0)
                if inc:
                    fractions.append((g, inc / degree[g]))
        clusters.append(
            Cluster(tuple(int(g) for g in sites), _local_obs(sites, tile_bonds[t], fractions), tuple(fractions))
        )
    for a, b, mat in crossing:
        sites = np.array(sorted((a, b)))
        fractions = [(int(g), 1.0 / degree[int(g)]) for g in sites]
        clusters.append(
            Cluster(tuple(int(g) for g in sites), _local_obs(sites, [(a, b, mat)], fractions), tuple(fractions))
        )
    return ClusterDecomposition(tuple(clusters))


def anderson_bound(ham: TwoLocalHamiltonian, cluster_shape: Sequence[int], seed: int = 7) -> float:
    """Lower bound on the ground energy: sum of exact cluster ground energies.

    Valid because the clusters sum exactly to ``ham`` and the minimum of a sum
    is at least the sum of minima.
    """
    decomp = decompose_clusters(ham, cluster_shape)
    total = 0.0
    for cl in decomp.clusters:
        n = len(cl.sites)
        if n > LANCZOS_SITE_CAP:
            raise CapacityError("cluster of %d sites exceeds the diagonalization cap" % n)
        total += exact_ground_energy(cl.hamiltonian, seed=seed)
    return total
