"""Few-site reduced operators of graph-state superpositions, without 2^N work.

Tracing all but ``k`` sites of an ``m``-branch superposition leaves, for every
ordered branch pair and every pair of block bit strings ``(s, t)``, a product
over the traced sites::

    prod_c ( 1 + exp( d_c^(i) + conj(d_c^(j)) - i * sum_p (s_p - t_p) gamma[a_p, c] ) )

dressed by the block's own phases and deformation factors.  Everything here
is evaluated in the log domain (principal-branch logs, phases carried as a
running sum) and exponentiated only relative to the log of the squared norm,
so systems far beyond dense-vector reach stay in double range.

The engine caches, per ansatz, the site-wise log factors and their full-lattice
sums; a block then only *corrects* the sites whose phase row couples to it.
For short-ranged graphs that correction is O(1) per block, which is what makes
expectation values on long chains scale linearly with both the term count and
the site count.

A factor whose magnitude drops below 1e-300 is treated as an exact zero and
short-circuits its branch pair (the log path would otherwise produce -inf).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Optional, Sequence, Tuple

import numpy as np

from .core import SuperpositionAnsatz, _bit_table
from .errors import CapacityError, DegenerateStateError, NumericRangeError

#: default cap on block size (entries scale as 4^k)
MAX_BLOCK_SITES = 12

_ZERO_FLOOR = 1e-300


def log1p_exp(z: np.ndarray):
    """Stable elementwise log(1 + exp(z)) for complex z.

    Returns ``(values, zero_mask)``; where ``zero_mask`` is set the factor
    1 + exp(z) vanished below the 1e-300 floor and the log value is a
    placeholder that must not be used.
    """
    z = np.asarray(z, dtype=complex)
    flip = z.real > 0.0
    zm = np.where(flip, -z, z)  # Re(zm) <= 0, so |exp(zm)| <= 1
    ez = np.exp(zm)
    zero = np.abs(1.0 + ez) < _ZERO_FLOOR
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.log1p(np.where(zero, 0.0, ez))
    return np.where(flip, z + w, w), zero


def _delta_table(k: int) -> np.ndarray:
    """(3^k, k) table of block bit-string differences, first site most significant."""
    idx = np.arange(3**k)
    digits = (idx[:, None] // (3 ** np.arange(k - 1, -1, -1))) % 3
    return (digits - 1).astype(np.int8)


def _class_index(k: int) -> np.ndarray:
    """(2^k, 2^k) int map from (s, t) to the row of `_delta_table` with delta = s - t."""
    bits = _bit_table(k).astype(np.int64)
    pow3 = 3 ** np.arange(k - 1, -1, -1)
    a = bits @ pow3
    return (a[:, None] - a[None, :] + int(pow3.sum())).astype(np.int32)


class _EvalCache:
    """Per-ansatz state shared by every block/norm evaluation."""

    def __init__(self, ansatz: SuperpositionAnsatz):
        d = ansatz.deformations.values  # (n, m)
        self.n = ansatz.n_sites
        self.m = ansatz.n_branches
        self.alpha = ansatz.weights
        self.d = d
        # base[i, j, c] = d_c^(i) + conj(d_c^(j))
        self.base = d.T[:, None, :] + d.conj().T[None, :, :]
        logs, zeros = log1p_exp(self.base)
        self.log_factors = np.where(zeros, 0.0, logs)
        self.zero_mask = zeros
        self.zero_count = zeros.sum(axis=2)
        self.s0 = self.log_factors.sum(axis=2)  # zero factors excluded
        self.graph = ansatz.graph
        self._rows: dict = {}
        self._coupled: dict = {}
        self.log_norm2 = self._log_norm2()

    def _log_norm2(self) -> float:
        live = self.zero_count == 0
        outer = self.alpha[:, None] * self.alpha.conj()[None, :]
        live &= outer != 0.0
        if not live.any():
            raise DegenerateStateError("every branch pair cancels; zero-norm state")
        ref = float(self.s0.real[live].max())
        total = complex((outer * np.where(live, np.exp(self.s0 - ref), 0.0)).sum())
        if abs(total.imag) > 1e-10 * abs(total.real):
            raise NumericRangeError("squared norm has imaginary residue %g" % total.imag)
        if total.real <= 0.0:
            raise DegenerateStateError("branches cancel to a zero-norm state")
        return ref + float(np.log(total.real))

    def gamma_row(self, a: int) -> np.ndarray:
        row = self._rows.get(a)
        if row is None:
            row = self._rows[a] = self.graph.row(a)
        return row

    def coupled(self, a: int) -> np.ndarray:
        cp = self._coupled.get(a)
        if cp is None:
            cp = self._coupled[a] = self.graph.coupled_sites(a)
        return cp


def _cache(ansatz: SuperpositionAnsatz) -> _EvalCache:
    cache = getattr(ansatz, "_reduction_cache", None)
    if cache is None:
        cache = _EvalCache(ansatz)
        object.__setattr__(ansatz, "_reduction_cache", cache)
    return cache


def _block_env(cache: _EvalCache, sites: np.ndarray):
    """Environment log-products for one block.

    Returns ``(env, env_zero)`` with shapes (m, m, 3^k): the complex log of
    the traced-site product for every branch pair and every difference class,
    and the exact-zero flags.
    """
    k = len(sites)
    m = cache.m
    in_block = np.zeros(cache.n, dtype=bool)
    in_block[sites] = True
    corr = in_block.copy()
    for a in sites:
        corr[cache.coupled(a)] = True
    corr_idx = np.nonzero(corr)[0]
    env_sites = corr_idx[~in_block[corr_idx]]

    live_sub = np.where(cache.zero_mask[:, :, corr_idx], 0.0, cache.log_factors[:, :, corr_idx])
    env_base = cache.s0 - live_sub.sum(axis=2)  # (m, m)
    zeros_in_corr = cache.zero_mask[:, :, corr_idx].sum(axis=2)
    dead_outside = (cache.zero_count - zeros_in_corr) > 0  # (m, m)

    n_cls = 3**k
    gamma_rows = np.stack([cache.gamma_row(a)[env_sites] for a in sites]) if k else np.zeros((0, 0))
    deltas = _delta_table(k).astype(float)
    env = np.empty((m, m, n_cls), dtype=complex)
    env_zero = np.empty((m, m, n_cls), dtype=bool)
    base_env = cache.base[:, :, env_sites]
    # slab the difference classes so k up to the cap stays in bounded memory
    slab = max(1, int(2e7 // max(1, m * m * max(1, env_sites.size))))
    for lo in range(0, n_cls, slab):
        hi = min(n_cls, lo + slab)
        shift = deltas[lo:hi] @ gamma_rows if env_sites.size else np.zeros((hi - lo, 0))
        z = base_env[:, :, None, :] - 1j * shift[None, None, :, :]
        logs, zero = log1p_exp(z)
        env[:, :, lo:hi] = env_base[:, :, None] + np.where(zero, 0.0, logs).sum(axis=3)
        env_zero[:, :, lo:hi] = zero.any(axis=3)
    env_zero |= dead_outside[:, :, None]
    return env, env_zero


def _branch_blocks(
    ansatz: SuperpositionAnsatz,
    sites: Sequence[int],
    *,
    strip_deformation_at: Optional[int] = None,
    drop_internal_phase: Optional[Tuple[int, int]] = None,
    relative: bool = True,
):
    """Branch-pair-resolved block entries, before weights and local unitaries.

    Shape (m, m, 2^k, 2^k); index order ``[i, j, s, t]`` with branch ``i`` on
    the ket side.  ``relative=True`` divides by the squared norm (in the log
    domain).  ``strip_deformation_at`` omits one block site's deformation
    factors (the site being re-linearized during sweeps);
    ``drop_internal_phase`` omits one in-block phase from the quadratic form
    (the phase being swept in closed form).
    """
    cache = _cache(ansatz)
    sites = np.asarray([int(a) for a in sites])
    k = sites.size
    if k == 0 or len(set(sites.tolist())) != k:
        raise ValueError("block sites must be distinct and non-empty")
    if np.any(sites < 0) or np.any(sites >= cache.n):
        raise ValueError("block site out of range")

    env, env_zero = _block_env(cache, sites)
    shiftref = cache.log_norm2 if relative else 0.0

    bits = _bit_table(k).astype(float)  # (2^k, k)
    d_block = cache.d[sites, :].copy()  # (k, m)
    if strip_deformation_at is not None:
        pos = np.nonzero(sites == strip_deformation_at)[0]
        if pos.size != 1:
            raise ValueError("strip site must be one of the block sites")
        d_block[pos[0], :] = 0.0
    log_d = bits @ d_block  # (2^k, m)

    gam = np.empty((k, k))
    for p, a in enumerate(sites):
        row = cache.gamma_row(a)
        gam[p] = row[sites]
    if drop_internal_phase is not None:
        a, b = drop_internal_phase
        pa = np.nonzero(sites == a)[0]
        pb = np.nonzero(sites == b)[0]
        if pa.size != 1 or pb.size != 1:
            raise ValueError("dropped phase pair must lie inside the block")
        gam[pa[0], pb[0]] = gam[pb[0], pa[0]] = 0.0
    quad = 0.5 * np.einsum("si,ij,sj->s", bits, gam, bits)

    cls = _class_index(k)
    env_full = env[:, :, cls]  # (m, m, 2^k, 2^k)
    dead = env_zero[:, :, cls]
    expo = (
        log_d.T[:, None, :, None]
        + log_d.conj().T[None, :, None, :]
        + (-1j) * (quad[:, None] - quad[None, :])[None, None, :, :]
        + env_full
        - shiftref
    )
    block = np.where(dead, 0.0, np.exp(np.where(dead, 0.0, expo)))
    if not np.all(np.isfinite(block)):
        bad = np.argwhere(~np.isfinite(block).all(axis=(2, 3)))
        pair = tuple(bad[0]) if bad.size else ("?", "?")
        raise NumericRangeError(
            "non-finite block entries for branch pair %s despite log-domain evaluation" % (pair,)
        )
    return block


@dataclass(frozen=True, eq=False)
class GramBlock:
    """Unnormalized pre-unitary block matrix; true values are entries * exp(log_scale).

    The scale is folded into the entries whenever that stays in double range,
    so at desk scales ``log_scale`` is simply 0.
    """

    sites: Tuple[int, ...]
    entries: np.ndarray
    log_scale: float = 0.0

    def __post_init__(self):
        e = np.asarray(self.entries)
        scale = max(np.max(np.abs(e)), 1e-300)
        if np.max(np.abs(e - e.conj().T)) > 1e-10 * scale:
            raise ValueError("gram block is not Hermitian")
        tr = complex(np.trace(e))
        if abs(tr.imag) > 1e-10 * abs(tr.real) or tr.real <= 0.0:
            raise DegenerateStateError("gram block trace must be real and positive")

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries).real) * float(np.exp(self.log_scale))

    def validate(self):
        """Full (eigenvalue) check: positive semidefinite within tolerance."""
        w = np.linalg.eigvalsh(self.entries)
        tr = float(np.trace(self.entries).real)
        if w.min() < -1e-10 * tr:
            raise ValueError("gram block has a negative eigenvalue beyond tolerance")
        return self


@dataclass(frozen=True, eq=False)
class ReducedDensity:
    """Normalized k-site density matrix in the physical (post-unitary) basis."""

    sites: Tuple[int, ...]
    matrix: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.matrix)
        scale = max(np.max(np.abs(rho)), 1e-300)
        if np.max(np.abs(rho - rho.conj().T)) > 1e-10 * scale:
            raise ValueError("reduced density is not Hermitian")
        if abs(complex(np.trace(rho)) - 1.0) > 1e-12:
            raise ValueError("reduced density trace differs from one")

    def validate(self):
        w = np.linalg.eigvalsh(self.matrix)
        if w.min() < -1e-10:
            raise ValueError("reduced density has a negative eigenvalue beyond tolerance")
        return self


@dataclass
class EvalCounters:
    """Telemetry for expectation evaluation (block reuse under symmetry)."""

    terms: int = 0
    block_builds: int = 0
    cache_hits: int = 0


def log_norm_squared(ansatz: SuperpositionAnsatz) -> float:
    """log <psi|psi> of the unnormalized superposition (overflow-safe)."""
    return _cache(ansatz).log_norm2


def norm_squared(ansatz: SuperpositionAnsatz) -> float:
    """<psi|psi> of the unnormalized superposition (invariant under the local unitaries)."""
    with np.errstate(over="ignore"):
        val = float(np.exp(_cache(ansatz).log_norm2))
    if not np.isfinite(val):
        raise NumericRangeError("squared norm overflows double range; use log_norm_squared")
    return val


def branch_overlaps(ansatz: SuperpositionAnsatz) -> np.ndarray:
    """(m, m) matrix of unnormalized branch overlaps <psi_i|psi_j>."""
    cache = _cache(ansatz)
    vals = np.where(cache.zero_count > 0, 0.0, np.exp(np.conj(cache.s0)))
    if not np.all(np.isfinite(vals)):
        raise NumericRangeError("branch overlaps overflow double range")
    return vals


def gram_block(ansatz: SuperpositionAnsatz, sites: Sequence[int], max_block: int = MAX_BLOCK_SITES) -> GramBlock:
    """Unnormalized pre-unitary block of the superposition on ``sites``.

    The trace of every gram block equals the squared norm.  Entries are
    computed relative to the squared norm and rescaled, so only the final
    materialization can leave double range (then the scale stays in
    ``log_scale``).
    """
    sites = tuple(int(a) for a in sites)
    if len(sites) > max_block:
        raise CapacityError("block of %d sites exceeds the %d-site cap" % (len(sites), max_block))
    blocks = _branch_blocks(ansatz, sites)
    cache = _cache(ansatz)
    rel = np.einsum("i,j,ijst->st", cache.alpha, cache.alpha.conj(), blocks)
    scale = cache.log_norm2
    if abs(scale) < 600.0:
        return GramBlock(sites, rel * np.exp(scale), 0.0)
    return GramBlock(sites, rel, scale)


def _raw_reduced(ansatz: SuperpositionAnsatz, sites: Tuple[int, ...]) -> np.ndarray:
    """Normalized reduced block before the local-unitary dressing."""
    cache = _cache(ansatz)
    blocks = _branch_blocks(ansatz, sites)
    rel = np.einsum("i,j,ijst->st", cache.alpha, cache.alpha.conj(), blocks)
    tr = complex(np.trace(rel))
    if not (abs(tr - 1.0) < 1e-6):
        raise NumericRangeError("normalized block trace drifted to %r" % tr)
    return rel / tr.real  # exact renormalization of the log-domain rounding


def reduced_density(ansatz: SuperpositionAnsatz, sites: Sequence[int], max_block: int = MAX_BLOCK_SITES) -> ReducedDensity:
    """Normalized reduced density operator on ``sites`` (local unitaries applied)."""
    sites = tuple(int(a) for a in sites)
    if len(sites) > max_block:
        raise CapacityError("block of %d sites exceeds the %d-site cap" % (len(sites), max_block))
    rel = _raw_reduced(ansatz, sites)
    w = reduce(np.kron, [ansatz.unitaries.matrices[a] for a in sites])
    rho = w @ rel @ w.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return ReducedDensity(sites, rho)


def _pair_norms_excluding(ansatz: SuperpositionAnsatz, site: int) -> np.ndarray:
    """(m, m) products of all per-site norm factors except ``site``, over the squared norm.

    Entry [i, j] multiplies alpha_i * conj(alpha_j) in the one-site-removed
    norm quadratic form used by the joint weight/deformation sweep.
    """
    cache = _cache(ansatz)
    part = cache.s0 - cache.log_factors[:, :, site]
    dead = (cache.zero_count - cache.zero_mask[:, :, site]) > 0
    return np.where(dead, 0.0, np.exp(part - cache.log_norm2))


def _ti_enabled(ansatz: SuperpositionAnsatz) -> bool:
    """Whether term supports related by a lattice translation share evaluations."""
    prof = ansatz.symmetry
    return (
        prof is not None
        and prof.mode == "fully_translation_invariant"
        and prof.lattice is not None
        and prof.lattice.periodic
    )


def _ti_class_key(ansatz: SuperpositionAnsatz, sites, matrix: np.ndarray):
    """Cache key making two terms interchangeable under full translation symmetry."""
    prof = ansatz.symmetry
    lat = prof.lattice
    par = lat.sublattice_parity() if prof.alternating_unitaries else None
    if len(sites) == 1:
        p = 0 if par is None else int(par[sites[0]])
        return ("site", p, matrix.tobytes())
    a, b = sites
    # pair each component with its axis extent: axes only interchange when
    # the torus actually has that symmetry (equal extents)
    disp = tuple(
        sorted((int(e), abs(int(x))) for e, x in zip(lat.extents, lat.displacement(a, b)))
    )
    pa = (0, 0) if par is None else (int(par[a]), int(par[b]))
    return ("pair", pa, disp, matrix.tobytes())


def _term_value(ansatz: SuperpositionAnsatz, sites, matrix: np.ndarray) -> complex:
    rho = reduced_density(ansatz, sites)
    return complex(np.einsum("ts,st->", matrix, rho.matrix))


def expectation(
    ansatz: SuperpositionAnsatz,
    observable,
    counters: Optional[EvalCounters] = None,
) -> float:
    """<observable> in the normalized superposition state.

    Terms are accumulated in their listing order (pair terms first), each via
    the reduced density of its support, so the result is bit-reproducible.
    Under full translation symmetry, terms whose support is related by a
    lattice translation share a single reduced-density evaluation.

    The imaginary residue must stay below 1e-9 * (1 + |value|); the real part
    is returned.
    """
    if observable.n_sites != ansatz.n_sites:
        raise ValueError("observable site count disagrees with the state")
    use_classes = _ti_enabled(ansatz)
    seen: dict = {}
    total = 0.0 + 0.0j
    for a, b, mat in observable.pair_terms:
        sites = (a, b) if a < b else (b, a)
        use_mat = mat if sites == (a, b) else _swap_pair(mat)
        if counters is not None:
            counters.terms += 1
        key = _ti_class_key(ansatz, sites, use_mat) if use_classes else None
        if key is not None and key in seen:
            if counters is not None:
                counters.cache_hits += 1
            total += seen[key]
            continue
        val = _term_value(ansatz, sites, use_mat)
        if counters is not None:
            counters.block_builds += 1
        if key is not None:
            seen[key] = val
        total += val
    for a, mat in observable.site_terms:
        if counters is not None:
            counters.terms += 1
        key = _ti_class_key(ansatz, (a,), mat) if use_classes else None
        if key is not None and key in seen:
            if counters is not None:
                counters.cache_hits += 1
            total += seen[key]
            continue
        val = _term_value(ansatz, (a,), mat)
        if counters is not None:
            counters.block_builds += 1
        if key is not None:
            seen[key] = val
        total += val
    if abs(total.imag) > 1e-9 * (1.0 + abs(total.real)):
        raise NumericRangeError("expectation imaginary residue %g too large" % total.imag)
    return float(total.real)


_SWAP = np.zeros((4, 4))
_SWAP[0, 0] = _SWAP[3, 3] = _SWAP[1, 2] = _SWAP[2, 1] = 1.0


def _swap_pair(mat: np.ndarray) -> np.ndarray:
    """Reorder a 4x4 two-site matrix to the transposed site order."""
    return _SWAP @ mat @ _SWAP
