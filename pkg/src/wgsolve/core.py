"""State types for superpositions of deformed weighted graph states.

A single branch on ``N`` spin-1/2 sites is fixed by a symmetric matrix of
two-site entangling phases ``gamma``, one complex deformation per site, and a
local unitary per site.  In the computational basis the (unnormalized)
amplitude of the bit string ``s`` before the local unitaries is::

    exp(-i * sum_{a<b} gamma[a,b] s_a s_b  +  sum_a d_a s_a)

A superposition keeps ``gamma`` and the unitaries shared across ``m`` branches
while each branch ``j`` carries its own deformation column ``d[:, j]`` and a
complex weight ``alpha_j``.  States are renormalized at evaluation time; the
stored parameters are unnormalized.

Conventions fixed here and relied on by the whole package:

* site indexing is 0-based, row-major over lattice coordinates;
* basis index ``i`` encodes site ``a`` in bit ``N-1-a`` (site 0 is the most
  significant bit), matching ``reshape([2]*N)`` axis order and
  ``kron(U_0, U_1, ...)``;
* phases live on the half-open interval ``(-pi, pi]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, DegenerateStateError, NumericRangeError

TWO_PI = 2.0 * np.pi

#: default cap on the number of sites for dense-vector materialization
DENSE_STATE_MAX_SITES = 14

#: default cap on |Re d| (keeps every exp() in double range via log-domain code)
DEFORMATION_REAL_CAP = 50.0

SYMMETRY_MODES = (
    "free",
    "range_cutoff",
    "distance_dependent",
    "fully_translation_invariant",
)


def wrap_phase(x):
    """Map phases to the canonical interval (-pi, pi], idempotently.

    Values already inside the interval are returned bit-identical, which the
    parameter pack/unpack round trip relies on.
    """
    x = np.asarray(x, dtype=float)
    y = x - TWO_PI * np.round(x / TWO_PI)
    # round() sends the boundary -pi to itself; fix the half-open side
    y = np.where(y <= -np.pi, y + TWO_PI, y)
    y = np.where(y > np.pi, y - TWO_PI, y)
    return y if y.ndim else float(y)


class WeightedGraph:
    """Symmetric matrix of two-site phases with zero diagonal.

    Entries are wrapped to (-pi, pi] at construction.  For large sparse
    graphs a scipy CSR matrix may back the same contract; the evaluation
    engine only ever asks for single rows and elements.
    """

    __slots__ = ("n_sites", "entries")

    def __init__(self, entries, *, validate: bool = True):
        if sp.issparse(entries):
            mat = entries.tocsr().astype(float)
            if mat.shape[0] != mat.shape[1]:
                raise ValueError("phase matrix must be square")
            if validate:
                asym = abs(mat - mat.T)
                if asym.nnz and asym.max() > 1e-12:
                    raise ValueError("phase matrix must be symmetric")
                if mat.diagonal().any():
                    if np.max(np.abs(mat.diagonal())) > 1e-12:
                        raise ValueError("phase matrix must have zero diagonal")
                    mat.setdiag(0.0)
                mat = (mat + mat.T) * 0.5
                mat.data = wrap_phase(mat.data)
            self.entries = mat
        else:
            mat = np.asarray(entries, dtype=float)
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise ValueError("phase matrix must be square")
            if validate:
                if np.max(np.abs(mat - mat.T), initial=0.0) > 1e-12:
                    raise ValueError("phase matrix must be symmetric")
                if np.max(np.abs(np.diag(mat)), initial=0.0) > 1e-12:
                    raise ValueError("phase matrix must have zero diagonal")
                upper = np.triu(wrap_phase(mat), k=1)
                mat = upper + upper.T
            mat = np.ascontiguousarray(mat)
            mat.setflags(write=False)
            self.entries = mat
        self.n_sites = mat.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.entries)

    def row(self, a: int) -> np.ndarray:
        """Dense row of phases coupling site ``a`` to every site."""
        if self.is_sparse:
            return np.asarray(self.entries.getrow(a).todense()).ravel()
        return self.entries[a]

    def element(self, a: int, b: int) -> float:
        if self.is_sparse:
            return float(self.entries[a, b])
        return float(self.entries[a, b])

    def coupled_sites(self, a: int) -> np.ndarray:
        """Indices of sites with a nonzero phase to site ``a``."""
        if self.is_sparse:
            r = self.entries.getrow(a)
            return r.indices[r.data != 0.0]
        return np.nonzero(self.entries[a])[0]

    def dense(self) -> np.ndarray:
        if self.is_sparse:
            if self.n_sites > 4000:
                raise CapacityError("refusing to densify a %d-site sparse graph" % self.n_sites)
            return self.entries.toarray()
        return self.entries


class DeformationMatrix:
    """Complex per-site, per-branch deformations, shaped (n_sites, n_branches)."""

    __slots__ = ("values", "real_cap")

    def __init__(self, values, *, real_cap: float = DEFORMATION_REAL_CAP, validate: bool = True):
        vals = np.asarray(values, dtype=complex)
        if vals.ndim != 2:
            raise ValueError("deformations must be a (n_sites, n_branches) matrix")
        if validate and vals.size:
            worst = np.max(np.abs(vals.real))
            if worst > real_cap:
                raise NumericRangeError(
                    "deformation real part %.3g exceeds cap %.3g" % (worst, real_cap)
                )
        vals = np.ascontiguousarray(vals)
        vals.setflags(write=False)
        self.values = vals
        self.real_cap = float(real_cap)

    @property
    def n_sites(self) -> int:
        return self.values.shape[0]

    @property
    def n_branches(self) -> int:
        return self.values.shape[1]


class LocalUnitaries:
    """One 2x2 unitary per site (unitarity enforced to 1e-12).

    ``angles`` optionally stashes the 3-angle parametrization each matrix was
    built from, so packing can recover the exact generating parameters instead
    of reconstructing them through inverse trigonometry.
    """

    __slots__ = ("matrices", "angles")

    def __init__(self, matrices, angles=None, *, validate: bool = True):
        mats = np.asarray(matrices, dtype=complex)
        if mats.ndim != 3 or mats.shape[1:] != (2, 2):
            raise ValueError("unitaries must be shaped (n_sites, 2, 2)")
        if validate and mats.size:
            gram = np.einsum("aji,ajk->aik", mats.conj(), mats)
            defect = np.max(np.abs(gram - np.eye(2)))
            if defect > 1e-12:
                raise ValueError("matrix fails unitarity by %.3g" % defect)
        mats = np.ascontiguousarray(mats)
        mats.setflags(write=False)
        if angles is not None:
            angles = np.ascontiguousarray(np.asarray(angles, dtype=float))
            if angles.shape != (mats.shape[0], 3):
                raise ValueError("angle stash must be shaped (n_sites, 3)")
            angles.setflags(write=False)
        self.matrices = mats
        self.angles = angles

    @property
    def n_sites(self) -> int:
        return self.matrices.shape[0]

    def is_identity(self) -> bool:
        return bool(np.all(self.matrices == np.eye(2)))


def unitary_from_angles(theta: float, phi_a: float, phi_b: float) -> np.ndarray:
    """Det-1 unitary [[e^{i a} cos t, e^{i b} sin t], [-e^{-i b} sin t, e^{-i a} cos t]].

    Global phase is a gauge of the state, so this 3-angle family covers every
    physically distinct local unitary.
    """
    ct, st = np.cos(theta), np.sin(theta)
    return np.array(
        [
            [np.exp(1j * phi_a) * ct, np.exp(1j * phi_b) * st],
            [-np.exp(-1j * phi_b) * st, np.exp(-1j * phi_a) * ct],
        ]
    )


def angles_from_unitary(u: np.ndarray) -> np.ndarray:
    """Canonical angles (theta, phi_a, phi_b) with unitary_from_angles(...) ~ u.

    The reconstruction matches ``u`` up to a global phase.
    """
    u = np.asarray(u, dtype=complex)
    det = u[0, 0] * u[1, 1] - u[0, 1] * u[1, 0]
    u = u * np.exp(-0.5j * np.angle(det))
    # now det(u) ~ +-1; fold a residual sign into the phases
    if (u[0, 0].real * u[1, 1].real + u[0, 0].imag * u[1, 1].imag) < 0 and abs(u[0, 0]) > 0.5:
        u = -u
    theta = np.arctan2(abs(u[0, 1]), abs(u[0, 0]))
    phi_a = np.angle(u[0, 0]) if abs(u[0, 0]) > 1e-9 else 0.0
    phi_b = np.angle(u[0, 1]) if abs(u[0, 1]) > 1e-9 else 0.0
    return np.array([theta, phi_a, phi_b])


@dataclass(frozen=True)
class SymmetryProfile:
    """Which parameters are tied together, derived from lattice geometry.

    mode
        ``free``                        every phase its own parameter;
        ``range_cutoff``                free phases below ``r0``, zero beyond;
        ``distance_dependent``          one phase parameter per distinct
                                        (minimum-image) pair distance;
        ``fully_translation_invariant`` distance-tied phases plus a single
                                        deformation per branch and lattice-wide
                                        shared (or sublattice-alternating)
                                        unitaries.
    r0
        cutoff radius.  Required for ``range_cutoff``; optionally combined
        with the distance-tied modes to pin far phases to zero.
    alternating_unitaries
        tie unitaries per sublattice parity (two distinct matrices) instead of
        per site / lattice-wide.
    uniform_unitaries
        tie all site unitaries to one matrix without tying anything else
        (``fully_translation_invariant`` already implies this).
    shared_deformation
        tie each branch's deformation across all sites (implied by
        ``fully_translation_invariant``).
    """

    mode: str = "free"
    r0: Optional[float] = None
    alternating_unitaries: bool = False
    uniform_unitaries: bool = False
    shared_deformation: bool = False
    lattice: Optional[object] = None

    def __post_init__(self):
        if self.mode not in SYMMETRY_MODES:
            raise ValueError("unknown symmetry mode %r" % (self.mode,))
        if self.mode == "range_cutoff" and self.r0 is None:
            raise ValueError("range_cutoff symmetry needs a cutoff radius r0")
        if self.alternating_unitaries and self.uniform_unitaries:
            raise ValueError("alternating and uniform unitary ties are mutually exclusive")
        if self.mode != "free" and self.lattice is None:
            raise ValueError("mode %r needs lattice coordinates attached" % (self.mode,))

    # -- derived tying structure ------------------------------------------------

    @property
    def ties_deformation(self) -> bool:
        return self.shared_deformation or self.mode == "fully_translation_invariant"

    @property
    def ties_phases(self) -> bool:
        return self.mode in ("distance_dependent", "fully_translation_invariant")

    def phase_classes(self):
        """List of (key, pairs) with pairs an (P, 2) int array sharing one value.

        Keys are sorted for a deterministic parameter order.  Pairs beyond the
        cutoff (when ``r0`` is set) are pinned to zero and appear in no class.
        """
        if self.mode == "free" and self.lattice is None:
            raise ValueError("free-mode phase classes need a site count; attach a lattice")
        lat = self.lattice
        if self.ties_phases:
            groups = lat.pair_distance_classes(self.r0)
            return [(key, np.asarray(groups[key], dtype=int)) for key in sorted(groups)]
        pairs = lat.pairs_within(self.r0) if self.r0 is not None else lat.all_pairs()
        return [((int(a), int(b)), np.array([[a, b]], dtype=int)) for a, b in pairs]

    def unitary_groups(self):
        """List of site-index arrays whose unitaries are one shared parameter."""
        n = self.lattice.n_sites if self.lattice is not None else None
        if n is None:
            raise ValueError("unitary groups need a lattice")
        if self.alternating_unitaries:
            parity = self.lattice.sublattice_parity()
            return [np.nonzero(parity == 0)[0], np.nonzero(parity == 1)[0]]
        if self.uniform_unitaries or self.mode == "fully_translation_invariant":
            return [np.arange(n)]
        return [np.array([a]) for a in range(n)]


@dataclass(frozen=True, eq=False)
class SuperpositionAnsatz:
    """A weighted-graph-state superposition: shared graph and unitaries, m branches.

    Immutable; optimizers build updated copies.  ``symmetry`` may be None (no
    ties).  When a symmetry profile with a lattice is attached, the tie
    structure is validated (bit-identical tied values) for systems up to 2000
    sites; above that the check would dominate construction cost and is left
    to `validate_ties`.
    """

    graph: WeightedGraph
    deformations: DeformationMatrix
    unitaries: LocalUnitaries
    weights: np.ndarray
    symmetry: Optional[SymmetryProfile] = None

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=complex))
        if w.ndim != 1:
            raise ValueError("weights must be a vector")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        n = self.graph.n_sites
        if self.deformations.n_sites != n or self.unitaries.n_sites != n:
            raise ValueError("site counts of graph/deformations/unitaries disagree")
        if self.deformations.n_branches != w.shape[0]:
            raise ValueError("weight count must match the number of branches")
        if w.shape[0] == 0 or not np.any(w):
            raise ValueError("at least one branch weight must be nonzero")
        if self.symmetry is not None and self.symmetry.lattice is not None:
            if self.symmetry.lattice.n_sites != n:
                raise ValueError("symmetry lattice size disagrees with the state")
            if n <= 2000:
                self.validate_ties()

    @property
    def n_sites(self) -> int:
        return self.graph.n_sites

    @property
    def n_branches(self) -> int:
        return self.weights.shape[0]

    def validate_ties(self):
        """Check that every tied parameter family holds bit-identical values."""
        prof = self.symmetry
        if prof is None or prof.lattice is None:
            return
        if prof.ties_phases or prof.r0 is not None:
            in_class = set()
            for _, pairs in prof.phase_classes():
                vals = np.array([self.graph.element(a, b) for a, b in pairs])
                if vals.size and not np.all(vals == vals[0]):
                    raise ValueError("tied phases differ within a distance class")
                in_class.update((int(a), int(b)) for a, b in pairs)
            if prof.r0 is not None or prof.ties_phases:
                for a, b in prof.lattice.all_pairs():
                    if (int(a), int(b)) not in in_class and self.graph.element(a, b) != 0.0:
                        raise ValueError("phase beyond the tied/cutoff structure is nonzero")
        if prof.ties_deformation:
            d = self.deformations.values
            if not np.all(d == d[:1, :]):
                raise ValueError("shared deformation differs between sites")
        for group in prof.unitary_groups():
            mats = self.unitaries.matrices[group]
            if mats.shape[0] and not np.all(mats == mats[:1]):
                raise ValueError("tied unitaries differ within a group")


def amplitude(ansatz: SuperpositionAnsatz, bits: Sequence[int]) -> complex:
    """Unnormalized pre-unitary amplitude of one computational basis state.

    Parameters
    ----------
    ansatz : SuperpositionAnsatz
    bits : sequence of 0/1, length ``n_sites``

    Returns
    -------
    complex
        ``sum_j alpha_j exp(-i sum_{a<b} gamma[a,b] s_a s_b + d[:,j] . s)``.
    """
    s = np.asarray(bits)
    if s.shape != (ansatz.n_sites,):
        raise ValueError("bit string length must equal the site count")
    if not np.isin(s, (0, 1)).all():
        raise ValueError("bit string entries must be 0 or 1")
    s = s.astype(float)
    quad = 0.5 * float(s @ (ansatz.graph.entries @ s))
    expo = -1j * quad + s @ ansatz.deformations.values
    return complex(np.exp(expo) @ ansatz.weights)


def _bit_table(n: int) -> np.ndarray:
    """(2^n, n) array of bits; site a sits in bit n-1-a (site 0 most significant)."""
    idx = np.arange(1 << n)
    return ((idx[:, None] >> np.arange(n - 1, -1, -1)) & 1).astype(np.int8)


def apply_local_unitaries(matrices: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Apply one 2x2 matrix per site to a 2^N state vector."""
    n = matrices.shape[0]
    t = psi.reshape((2,) * n)
    for a in range(n):
        t = np.moveaxis(np.tensordot(matrices[a], t, axes=(1, a)), 0, a)
    return t.reshape(-1)

def dense_state(ansatz: SuperpositionAnsatz, max_sites: int = DENSE_STATE_MAX_SITES) -> np.ndarray:
    """Materialize the normalized state vector (small systems only).

    Raises CapacityError above ``max_sites`` and DegenerateStateError when the
    branches cancel to the zero vector.
    """
    n = ansatz.n_sites
    if n > max_sites:
        raise CapacityError("dense state for %d sites exceeds the %d-site cap" % (n, max_sites))
    bits = _bit_table(n).astype(float)
    gamma = ansatz.graph.dense()
    quad = 0.5 * np.einsum("si,ij,sj->s", bits, gamma, bits)
    amps = np.exp(bits @ ansatz.deformations.values) @ ansatz.weights
    amps = amps * np.exp(-1j * quad)
    if not np.all(np.isfinite(amps)):
        raise NumericRangeError("non-finite amplitude while materializing the dense state")
    psi = apply_local_unitaries(ansatz.unitaries.matrices, amps)
    norm = np.linalg.norm(psi)
    if norm == 0.0:
        raise DegenerateStateError("ansatz amplitudes cancel to the zero vector")
    return psi / norm


# -- text serialization --------------------------------------------------------
#
# Record layout (one value per line, exact shortest-round-trip floats):
#   WGS v1 <n_sites> <n_branches>
#   upper triangle of the phase matrix, row-major     n(n-1)/2 lines
#   deformations, branch-major ("re im" per line)     n*m lines
#   unitaries, site-major, row-major entries          4n lines
#   weights                                           m lines


def _fmt(x: float) -> str:
    return repr(float(x))


def save_ansatz(ansatz: SuperpositionAnsatz, path) -> None:
    """Write the state parameters as a flat text record (symmetry not stored)."""
    n, m = ansatz.n_sites, ansatz.n_branches
    if ansatz.graph.is_sparse:
        raise CapacityError("text serialization requires a dense phase matrix")
    lines = ["WGS v1 %d %d" % (n, m)]
    gamma = ansatz.graph.entries
    for a in range(n):
        for b in range(a + 1, n):
            lines.append(_fmt(gamma[a, b]))
    d = ansatz.deformations.values
    for j in range(m):
        for a in range(n):
            lines.append("%s %s" % (_fmt(d[a, j].real), _fmt(d[a, j].imag)))
    u = ansatz.unitaries.matrices
    for a in range(n):
        for entry in u[a].ravel():
            lines.append("%s %s" % (_fmt(entry.real), _fmt(entry.imag)))
    for w in ansatz.weights:
        lines.append("%s %s" % (_fmt(w.real), _fmt(w.imag)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_ansatz(path) -> SuperpositionAnsatz:
    """Read a record written by `save_ansatz`."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    header = lines[0].split()
    if len(header) != 4 or header[0] != "WGS" or header[1] != "v1":
        raise ValueError("not a WGS v1 record: %r" % lines[0])
    n, m = int(header[2]), int(header[3])
    body = iter(lines[1:])

    def scalar():
        return float(next(body))

    def cplx():
        re, im = next(body).split()
        return complex(float(re), float(im))

    gamma = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            gamma[a, b] = gamma[b, a] = scalar()
    d = np.empty((n, m), dtype=complex)
    for j in range(m):
        for a in range(n):
            d[a, j] = cplx()
    u = np.empty((n, 2, 2), dtype=complex)
    for a in range(n):
        u[a] = np.array([cplx() for _ in range(4)]).reshape(2, 2)
    alpha = np.array([cplx() for _ in range(m)])
    return SuperpositionAnsatz(
        WeightedGraph(gamma),
        DeformationMatrix(d),
        LocalUnitaries(u),
        alpha,
    )
