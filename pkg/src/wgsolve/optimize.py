"""Energy minimization for the superposition family.

Three engines cooperate:

* closed-form coordinate sweeps (weights + one deformation column, one phase,
  one local unitary), each solving a tiny exact subproblem and accepting the
  update only when it does not raise the energy;
* a finite-difference quasi-Newton pass over the packed parameter vector;
* stepwise growth of the superposition, one branch at a time, with the new
  branch weighted so small that the energy moves by at most a relative
  ``growth_drift``.

Sweeps rely on the energy being an exact quadratic (or single-harmonic) form
in the swept coordinates; see the helper docstrings for each reduction.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from functools import reduce
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse as sp

from .core import (
    DeformationMatrix,
    LocalUnitaries,
    SuperpositionAnsatz,
    SymmetryProfile,
    WeightedGraph,
    angles_from_unitary,
    unitary_from_angles,
    wrap_phase,
)
from .errors import CapacityError, DegenerateSolutionError, DegenerateStateError, NumericRangeError
from .hamiltonian import TwoLocalObservable
from .reduction import (
    _branch_blocks,
    _cache,
    _pair_norms_excluding,
    _raw_reduced,
    _swap_pair,
    _ti_class_key,
    _ti_enabled,
    expectation,
)

_I2 = np.eye(2, dtype=complex)

#: free-phase packing beyond this many sites would explode quadratically
FREE_PACK_SITE_CAP = 64


def energy(ansatz: SuperpositionAnsatz, hamiltonian: TwoLocalObservable) -> float:
    """Hamiltonian expectation in the normalized state (alias kept for intent)."""
    return expectation(ansatz, hamiltonian)


def _iter_terms(obs: TwoLocalObservable):
    """Terms with pair supports normalized to ascending site order."""
    for a, b, mat in obs.pair_terms:
        if a < b:
            yield (a, b), mat
        else:
            yield (b, a), _swap_pair(mat)
    for a, mat in obs.site_terms:
        yield (a,), mat


def _dress(ansatz: SuperpositionAnsatz, sites: Sequence[int], mat: np.ndarray) -> np.ndarray:
    """Fold the local unitaries into the term matrix: W^dag M W on the support."""
    w = reduce(np.kron, [ansatz.unitaries.matrices[c] for c in sites])
    return w.conj().T @ mat @ w


# -- parameter packing ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ParameterPacking:
    """Chart between an ansatz and a flat real vector, honoring parameter ties.

    Layout: phase-class values, then deformations (re/im interleaved, tied to
    a single row when the profile shares them across sites), then three Euler
    angles per unitary group, then branch weights (re/im interleaved).
    """

    n_sites: int
    n_branches: int
    symmetry: Optional[SymmetryProfile]
    phase_keys: Tuple
    phase_pairs: Tuple[np.ndarray, ...]
    unitary_groups: Tuple[np.ndarray, ...]
    shared_deformation: bool

    @classmethod
    def from_structure(cls, n_sites: int, n_branches: int, symmetry: Optional[SymmetryProfile]):
        if symmetry is None:
            if n_sites > FREE_PACK_SITE_CAP:
                raise CapacityError(
                    "untied phase packing beyond %d sites; attach a symmetry profile"
                    % FREE_PACK_SITE_CAP
                )
            classes = [
                ((a, b), np.array([[a, b]], dtype=int))
                for a, b in itertools.combinations(range(n_sites), 2)
            ]
            groups = [np.array([a]) for a in range(n_sites)]
            shared = False
        else:
            classes = symmetry.phase_classes()
            groups = symmetry.unitary_groups()
            shared = symmetry.ties_deformation
        return cls(
            n_sites=n_sites,
            n_branches=n_branches,
            symmetry=symmetry,
            phase_keys=tuple(k for k, _ in classes),
            phase_pairs=tuple(p for _, p in classes),
            unitary_groups=tuple(groups),
            shared_deformation=shared,
        )

    # layout ------------------------------------------------------------------

    @property
    def deformation_rows(self) -> int:
        return 1 if self.shared_deformation else self.n_sites

    @property
    def size(self) -> int:
        return (
            len(self.phase_pairs)
            + 2 * self.deformation_rows * self.n_branches
            + 3 * len(self.unitary_groups)
            + 2 * self.n_branches
        )

    @property
    def phase_slice(self) -> slice:
        return slice(0, len(self.phase_pairs))

    @property
    def deformation_slice(self) -> slice:
        a = len(self.phase_pairs)
        return slice(a, a + 2 * self.deformation_rows * self.n_branches)

    @property
    def unitary_slice(self) -> slice:
        a = self.deformation_slice.stop
        return slice(a, a + 3 * len(self.unitary_groups))

    @property
    def weight_slice(self) -> slice:
        a = self.unitary_slice.stop
        return slice(a, a + 2 * self.n_branches)

    def bounds(self) -> List[Tuple[Optional[float], Optional[float]]]:
        """Box bounds for the quasi-Newton pass: only deformation real parts."""
        out: List[Tuple[Optional[float], Optional[float]]] = [(None, None)] * self.size
        start = self.deformation_slice.start
        for k in range(self.deformation_rows * self.n_branches):
            out[start + 2 * k] = (-50.0, 50.0)
        return out

    # conversions -------------------------------------------------------------

    def pack(self, ansatz: SuperpositionAnsatz) -> np.ndarray:
        v = np.empty(self.size)
        for idx, pairs in enumerate(self.phase_pairs):
            a, b = int(pairs[0, 0]), int(pairs[0, 1])
            v[idx] = ansatz.graph.element(a, b)
        rows = ansatz.deformations.values[: self.deformation_rows]
        seg = v[self.deformation_slice]
        seg[0::2] = rows.real.ravel()
        seg[1::2] = rows.imag.ravel()
        useg = v[self.unitary_slice]
        stashed = ansatz.unitaries.angles
        for g, sites in enumerate(self.unitary_groups):
            rep = int(sites[0])
            if stashed is not None:
                useg[3 * g : 3 * g + 3] = stashed[rep]
            else:
                useg[3 * g : 3 * g + 3] = angles_from_unitary(ansatz.unitaries.matrices[rep])
        wseg = v[self.weight_slice]
        wseg[0::2] = ansatz.weights.real
        wseg[1::2] = ansatz.weights.imag
        return v

    def _build_graph(self, values: np.ndarray) -> WeightedGraph:
        vals = wrap_phase(values)
        if self.n_sites > FREE_PACK_SITE_CAP:
            rows, cols, data = [], [], []
            for val, pairs in zip(vals, self.phase_pairs):
                if val == 0.0:
                    continue
                rows.append(pairs[:, 0])
                cols.append(pairs[:, 1])
                data.append(np.full(len(pairs), val))
            if rows:
                r = np.concatenate(rows)
                c = np.concatenate(cols)
                d = np.concatenate(data)
                mat = sp.csr_matrix(
                    (np.concatenate([d, d]), (np.concatenate([r, c]), np.concatenate([c, r]))),
                    shape=(self.n_sites, self.n_sites),
                )
            else:
                mat = sp.csr_matrix((self.n_sites, self.n_sites))
            return WeightedGraph(mat, validate=False)
        mat = np.zeros((self.n_sites, self.n_sites))
        for val, pairs in zip(vals, self.phase_pairs):
            mat[pairs[:, 0], pairs[:, 1]] = val
            mat[pairs[:, 1], pairs[:, 0]] = val
        return WeightedGraph(mat, validate=False)

    def unpack(self, vector: np.ndarray) -> SuperpositionAnsatz:
        v = np.asarray(vector, dtype=float)
        if v.shape != (self.size,):
            raise ValueError("packed vector must have length %d" % self.size)
        graph = self._build_graph(v[self.phase_slice])
        seg = v[self.deformation_slice]
        rows = (seg[0::2] + 1j * seg[1::2]).reshape(self.deformation_rows, self.n_branches)
        dvals = np.broadcast_to(rows[0], (self.n_sites, self.n_branches)).copy() if self.shared_deformation else rows
        deform = DeformationMatrix(dvals)
        useg = v[self.unitary_slice]
        mats = np.empty((self.n_sites, 2, 2), dtype=complex)
        angles = np.empty((self.n_sites, 3))
        for g, sites in enumerate(self.unitary_groups):
            ang = useg[3 * g : 3 * g + 3]
            u = unitary_from_angles(*ang)
            mats[sites] = u
            angles[sites] = ang
        unit = LocalUnitaries(mats, angles=angles)
        wseg = v[self.weight_slice]
        weights = wseg[0::2] + 1j * wseg[1::2]
        if not np.any(weights != 0):
            raise DegenerateStateError("packed weights are all zero")
        return SuperpositionAnsatz(graph, deform, unit, weights, symmetry=self.symmetry)


# -- configuration and tracing -------------------------------------------------


@dataclass
class OptimizerConfig:
    """Knobs shared by the sweep, quasi-Newton, and growth passes."""

    max_iterations: int = 60  # quasi-Newton iteration cap per pass
    gradient_tolerance: float = 1e-7
    fd_step: float = 1e-6  # scaled per component by (1 + |x_i|)
    sweep_tolerance: float = 1e-10  # relative plateau threshold between rounds
    eigen_regularization: float = 1e-12
    seed: int = 0
    m_schedule: Tuple[int, ...] = (1, 2, 3, 4)
    sweep_order: Tuple[str, ...] = ("alpha_deformations", "phases", "unitaries")
    max_rounds: int = 8
    max_fd_parameters: int = 400  # skip the finite-difference pass above this
    growth_weight: float = 0.01
    growth_noise: float = 0.1
    growth_drift: float = 1e-3
    growth_candidates: int = 4  # perturbation draws per added branch; best kept
    quasi_newton: bool = True
    unitary_restarts: int = 8


@dataclass
class TraceRecord:
    stage: str
    n_branches: int
    energy: float
    detail: str = ""


@dataclass
class OptimizationTrace:
    """Energy history across sweeps, polish passes, and growth steps."""

    records: List[TraceRecord] = field(default_factory=list)
    status: str = "ok"

    def log(self, stage: str, n_branches: int, energy_value: float, detail: str = ""):
        self.records.append(TraceRecord(stage, n_branches, float(energy_value), detail))

    @property
    def final_energy(self) -> float:
        if not self.records:
            raise ValueError("empty trace")
        return self.records[-1].energy

    def stage_energies(self, stage: str) -> List[Tuple[int, float]]:
        return [(r.n_branches, r.energy) for r in self.records if r.stage == stage]


# -- finite-difference machinery -----------------------------------------------


def gradient_fd(fun: Callable[[np.ndarray], float], x: np.ndarray, base_step: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient with per-component step (1 + |x_i|) scaling."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = base_step * (1.0 + abs(x[i]))
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        fp, fm = fun(xp), fun(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericRangeError("finite-difference probe diverged at component %d" % i)
        g[i] = (fp - fm) / (2.0 * h)
    return g


def minimize_quasi_newton(
    ansatz: SuperpositionAnsatz,
    hamiltonian: TwoLocalObservable,
    config: OptimizerConfig,
    packing: Optional[ParameterPacking] = None,
    indices: Optional[np.ndarray] = None,
):
    """L-BFGS-B over the packed vector; returns (ansatz, info dict).

    With ``indices`` given, only those vector components move and the rest
    stay frozen at their packed values (used to keep the finite-difference
    budget bounded when the deformation block dominates the parameter count).
    The best evaluated point is kept even when the line search gives up, and
    the incoming state is returned unchanged if nothing improved on it.
    """
    if packing is None:
        packing = ParameterPacking.from_structure(ansatz.n_sites, ansatz.n_branches, ansatz.symmetry)
    x_full = packing.pack(ansatz)
    if indices is None:
        indices = np.arange(packing.size)
    else:
        indices = np.asarray(indices, dtype=int)

    def embed(x: np.ndarray) -> np.ndarray:
        v = x_full.copy()
        v[indices] = x
        return v

    x0 = x_full[indices]
    e0 = expectation(ansatz, hamiltonian)
    best = {"x": x0, "f": e0}
    evals = [0]

    def fun(x: np.ndarray) -> float:
        evals[0] += 1
        try:
            val = expectation(packing.unpack(embed(x)), hamiltonian)
        except (NumericRangeError, DegenerateStateError):
            return 1e10
        if val < best["f"]:
            best["x"], best["f"] = x.copy(), val
        return val

    def jac(x: np.ndarray) -> np.ndarray:
        return gradient_fd(fun, x, config.fd_step)

    all_bounds = packing.bounds()
    res = scipy.optimize.minimize(
        fun,
        x0,
        jac=jac,
        method="L-BFGS-B",
        bounds=[all_bounds[i] for i in indices],
        options={
            "maxiter": config.max_iterations,
            "ftol": 1e-14,
            "gtol": config.gradient_tolerance,
        },
    )
    info = {
        "message": str(res.message),
        "converged": bool(res.success),
        "evaluations": evals[0],
        "energy": best["f"],
    }
    if best["f"] < e0:
        return packing.unpack(embed(best["x"])), info
    info["energy"] = e0
    return ansatz, info


# -- closed-form sweeps --------------------------------------------------------


def _solve_pencil(a_mat: np.ndarray, b_mat: np.ndarray, eps: float) -> np.ndarray:
    """Lowest generalized eigenvector of (A, B) with an escalating ridge on B."""
    a_mat = 0.5 * (a_mat + a_mat.conj().T)
    b_mat = 0.5 * (b_mat + b_mat.conj().T)
    n = a_mat.shape[0]
    scale = max(float(np.trace(b_mat).real) / n, 1e-300)
    ridge = eps
    for _ in range(7):
        try:
            _, vecs = scipy.linalg.eigh(a_mat, b_mat + ridge * scale * np.eye(n))
            return vecs[:, 0]
        except (scipy.linalg.LinAlgError, ValueError):
            ridge = max(ridge * 100.0, 1e-12)
    raise DegenerateSolutionError("branch overlap matrix stayed singular under regularization")


def _accept_if_lower(
    ansatz: SuperpositionAnsatz,
    candidate: SuperpositionAnsatz,
    hamiltonian: TwoLocalObservable,
    current: float,
) -> Tuple[SuperpositionAnsatz, float]:
    """Monotonicity guard shared by every sweep."""
    try:
        e_new = expectation(candidate, hamiltonian)
    except (NumericRangeError, DegenerateStateError):
        return ansatz, current
    if e_new < current:
        return candidate, e_new
    return ansatz, current


def sweep_alpha(
    ansatz: SuperpositionAnsatz,
    hamiltonian: TwoLocalObservable,
    config: OptimizerConfig,
    current: Optional[float] = None,
) -> Tuple[SuperpositionAnsatz, float]:
    """Exact re-solve of the branch weights: a generalized eigenproblem.

    The energy is (x^dag A x)/(x^dag B x) in the weight vector x, with B the
    branch overlap matrix; valid under any parameter tying.
    """
    if current is None:
        current = expectation(ansatz, hamiltonian)
    m = ansatz.n_branches
    cache = _cache(ansatz)
    use_classes = _ti_enabled(ansatz)
    a_mat = np.zeros((m, m), dtype=complex)
    seen: dict = {}
    for sites, mat in _iter_terms(hamiltonian):
        key = _ti_class_key(ansatz, sites, mat) if use_classes else None
        if key is not None and key in seen:
            a_mat += seen[key]
            continue
        matw = _dress(ansatz, sites, mat)
        blocks = _branch_blocks(ansatz, sites)
        contrib = np.einsum("ts,ijst->ji", matw, blocks)
        if key is not None:
            seen[key] = contrib
        a_mat += contrib
    overl = np.where(cache.zero_count > 0, 0.0, np.exp(cache.s0 - cache.log_norm2))
    b_mat = overl.T.copy()
    x = _solve_pencil(a_mat, b_mat, config.eigen_regularization)
    if not np.any(np.abs(x) > 0):
        return ansatz, current
    weights = x / np.linalg.norm(x)
    candidate = SuperpositionAnsatz(
        ansatz.graph, ansatz.deformations, ansatz.unitaries, weights, symmetry=ansatz.symmetry
    )
    return _accept_if_lower(ansatz, candidate, hamiltonian, current)


def sweep_alpha_deformations(
    ansatz: SuperpositionAnsatz,
    hamiltonian: TwoLocalObservable,
    site: int,
    config: OptimizerConfig,
    current: Optional[float] = None,
) -> Tuple[SuperpositionAnsatz, float]:
    """Joint exact re-solve of all weights and one deformation column.

    In the doubled coordinates (z, w) = (alpha, alpha * exp(d_site)) both the
    energy numerator and the norm are quadratic forms, because every site
    factor splits into an empty and an occupied piece.  Every Hamiltonian term
    is evaluated on its support extended by ``site`` so the split is exact.
    """
    if ansatz.symmetry is not None and ansatz.symmetry.ties_deformation:
        raise ValueError("deformations are tied across sites; sweep the weights alone")
    if current is None:
        current = expectation(ansatz, hamiltonian)
    m = ansatz.n_branches
    a = int(site)
    a_mat = np.zeros((2 * m, 2 * m), dtype=complex)
    for sites, mat in _iter_terms(hamiltonian):
        matw = _dress(ansatz, sites, mat)
        if a in sites:
            ext = tuple(sites)
            mat2 = matw
        else:
            ext = tuple(sites) + (a,)
            mat2 = np.kron(matw, _I2)
        p = ext.index(a)
        k = len(ext)
        blocks = _branch_blocks(ansatz, ext, strip_deformation_at=a)
        sbit = (np.arange(1 << k) >> (k - 1 - p)) & 1
        for sigma in (0, 1):
            s_sel = np.nonzero(sbit == sigma)[0]
            for tau in (0, 1):
                t_sel = np.nonzero(sbit == tau)[0]
                sub = blocks[:, :, s_sel[:, None], t_sel[None, :]]
                msub = mat2[np.ix_(t_sel, s_sel)]
                a_mat[tau * m : (tau + 1) * m, sigma * m : (sigma + 1) * m] += np.einsum(
                    "ts,ijst->ji", msub, sub
                )
    g_rel = _pair_norms_excluding(ansatz, a).T
    b_mat = np.zeros((2 * m, 2 * m), dtype=complex)
    b_mat[:m, :m] = g_rel
    b_mat[m:, m:] = g_rel
    x = _solve_pencil(a_mat, b_mat, config.eigen_regularization)
    z, w = x[:m], x[m:]
    scale = max(float(np.max(np.abs(x))), 1e-300)
    d_new = ansatz.deformations.values.copy()
    alpha_new = np.empty(m, dtype=complex)
    for j in range(m):
        if abs(z[j]) > 1e-12 * scale:
            alpha_new[j] = z[j]
            val = np.log(w[j] / z[j]) if w[j] != 0 else -50.0 + 0j
            d_new[a, j] = complex(np.clip(val.real, -50.0, 50.0), val.imag)
        else:
            # weight sits entirely in the occupied piece: keep the old
            # deformation and infer the weight from w
            alpha_new[j] = w[j] * np.exp(-d_new[a, j])
    if not np.any(alpha_new != 0):
        return ansatz, current
    alpha_new /= np.linalg.norm(alpha_new)
    candidate = SuperpositionAnsatz(
        ansatz.graph,
        DeformationMatrix(d_new),
        ansatz.unitaries,
        alpha_new,
        symmetry=ansatz.symmetry,
    )
    return _accept_if_lower(ansatz, candidate, hamiltonian, current)


def _graph_with_phase(graph: WeightedGraph, a: int, b: int, value: float) -> WeightedGraph:
    mat = graph.dense().copy()
    mat[a, b] = mat[b, a] = value
    return WeightedGraph(mat, validate=False)


def sweep_phase(
    ansatz: SuperpositionAnsatz,
    hamiltonian: TwoLocalObservable,
    pair: Tuple[int, int],
    config: OptimizerConfig,
    current: Optional[float] = None,
) -> Tuple[SuperpositionAnsatz, float]:
    """Exact single-phase sweep: the energy is c0 + 2 Re(c1 e^{-i phi}).

    The norm carries no phase dependence at all (bra and ket phases cancel
    state by state), so the minimizer is phi = pi + arg(c1) exactly.  Each
    term is evaluated on its support extended by the swept pair.
    """
    if current is None:
        current = expectation(ansatz, hamiltonian)
    a, b = (int(pair[0]), int(pair[1])) if pair[0] < pair[1] else (int(pair[1]), int(pair[0]))
    alpha = ansatz.weights
    c1 = 0.0 + 0.0j
    c0 = 0.0 + 0.0j
    for sites, mat in _iter_terms(hamiltonian):
        matw = _dress(ansatz, sites, mat)
        ext = tuple(sites) + tuple(c for c in (a, b) if c not in sites)
        mat2 = matw
        for _ in range(len(ext) - len(sites)):
            mat2 = np.kron(mat2, _I2)
        k = len(ext)
        pa, pb = ext.index(a), ext.index(b)
        blocks = _branch_blocks(ansatz, ext, drop_internal_phase=(a, b))
        idx = np.arange(1 << k)
        occ = ((idx >> (k - 1 - pa)) & 1) & ((idx >> (k - 1 - pb)) & 1)
        kappa = occ[:, None] - occ[None, :]
        t_mat = np.einsum("ts,i,j,ijst->st", mat2, alpha, alpha.conj(), blocks)
        c1 += t_mat[kappa == 1].sum()
        c0 += t_mat[kappa == 0].sum()
    if abs(c1) < 1e-14 * (1.0 + abs(c0)):
        return ansatz, current
    phi = wrap_phase(np.pi + np.angle(c1))
    candidate = SuperpositionAnsatz(
        _graph_with_phase(ansatz.graph, a, b, float(phi)),
        ansatz.deformations,
        ansatz.unitaries,
        ansatz.weights,
        symmetry=ansatz.symmetry,
    )
    return _accept_if_lower(ansatz, candidate, hamiltonian, current)


def sweep_phase_class(
    ansatz: SuperpositionAnsatz,
    hamiltonian: TwoLocalObservable,
    packing: ParameterPacking,
    class_index: int,
    config: OptimizerConfig,
    current: Optional[float] = None,
) -> Tuple[SuperpositionAnsatz, float]:
    """One tied phase class, minimized on the circle by scan plus refinement.

    A tied value multiplies many pair phases at once, so the energy mixes
    several harmonics; a 25-point scan with a bounded scalar polish replaces
    the single-harmonic closed form.
    """
    if current is None:
        current = expectation(ansatz, hamiltonian)
    v = packing.pack(ansatz)
    slot = packing.phase_slice.start + class_index

    def value(phi: float) -> float:
        vv = v.copy()
        vv[slot] = phi
        try:
            return expectation(packing.unpack(vv), hamiltonian)
        except (NumericRangeError, DegenerateStateError):
            return np.inf

    grid = np.linspace(-np.pi, np.pi, 25, endpoint=False)
    scores = [value(p) for p in grid]
    best = int(np.argmin(scores))
    if not np.isfinite(scores[best]):
        return ansatz, current
    span = grid[1] - grid[0]
    res = scipy.optimize.minimize_scalar(
        value,
        bounds=(grid[best] - span, grid[best] + span),
        method="bounded",
        options={"xatol": 1e-8},
    )
    phi = float(res.x) if res.fun <= scores[best] else float(grid[best])
    v[slot] = wrap_phase(phi)
    candidate = packing.unpack(v)
    return _accept_if_lower(ansatz, candidate, hamiltonian, current)


def _unitary_objective_terms(
    ansatz: SuperpositionAnsatz,
    hamiltonian: TwoLocalObservable,
    group: np.ndarray,
):
    """Collapse the terms touching a unitary group to (count, matrix, rho, pattern).

    ``pattern`` marks which support positions carry the swept unitary; the
    reduced blocks are precomputed once since they do not depend on any
    unitary.  Translation-symmetric states collapse whole term classes to a
    single entry with a multiplicity.
    """
    use_classes = _ti_enabled(ansatz)
    in_group = np.zeros(ansatz.n_sites, dtype=bool)
    in_group[group] = True
    collapsed = {}
    order = 0
    for sites, mat in _iter_terms(hamiltonian):
        pattern = tuple(bool(in_group[c]) for c in sites)
        if not any(pattern):
            continue
        key = (_ti_class_key(ansatz, sites, mat), pattern) if use_classes else order
        order += 1
        if key in collapsed:
            collapsed[key][0] += 1
            continue
        rho = _raw_reduced(ansatz, tuple(sites))
        fixed = [None if pattern[i] else ansatz.unitaries.matrices[c] for i, c in enumerate(sites)]
        collapsed[key] = [1, mat, rho, pattern, fixed]
    return list(collapsed.values())


def sweep_local_unitary(
    ansatz: SuperpositionAnsatz,
    hamiltonian: TwoLocalObservable,
    group: np.ndarray,
    config: OptimizerConfig,
    current: Optional[float] = None,
) -> Tuple[SuperpositionAnsatz, float]:
    """Re-optimize one (possibly tied) local unitary over its three angles.

    The reduced blocks are fixed during the sweep, so the objective is cheap
    dense algebra on at most 4x4 matrices; a handful of deterministic restarts
    guards against the non-convexity of the angle chart.
    """
    if current is None:
        current = expectation(ansatz, hamiltonian)
    group = np.asarray(group, dtype=int)
    terms = _unitary_objective_terms(ansatz, hamiltonian, group)
    if not terms:
        return ansatz, current

    def objective(angles: np.ndarray) -> float:
        u = unitary_from_angles(*angles)
        total = 0.0
        for count, mat, rho, pattern, fixed in terms:
            w = reduce(np.kron, [u if pattern[i] else fixed[i] for i in range(len(pattern))])
            total += count * float(np.einsum("ts,st->", mat, w @ rho @ w.conj().T).real)
        return total

    rep = int(group[0])
    if ansatz.unitaries.angles is not None:
        start0 = np.asarray(ansatz.unitaries.angles[rep], dtype=float)
    else:
        start0 = angles_from_unitary(ansatz.unitaries.matrices[rep])
    starts = [start0]
    for theta in (0.4, 1.1):
        for pa in (0.0, 1.5):
            for pb in (0.0, 1.5):
                starts.append(np.array([theta, pa, pb]))
    starts = starts[: 1 + config.unitary_restarts]
    best_ang, best_val = start0, objective(start0)
    for s in starts:
        res = scipy.optimize.minimize(objective, s, method="L-BFGS-B", options={"maxiter": 80})
        if np.isfinite(res.fun) and res.fun < best_val:
            best_ang, best_val = np.asarray(res.x, dtype=float), float(res.fun)
    mats = ansatz.unitaries.matrices.copy()
    angles = (
        ansatz.unitaries.angles.copy()
        if ansatz.unitaries.angles is not None
        else np.array([angles_from_unitary(u) for u in ansatz.unitaries.matrices])
    )
    mats[group] = unitary_from_angles(*best_ang)
    angles[group] = best_ang
    candidate = SuperpositionAnsatz(
        ansatz.graph,
        ansatz.deformations,
        LocalUnitaries(mats, angles=angles),
        ansatz.weights,
        symmetry=ansatz.symmetry,
    )
    return _accept_if_lower(ansatz, candidate, hamiltonian, current)


def sweep_round(
    ansatz: SuperpositionAnsatz,
    hamiltonian: TwoLocalObservable,
    config: OptimizerConfig,
    current: Optional[float] = None,
    packing: Optional[ParameterPacking] = None,
) -> Tuple[SuperpositionAnsatz, float]:
    """One full pass over the stages named in ``config.sweep_order``."""
    if current is None:
        current = expectation(ansatz, hamiltonian)
    if packing is None:
        packing = ParameterPacking.from_structure(ansatz.n_sites, ansatz.n_branches, ansatz.symmetry)
    prof = ansatz.symmetry
    for stage in config.sweep_order:
        if stage == "alpha_deformations":
            if prof is not None and prof.ties_deformation:
                ansatz, current = sweep_alpha(ansatz, hamiltonian, config, current)
            else:
                for a in range(ansatz.n_sites):
                    ansatz, current = sweep_alpha_deformations(ansatz, hamiltonian, a, config, current)
        elif stage == "phases":
            for idx, pairs in enumerate(packing.phase_pairs):
                if len(pairs) == 1:
                    ansatz, current = sweep_phase(
                        ansatz, hamiltonian, (int(pairs[0, 0]), int(pairs[0, 1])), config, current
                    )
                else:
                    ansatz, current = sweep_phase_class(
                        ansatz, hamiltonian, packing, idx, config, current
                    )
        elif stage == "unitaries":
            groups = packing.unitary_groups
            for g in groups:
                ansatz, current = sweep_local_unitary(ansatz, hamiltonian, g, config, current)
        else:
            raise ValueError("unknown sweep stage %r" % stage)
    return ansatz, current


# -- growth and the full schedule ----------------------------------------------


def _append_branch(
    ansatz: SuperpositionAnsatz,
    hamiltonian: TwoLocalObservable,
    config: OptimizerConfig,
    new_col: np.ndarray,
    current: float,
) -> Tuple[SuperpositionAnsatz, float]:
    """Append one deformation column at a weight small enough not to move the energy.

    The weight starts at ``growth_weight`` times the largest existing one and
    is halved until the relative drift stays below ``growth_drift`` (worst
    case it lands at exactly zero, which changes nothing and leaves the
    sweeps to activate the branch).
    """
    new_col = np.clip(new_col.real, -50.0, 50.0) + 1j * new_col.imag
    d_new = np.concatenate([ansatz.deformations.values, new_col[:, None]], axis=1)
    w_new = config.growth_weight * float(np.max(np.abs(ansatz.weights)))
    floor = max(abs(current), 1e-12)
    for _ in range(40):
        weights = np.concatenate([ansatz.weights, [w_new]])
        candidate = SuperpositionAnsatz(
            ansatz.graph,
            DeformationMatrix(d_new),
            ansatz.unitaries,
            weights,
            symmetry=ansatz.symmetry,
        )
        try:
            e_new = expectation(candidate, hamiltonian)
        except (NumericRangeError, DegenerateStateError):
            w_new *= 0.5
            continue
        if abs(e_new - current) <= config.growth_drift * floor:
            return candidate, e_new
        w_new *= 0.5
    weights = np.concatenate([ansatz.weights, [0.0]])
    candidate = SuperpositionAnsatz(
        ansatz.graph, DeformationMatrix(d_new), ansatz.unitaries, weights, symmetry=ansatz.symmetry
    )
    return candidate, current


def grow_superposition(
    ansatz: SuperpositionAnsatz,
    hamiltonian: TwoLocalObservable,
    config: OptimizerConfig,
    rng: np.random.Generator,
    current: Optional[float] = None,
) -> Tuple[SuperpositionAnsatz, float]:
    """Append one branch seeded from the heaviest existing one.

    ``growth_candidates`` noisy copies of the dominant deformation column are
    tried; each is scored by re-solving the branch weights exactly, and the
    lowest-energy candidate survives.  Draws happen in a fixed order from the
    caller's generator, so growth is deterministic under a fixed seed.
    """
    if current is None:
        current = expectation(ansatz, hamiltonian)
    d = ansatz.deformations.values
    base = int(np.argmax(np.abs(ansatz.weights)))
    tied = ansatz.symmetry is not None and ansatz.symmetry.ties_deformation
    # a tied column shifts every site at once: the offset must shrink with the
    # group size or the new branch's norm ratio leaves double range (and its
    # overlap with the parent collapses), while per-site draws average out
    scale = config.growth_noise / float(np.sqrt(ansatz.n_sites)) if tied else config.growth_noise
    best: Optional[Tuple[SuperpositionAnsatz, float]] = None
    last_err: Optional[NumericRangeError] = None
    for _ in range(max(1, config.growth_candidates)):
        if tied:
            noise = scale * complex(rng.standard_normal(), rng.standard_normal())
            new_col = d[:, base] + noise
        else:
            new_col = d[:, base] + scale * (
                rng.standard_normal(ansatz.n_sites) + 1j * rng.standard_normal(ansatz.n_sites)
            )
        appended, e_app = _append_branch(ansatz, hamiltonian, config, new_col, current)
        try:
            scored = sweep_alpha(appended, hamiltonian, config, e_app)
        except NumericRangeError as exc:
            last_err = exc
            continue
        if best is None or scored[1] < best[1]:
            best = scored
    if best is None:
        raise NumericRangeError(
            "every growth candidate left numeric range; lower growth_noise (%s)" % last_err
        )
    return best


def initial_ansatz(
    n_sites: int,
    n_branches: int,
    symmetry: Optional[SymmetryProfile],
    seed: int = 0,
) -> SuperpositionAnsatz:
    """Weakly phase-coupled product start: small random phases, unit deformations,
    identity unitaries, equal weights."""
    packing = ParameterPacking.from_structure(n_sites, n_branches, symmetry)
    rng = np.random.default_rng(seed)
    v = np.zeros(packing.size)
    v[packing.phase_slice] = rng.uniform(-0.1, 0.1, len(packing.phase_pairs))
    dseg = v[packing.deformation_slice]
    dseg[0::2] = 1.0
    wseg = v[packing.weight_slice]
    wseg[0::2] = 1.0 / np.sqrt(n_branches)
    return packing.unpack(v)


def _embed_branches(ansatz: SuperpositionAnsatz, n_branches: int) -> SuperpositionAnsatz:
    """Pad an ansatz with zero-weight branches; the state is unchanged exactly."""
    m = ansatz.n_branches
    if m >= n_branches:
        return ansatz
    d = ansatz.deformations.values
    pad = np.repeat(d[:, -1:], n_branches - m, axis=1)
    weights = np.concatenate([ansatz.weights, np.zeros(n_branches - m)])
    return SuperpositionAnsatz(
        ansatz.graph,
        DeformationMatrix(np.concatenate([d, pad], axis=1)),
        ansatz.unitaries,
        weights,
        symmetry=ansatz.symmetry,
    )


def _optimize_fixed_m(
    ansatz: SuperpositionAnsatz,
    hamiltonian: TwoLocalObservable,
    config: OptimizerConfig,
    trace: OptimizationTrace,
    current: float,
) -> Tuple[SuperpositionAnsatz, float]:
    packing = ParameterPacking.from_structure(ansatz.n_sites, ansatz.n_branches, ansatz.symmetry)
    m = ansatz.n_branches

    def sweep_until_flat(state, e_val):
        for _ in range(config.max_rounds):
            e_before = e_val
            state, e_val = sweep_round(state, hamiltonian, config, e_val, packing)
            trace.log("sweep-round", m, e_val)
            if e_before - e_val <= config.sweep_tolerance * max(1.0, abs(e_before)):
                break
        return state, e_val

    ansatz, current = sweep_until_flat(ansatz, current)
    if config.quasi_newton:
        subset = None
        if packing.size > config.max_fd_parameters:
            # the deformation block scales with sites x branches and has an
            # exact per-site sweep anyway; polish only the rest
            keep = np.ones(packing.size, dtype=bool)
            keep[packing.deformation_slice] = False
            subset = np.nonzero(keep)[0]
        if subset is None or subset.size <= config.max_fd_parameters:
            polished, info = minimize_quasi_newton(ansatz, hamiltonian, config, packing, subset)
            if info["energy"] < current:
                ansatz, current = polished, info["energy"]
                trace.log("quasi-newton", m, current, info["message"])
                ansatz, current = sweep_until_flat(ansatz, current)
            else:
                trace.log("quasi-newton", m, current, "no improvement; kept sweeps")
        else:
            trace.log(
                "quasi-newton", m, current,
                "skipped: %d parameters exceed the budget" % packing.size,
            )
    return ansatz, current


def refine_ansatz(
    ansatz: SuperpositionAnsatz,
    hamiltonian: TwoLocalObservable,
    config: OptimizerConfig,
) -> Tuple[SuperpositionAnsatz, float, OptimizationTrace]:
    """Re-optimize an existing state at its current branch count.

    This is the warm-start path: sweeps to a plateau, then the optional
    quasi-Newton polish, exactly as inside the growth schedule.
    """
    trace = OptimizationTrace()
    current = expectation(ansatz, hamiltonian)
    trace.log("initial", ansatz.n_branches, current)
    ansatz, current = _optimize_fixed_m(ansatz, hamiltonian, config, trace, current)
    trace.log("stage-final", ansatz.n_branches, current)
    return ansatz, current, trace


def run_schedule(
    hamiltonian: TwoLocalObservable,
    symmetry: Optional[SymmetryProfile],
    config: OptimizerConfig,
) -> Tuple[SuperpositionAnsatz, OptimizationTrace]:
    """Grow the superposition along ``config.m_schedule``, optimizing at each size.

    The running best state is embedded (zero-padded) into every larger stage,
    so the reported energies never increase with the branch count.
    """
    trace = OptimizationTrace()
    rng = np.random.default_rng(config.seed)
    schedule = tuple(config.m_schedule)
    if not schedule or any(b <= 0 for b in schedule) or any(
        schedule[i] >= schedule[i + 1] for i in range(len(schedule) - 1)
    ):
        raise ValueError("branch schedule must be positive and strictly increasing")
    n = hamiltonian.n_sites
    ansatz = initial_ansatz(n, schedule[0], symmetry, seed=config.seed)
    current = expectation(ansatz, hamiltonian)
    trace.log("initial", schedule[0], current)
    best, best_e = None, np.inf
    for m_target in schedule:
        while ansatz.n_branches < m_target:
            ansatz, current = grow_superposition(ansatz, hamiltonian, config, rng, current)
            trace.log("grow", ansatz.n_branches, current)
        ansatz, current = _optimize_fixed_m(ansatz, hamiltonian, config, trace, current)
        if best is not None and best_e < current:
            ansatz = _embed_branches(best, m_target)
            current = best_e
        best, best_e = ansatz, current
        trace.log("stage-final", m_target, current)
    return best, trace
