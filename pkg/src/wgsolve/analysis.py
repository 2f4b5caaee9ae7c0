"""Physics diagnostics: two-point correlations, block entropy, boundary-law fit."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
import scipy.linalg

from .core import SuperpositionAnsatz
from .errors import NumericRangeError
from .hamiltonian import PAULI_X, PAULI_Y, PAULI_Z
from .reduction import reduced_density

_PAULIS = (PAULI_X, PAULI_Y, PAULI_Z)
_LABELS = "xyz"


@dataclass(frozen=True)
class CorrelationRecord:
    """Connected two-point Pauli correlations between one pair of sites.

    ``matrix[i][j]`` holds <s_i s_j> - <s_i><s_j> for the i-th Pauli on the
    first site and the j-th on the second, ordered x, y, z.
    """

    sites: Tuple[int, int]
    matrix: np.ndarray  # (3, 3) real
    q_max: float

    def component(self, first: str, second: str) -> float:
        return float(self.matrix[_LABELS.index(first), _LABELS.index(second)])


def correlations(ansatz: SuperpositionAnsatz, a: int, b: int) -> CorrelationRecord:
    """All nine connected Pauli correlators of sites ``a`` and ``b``."""
    a, b = int(a), int(b)
    if a == b:
        raise ValueError("correlation sites must differ")
    rho_ab = reduced_density(ansatz, (a, b)).matrix
    rho_a = reduced_density(ansatz, (a,)).matrix
    rho_b = reduced_density(ansatz, (b,)).matrix
    single_a = np.array([np.trace(p @ rho_a) for p in _PAULIS])
    single_b = np.array([np.trace(p @ rho_b) for p in _PAULIS])
    q = np.empty((3, 3), dtype=complex)
    for i, pa in enumerate(_PAULIS):
        for j, pb in enumerate(_PAULIS):
            q[i, j] = np.trace(np.kron(pa, pb) @ rho_ab) - single_a[i] * single_b[j]
    if np.max(np.abs(q.imag)) > 1e-9:
        raise NumericRangeError("correlation imaginary residue %g" % np.max(np.abs(q.imag)))
    mat = np.ascontiguousarray(q.real)
    mat.setflags(write=False)
    return CorrelationRecord((a, b), mat, float(np.max(np.abs(mat))))


def block_entropy(ansatz: SuperpositionAnsatz, sites: Sequence[int]) -> float:
    """Von Neumann entropy of a site block, in bits.

    Eigenvalues of the reduced block are clamped to [0, 1]; anything below
    -1e-10 means the block itself was bad and has already raised upstream.
    """
    rho = reduced_density(ansatz, sites).matrix
    evals = scipy.linalg.eigvalsh(rho)
    evals = np.clip(evals, 0.0, 1.0)
    live = evals[evals > 0.0]
    return float(-(live * np.log2(live)).sum())


def area_law_fit(entropies: Sequence[Tuple[float, float]], dim: int) -> Tuple[float, float]:
    """Boundary-law coefficient: through-origin slope of S against L^(dim-1).

    Returns (coefficient, residual norm).  At least three points are needed;
    all-zero abscissae cannot be fit.
    """
    pts = [(float(l), float(s)) for l, s in entropies]
    if len(pts) < 3:
        raise ValueError("boundary-law fit needs at least 3 points")
    x = np.array([l ** (dim - 1) for l, _ in pts])
    y = np.array([s for _, s in pts])
    denom = float(x @ x)
    if denom == 0.0:
        raise ValueError("degenerate abscissae: every L^(dim-1) is zero")
    beta = float(x @ y) / denom
    residual = float(np.linalg.norm(y - beta * x))
    return beta, residual
