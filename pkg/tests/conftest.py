import numpy as np
import pytest

from wgsolve.core import (
    DeformationMatrix,
    LocalUnitaries,
    SuperpositionAnsatz,
    WeightedGraph,
    unitary_from_angles,
)


# populated by the acceptance gate; echoed once more after the run summary
ACCEPTANCE_REPORT = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_REPORT:
        terminalreporter.section("acceptance gate")
        for line in ACCEPTANCE_REPORT:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def random_ansatz(rng, n_sites, n_branches, *, identity_unitaries=False, symmetry=None):
    """A generically-positioned ansatz: dense random phases, complex deformations,
    random local unitaries (unless identity), nonzero weights."""
    gamma = rng.uniform(-np.pi, np.pi, (n_sites, n_sites))
    gamma = np.triu(gamma, 1)
    gamma = gamma + gamma.T
    d = rng.normal(0.0, 0.8, (n_sites, n_branches)) + 1j * rng.uniform(
        -np.pi, np.pi, (n_sites, n_branches)
    )
    if identity_unitaries:
        mats = np.broadcast_to(np.eye(2, dtype=complex), (n_sites, 2, 2)).copy()
    else:
        mats = np.stack(
            [unitary_from_angles(*rng.uniform(-np.pi, np.pi, 3)) for _ in range(n_sites)]
        )
    w = rng.normal(size=n_branches) + 1j * rng.normal(size=n_branches)
    # keep weights away from the origin so norms stay well conditioned
    w += np.sign(w.real + (w.real == 0)) * 0.2
    return SuperpositionAnsatz(
        WeightedGraph(gamma), DeformationMatrix(d), LocalUnitaries(mats), w, symmetry=symmetry
    )


@pytest.fixture
def make_ansatz(rng):
    def _make(n_sites, n_branches, **kw):
        return random_ansatz(rng, n_sites, n_branches, **kw)

    return _make
