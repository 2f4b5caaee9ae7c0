"""Parameter packing, closed-form sweeps, growth, and the full schedule."""

import numpy as np
import pytest
import scipy.linalg

from wgsolve.core import (
    DeformationMatrix,
    LocalUnitaries,
    SuperpositionAnsatz,
    SymmetryProfile,
    WeightedGraph,
    amplitude,
    apply_local_unitaries,
    unitary_from_angles,
)
from wgsolve.errors import CapacityError, DegenerateStateError
from wgsolve.hamiltonian import PAULI_Z, TwoLocalObservable, build_lattice, ising
from wgsolve.optimize import (
    OptimizationTrace,
    OptimizerConfig,
    ParameterPacking,
    energy,
    gradient_fd,
    grow_superposition,
    initial_ansatz,
    minimize_quasi_newton,
    refine_ansatz,
    run_schedule,
    sweep_alpha,
    sweep_alpha_deformations,
    sweep_local_unitary,
    sweep_phase,
    sweep_round,
)
from wgsolve.oracle import exact_ground_energy
from wgsolve.reduction import expectation

from conftest import random_ansatz


def ring(n, b):
    return ising(build_lattice(1, (n,), periodic=True), b)


def branch_vector(ansatz, i):
    """Dense unnormalized vector of branch ``i`` at unit weight."""
    n = ansatz.n_sites
    eye = np.broadcast_to(np.eye(2, dtype=complex), (n, 2, 2)).copy()
    single = SuperpositionAnsatz(
        ansatz.graph,
        DeformationMatrix(ansatz.deformations.values[:, i : i + 1]),
        LocalUnitaries(eye),
        np.array([1.0]),
    )
    vec = np.array(
        [
            amplitude(single, [(s >> (n - 1 - p)) & 1 for p in range(n)])
            for s in range(2**n)
        ]
    )
    return apply_local_unitaries(ansatz.unitaries.matrices, vec)


class TestParameterPacking:
    def test_size_and_layout_free(self):
        p = ParameterPacking.from_structure(4, 2, None)
        assert p.size == 6 + 16 + 12 + 4
        assert p.phase_slice == slice(0, 6)
        assert p.deformation_slice == slice(6, 22)
        assert p.unitary_slice == slice(22, 34)
        assert p.weight_slice == slice(34, 38)

    def test_round_trip_is_exact(self, rng):
        p = ParameterPacking.from_structure(5, 2, None)
        v = rng.uniform(-1.0, 1.0, p.size)
        v[p.phase_slice] = rng.uniform(-3.0, 3.0, 10)
        back = p.pack(p.unpack(v))
        np.testing.assert_allclose(back, v, atol=1e-12)

    def test_tied_profile_layout_and_ties(self):
        lat = build_lattice(1, (6,), periodic=True)
        prof = SymmetryProfile(mode="fully_translation_invariant", lattice=lat)
        p = ParameterPacking.from_structure(6, 2, prof)
        assert p.deformation_rows == 1
        assert len(p.unitary_groups) == 1
        assert p.size == len(p.phase_pairs) + 4 + 3 + 4
        v = np.random.default_rng(5).uniform(-1.0, 1.0, p.size)
        a = p.unpack(v)
        d = a.deformations.values
        assert np.all(d == d[0])
        u = a.unitaries.matrices
        assert np.all(u == u[0])
        gamma = a.graph.dense()
        for pairs in p.phase_pairs:
            vals = gamma[pairs[:, 0], pairs[:, 1]]
            assert np.ptp(vals) == 0.0

    def test_untied_capacity(self):
        with pytest.raises(CapacityError):
            ParameterPacking.from_structure(65, 1, None)

    def test_zero_weights_rejected(self):
        p = ParameterPacking.from_structure(3, 1, None)
        v = np.zeros(p.size)
        with pytest.raises(DegenerateStateError):
            p.unpack(v)

    def test_bounds_cover_deformation_reals_only(self):
        p = ParameterPacking.from_structure(3, 2, None)
        b = p.bounds()
        assert len(b) == p.size
        start = p.deformation_slice.start
        for k in range(p.deformation_rows * p.n_branches):
            assert b[start + 2 * k] == (-50.0, 50.0)
            assert b[start + 2 * k + 1] == (None, None)
        assert b[0] == (None, None)


class TestWeightSweep:
    def test_matches_generalized_eigen_oracle(self, rng):
        n, m = 5, 3
        a = random_ansatz(rng, n, m)
        h = ring(n, 0.9)
        hmat = _dense_h(h)
        psi = np.column_stack([branch_vector(a, i) for i in range(m)])
        a_mat = psi.conj().T @ hmat @ psi
        b_mat = psi.conj().T @ psi
        pencil_min = float(scipy.linalg.eigh(a_mat, b_mat, eigvals_only=True)[0])
        swept, e = sweep_alpha(a, h, OptimizerConfig())
        assert e <= expectation(a, h) + 1e-12
        assert e == pytest.approx(pencil_min, abs=1e-9)
        assert swept.n_branches == m

    def test_beats_random_weight_draws(self, rng):
        n, m = 4, 3
        a = random_ansatz(rng, n, m)
        h = ring(n, 1.2)
        _, e = sweep_alpha(a, h, OptimizerConfig())
        for _ in range(300):
            w = rng.normal(size=m) + 1j * rng.normal(size=m)
            cand = SuperpositionAnsatz(a.graph, a.deformations, a.unitaries, w)
            assert expectation(cand, h) >= e - 1e-9


class TestPhaseSweep:
    def test_matches_grid_scan(self, rng):
        n = 4
        a = random_ansatz(rng, n, 2, identity_unitaries=True)
        h = ising(build_lattice(1, (n,), periodic=False), 0.7)
        pair = (1, 2)
        swept, e = sweep_phase(a, h, pair, OptimizerConfig())
        grid_best = np.inf
        gamma0 = a.graph.dense()
        for phi in np.linspace(-np.pi, np.pi, 401):
            g = gamma0.copy()
            g[pair] = g[pair[::-1]] = phi
            cand = SuperpositionAnsatz(
                WeightedGraph(g), a.deformations, a.unitaries, a.weights
            )
            grid_best = min(grid_best, expectation(cand, h))
        assert e <= grid_best + 1e-9

    def test_repeat_sweep_is_stationary(self, rng):
        n = 4
        a = random_ansatz(rng, n, 2)
        h = ring(n, 1.0)
        a, e1 = sweep_phase(a, h, (0, 3), OptimizerConfig())
        _, e2 = sweep_phase(a, h, (0, 3), OptimizerConfig())
        assert e2 <= e1 + 1e-12
        assert e1 - e2 <= 1e-10 * (1.0 + abs(e1))


class TestUnitarySweep:
    def test_rotates_into_site_ground_state(self):
        n = 4
        h = TwoLocalObservable(n, (), tuple((a, -PAULI_Z) for a in range(n)))
        eye = np.broadcast_to(np.eye(2, dtype=complex), (n, 2, 2)).copy()
        a = SuperpositionAnsatz(
            WeightedGraph(np.zeros((n, n))),
            DeformationMatrix(np.zeros((n, 1), dtype=complex)),
            LocalUnitaries(eye),
            np.array([1.0]),
        )
        e = expectation(a, h)
        assert e == pytest.approx(0.0, abs=1e-12)
        p = ParameterPacking.from_structure(n, 1, None)
        for g in p.unitary_groups:
            a, e = sweep_local_unitary(a, h, g, OptimizerConfig())
        assert e == pytest.approx(-float(n), abs=1e-7)


class TestSweepMonotonicity:
    def test_every_sweep_kind_never_raises_energy(self, rng):
        h_cache = {}
        for trial in range(25):
            n = int(rng.integers(2, 7))
            m = int(rng.integers(1, 4))
            if n not in h_cache:
                h_cache[n] = ring(n, 1.1)
            h = h_cache[n]
            a = random_ansatz(rng, n, m)
            e = expectation(a, h)
            cfg = OptimizerConfig()
            moves = [
                lambda a, e: sweep_alpha(a, h, cfg, e),
                lambda a, e: sweep_alpha_deformations(a, h, int(rng.integers(n)), cfg, e),
                lambda a, e: sweep_phase(a, h, (0, n - 1), cfg, e),
            ]
            rng.shuffle(moves)
            for move in moves:
                a, e_new = move(a, e)
                assert e_new <= e + 1e-10 * (1.0 + abs(e))
                e = e_new

    def test_full_round_monotone(self, rng):
        n = 5
        h = ring(n, 0.8)
        a = random_ansatz(rng, n, 2)
        e0 = expectation(a, h)
        a, e1 = sweep_round(a, h, OptimizerConfig())
        assert e1 <= e0 + 1e-10
        assert energy(a, h) == pytest.approx(e1, abs=1e-11)


class TestQuasiNewton:
    def test_gradient_fd_on_quadratic(self, rng):
        q = rng.normal(size=(6, 6))
        q = q @ q.T + np.eye(6)
        b = rng.normal(size=6)
        x = rng.normal(size=6)
        grad = gradient_fd(lambda v: 0.5 * v @ q @ v + b @ v, x)
        np.testing.assert_allclose(grad, q @ x + b, rtol=1e-5, atol=1e-5)

    def test_small_ring_reaches_ground_state(self):
        h = ring(4, 1.0)
        exact = exact_ground_energy(h)
        cfg = OptimizerConfig(max_iterations=80)
        best = np.inf
        for seed in range(5):
            a = initial_ansatz(4, 1, None, seed=seed)
            out, info = minimize_quasi_newton(a, h, cfg)
            best = min(best, info["energy"])
        assert (best - exact) / abs(exact) <= 5e-2

    def test_never_returns_worse_state(self, rng):
        h = ring(4, 1.3)
        a = random_ansatz(rng, 4, 2)
        e0 = expectation(a, h)
        out, info = minimize_quasi_newton(a, h, OptimizerConfig(max_iterations=3))
        assert info["energy"] <= e0 + 1e-12
        assert expectation(out, h) == pytest.approx(info["energy"], abs=1e-10)

    def test_index_subset_freezes_complement(self, rng):
        h = ring(4, 1.0)
        a = random_ansatz(rng, 4, 2)
        p = ParameterPacking.from_structure(4, 2, None)
        idx = np.arange(p.weight_slice.start, p.weight_slice.stop)
        out, info = minimize_quasi_newton(a, h, OptimizerConfig(max_iterations=20), p, idx)
        np.testing.assert_allclose(out.graph.dense(), a.graph.dense(), atol=1e-12)
        np.testing.assert_allclose(
            out.deformations.values, a.deformations.values, atol=1e-12
        )
        assert info["energy"] <= expectation(a, h) + 1e-12


class TestGrowth:
    def test_appended_branch_barely_moves_energy(self, rng):
        h = ring(5, 1.0)
        a = random_ansatz(rng, 5, 2)
        cfg = OptimizerConfig()
        e0 = expectation(a, h)
        grown, e1 = grow_superposition(a, h, cfg, np.random.default_rng(3), e0)
        assert grown.n_branches == 3
        # the exact weight re-solve runs after the append, so growth never hurts
        assert e1 <= e0 + cfg.growth_drift * max(abs(e0), 1e-12) + 1e-12

    def test_growth_is_deterministic(self, rng):
        h = ring(5, 1.0)
        a = random_ansatz(rng, 5, 2)
        cfg = OptimizerConfig()
        g1, e1 = grow_superposition(a, h, cfg, np.random.default_rng(11))
        g2, e2 = grow_superposition(a, h, cfg, np.random.default_rng(11))
        assert e1 == e2
        np.testing.assert_array_equal(g1.deformations.values, g2.deformations.values)

    def test_tied_growth_keeps_deformation_shared(self):
        lat = build_lattice(1, (6,), periodic=True)
        prof = SymmetryProfile(mode="fully_translation_invariant", lattice=lat)
        h = ising(lat, 1.0)
        a = initial_ansatz(6, 1, prof, seed=0)
        grown, _ = grow_superposition(a, h, OptimizerConfig(), np.random.default_rng(0))
        d = grown.deformations.values
        assert d.shape == (6, 2)
        assert np.all(d == d[0])


class TestSchedule:
    def test_small_ring_schedule_hits_tolerance(self):
        h = ring(4, 1.0)
        exact = exact_ground_energy(h)
        cfg = OptimizerConfig(m_schedule=(1, 2), seed=0, max_iterations=150, max_rounds=12)
        ansatz, trace = run_schedule(h, None, cfg)
        dev = abs(trace.final_energy - exact) / abs(exact)
        assert dev <= 1e-3
        assert expectation(ansatz, h) == pytest.approx(trace.final_energy, abs=1e-10)

    def test_stage_energies_never_increase(self):
        h = ring(5, 0.8)
        cfg = OptimizerConfig(
            m_schedule=(1, 2, 3), max_iterations=10, max_rounds=3, seed=1
        )
        _, trace = run_schedule(h, None, cfg)
        finals = trace.stage_energies("stage-final")
        assert [m for m, _ in finals] == [1, 2, 3]
        es = [e for _, e in finals]
        assert all(es[i + 1] <= es[i] + 1e-12 for i in range(len(es) - 1))

    def test_schedule_validation(self):
        h = ring(4, 1.0)
        with pytest.raises(ValueError):
            run_schedule(h, None, OptimizerConfig(m_schedule=()))
        with pytest.raises(ValueError):
            run_schedule(h, None, OptimizerConfig(m_schedule=(2, 2)))
        with pytest.raises(ValueError):
            run_schedule(h, None, OptimizerConfig(m_schedule=(3, 1)))

    def test_refine_warm_start_does_not_regress(self):
        h = ring(4, 1.0)
        cfg = OptimizerConfig(m_schedule=(1, 2), max_iterations=15, max_rounds=3, seed=0)
        ansatz, trace = run_schedule(h, None, cfg)
        refined, e, rtrace = refine_ansatz(ansatz, h, cfg)
        assert e <= trace.final_energy + 1e-12
        stages = [r.stage for r in rtrace.records]
        assert stages[0] == "initial" and stages[-1] == "stage-final"


class TestTrace:
    def test_empty_trace_has_no_final_energy(self):
        with pytest.raises(ValueError):
            OptimizationTrace().final_energy

    def test_log_and_filter(self):
        t = OptimizationTrace()
        t.log("initial", 1, -1.0)
        t.log("grow", 2, -1.5, "candidate 0")
        t.log("stage-final", 2, -1.6)
        assert t.final_energy == -1.6
        assert t.stage_energies("grow") == [(2, -1.5)]


def _dense_h(obs):
    from wgsolve.oracle import build_dense_matrix

    return build_dense_matrix(obs)
