"""Variational ground states from superposed phase-coupled product states.

The package stitches together four layers:

* ``core`` — the ansatz state family and its exact dense expansion,
* ``reduction`` — scalable few-site density blocks and energy evaluation,
* ``optimize`` — coordinate sweeps, quasi-Newton refinement, branch growth,
* ``oracle`` / ``analysis`` — exact baselines and physics diagnostics.
"""

from .core import (
    DeformationMatrix,
    LocalUnitaries,
    SuperpositionAnsatz,
    SymmetryProfile,
    WeightedGraph,
    amplitude,
    dense_state,
    load_ansatz,
    save_ansatz,
)
from .errors import (
    CapacityError,
    DegenerateSolutionError,
    DegenerateStateError,
    NumericRangeError,
)
from .analysis import CorrelationRecord, area_law_fit, block_entropy, correlations
from .hamiltonian import Lattice, TwoLocalHamiltonian, TwoLocalObservable, build_lattice, ising
from .optimize import (
    OptimizerConfig,
    OptimizationTrace,
    ParameterPacking,
    initial_ansatz,
    refine_ansatz,
    run_schedule,
)
from .oracle import anderson_bound, brute_reduced, exact_ground_energy
from .reduction import expectation, gram_block, norm_squared, reduced_density

__all__ = [
    "CapacityError",
    "CorrelationRecord",
    "DeformationMatrix",
    "DegenerateSolutionError",
    "DegenerateStateError",
    "Lattice",
    "LocalUnitaries",
    "NumericRangeError",
    "OptimizationTrace",
    "OptimizerConfig",
    "ParameterPacking",
    "SuperpositionAnsatz",
    "SymmetryProfile",
    "TwoLocalHamiltonian",
    "TwoLocalObservable",
    "WeightedGraph",
    "amplitude",
    "anderson_bound",
    "area_law_fit",
    "block_entropy",
    "brute_reduced",
    "build_lattice",
    "correlations",
    "dense_state",
    "exact_ground_energy",
    "expectation",
    "gram_block",
    "initial_ansatz",
    "ising",
    "load_ansatz",
    "norm_squared",
    "reduced_density",
    "refine_ansatz",
    "run_schedule",
    "save_ansatz",
]

__version__ = "0.1.0"
