"""Experiment runner: sectioned config in, deterministic CSV (and figures) out.

Subcommands

* ``optimize``       one full growth schedule at a fixed field; writes the
                     energy trace, a checkpoint, and a one-row summary.
* ``sweep-field``    loop over a field range, warm-starting each point from
                     the previous optimum (``--cold-start`` for independent
                     points, which also unlocks ``--jobs``).
* ``compare-exact``  adds exact diagonalization, the relative deviation, and
                     the cluster lower bound per field point.
* ``anderson``       the cluster lower bound alone over the field range.
* ``reduce``         dump one reduced density block of the optimized state.

Exit codes: 1 broken config / arguments, 2 capacity exceeded, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field, fields as dc_fields
from datetime import datetime, timezone
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .analysis import block_entropy, correlations
from .core import SuperpositionAnsatz, SymmetryProfile, save_ansatz
from .errors import CapacityError, DegenerateSolutionError, DegenerateStateError, NumericRangeError
from .hamiltonian import Lattice, build_lattice, ising
from .optimize import OptimizerConfig, OptimizationTrace, refine_ansatz, run_schedule
from .oracle import anderson_bound, exact_ground_energy
from .reduction import MAX_BLOCK_SITES, expectation, reduced_density


class ConfigError(ValueError):
    """Anything wrong with the config file or flag combination."""


_ALLOWED_KEYS = {
    "model": {"type", "b", "b_start", "b_stop", "b_step"},
    "lattice": {"dim", "extents", "periodic"},
    "ansatz": {"mode", "r0", "m_schedule", "alternating", "uniform", "shared_deformation", "seed"},
    "optimizer": {
        "max_iterations",
        "gradient_tolerance",
        "fd_step",
        "sweep_tolerance",
        "eigen_regularization",
        "max_rounds",
        "max_fd_parameters",
        "growth_weight",
        "growth_noise",
        "growth_drift",
        "growth_candidates",
        "quasi_newton",
        "unitary_restarts",
    },
    "outputs": {"directory", "reports", "reduce_sites", "checkpoint"},
}

_MODES = ("none", "free", "range_cutoff", "distance_dependent", "fully_translation_invariant")


@dataclass
class ExperimentConfig:
    """Validated experiment description, resolved from the sectioned text file."""

    fields: Tuple[float, ...]
    dim: int
    extents: Tuple[int, ...]
    periodic: bool
    mode: str
    r0: Optional[float]
    alternating: bool
    uniform: bool
    shared_deformation: bool
    m_schedule: Tuple[int, ...]
    seed: int
    optimizer: Dict[str, object]
    out_dir: str
    reports: Tuple[str, ...]
    reduce_sites: Tuple[int, ...] = ()
    checkpoint: Optional[str] = None

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.extents))


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError("key %r wants a boolean, got %r" % (key, raw))


def _parse_ints(raw: str, key: str) -> Tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in raw.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError("key %r wants integers, got %r" % (key, raw)) from exc


def load_config(path: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ConfigError("config file %r is missing or unreadable" % path)
    for section in parser.sections():
        if section not in _ALLOWED_KEYS:
            raise ConfigError("unknown config section [%s]" % section)
        for key in parser[section]:
            if key not in _ALLOWED_KEYS[section]:
                raise ConfigError("unknown key %r in section [%s]" % (key, section))
    for required in ("model", "lattice"):
        if required not in parser:
            raise ConfigError("config needs a [%s] section" % required)

    model = parser["model"]
    if model.get("type", "ising").strip() != "ising":
        raise ConfigError("only the transverse-field model type 'ising' is supported")
    if "b" in model:
        if any(k in model for k in ("b_start", "b_stop", "b_step")):
            raise ConfigError("give either b or the b_start/b_stop/b_step range, not both")
        try:
            fields = (float(model["b"]),)
        except ValueError as exc:
            raise ConfigError("key 'b' wants a number") from exc
    else:
        try:
            start, stop, step = (float(model[k]) for k in ("b_start", "b_stop", "b_step"))
        except (KeyError, ValueError) as exc:
            raise ConfigError("field range needs numeric b_start, b_stop, b_step") from exc
        if step <= 0 or stop < start:
            raise ConfigError("field range must run forward with positive step")
        count = int(round((stop - start) / step)) + 1
        fields = tuple(round(start + i * step, 10) for i in range(count) if start + i * step <= stop + 1e-9)

    lat = parser["lattice"]
    try:
        dim = int(lat.get("dim", "1"))
        extents = _parse_ints(lat.get("extents", ""), "extents")
        periodic = _parse_bool(lat.get("periodic", "true"), "periodic")
    except KeyError as exc:
        raise ConfigError("lattice section incomplete") from exc
    if dim not in (1, 2, 3) or len(extents) != dim:
        raise ConfigError("lattice dim must be 1-3 with matching extents")

    ans = parser["ansatz"] if "ansatz" in parser else {}
    mode = (ans.get("mode", "free") or "free").strip()
    if mode not in _MODES:
        raise ConfigError("unknown symmetry mode %r (choose from %s)" % (mode, ", ".join(_MODES)))
    r0 = None
    if "r0" in ans:
        try:
            r0 = float(ans["r0"])
        except ValueError as exc:
            raise ConfigError("key 'r0' wants a number") from exc
    m_schedule = _parse_ints(ans.get("m_schedule", "1 2 3 4"), "m_schedule")
    if not m_schedule or any(
        m_schedule[i] >= m_schedule[i + 1] for i in range(len(m_schedule) - 1)
    ) or m_schedule[0] < 1:
        raise ConfigError("m_schedule must be strictly increasing positive integers")
    alternating = _parse_bool(ans.get("alternating", "false"), "alternating")
    uniform = _parse_bool(ans.get("uniform", "false"), "uniform")
    shared = _parse_bool(ans.get("shared_deformation", "false"), "shared_deformation")
    try:
        seed = int(ans.get("seed", "0"))
    except ValueError as exc:
        raise ConfigError("key 'seed' wants an integer") from exc
    env_seed = os.environ.get("WGS_SEED")
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError("WGS_SEED must be an integer, got %r" % env_seed) from exc

    opt_raw = parser["optimizer"] if "optimizer" in parser else {}
    optimizer: Dict[str, object] = {}
    known = {f.name: f.type for f in dc_fields(OptimizerConfig)}
    for key, raw in dict(opt_raw).items():
        if key in ("m_schedule", "sweep_order", "seed"):
            raise ConfigError("key %r belongs in the [ansatz] section" % key)
        if key not in known:
            raise ConfigError("unknown optimizer key %r" % key)
        try:
            if key in (
                "max_iterations",
                "max_rounds",
                "max_fd_parameters",
                "unitary_restarts",
                "growth_candidates",
            ):
                optimizer[key] = int(raw)
            elif key == "quasi_newton":
                optimizer[key] = _parse_bool(raw, key)
            else:
                optimizer[key] = float(raw)
        except ValueError as exc:
            raise ConfigError("bad value for optimizer key %r: %r" % (key, raw)) from exc

    out = parser["outputs"] if "outputs" in parser else {}
    out_dir = out.get("directory", "results")
    reports = tuple(tok for tok in out.get("reports", "csv,plots").replace(",", " ").split())
    for rep in reports:
        if rep not in ("csv", "plots"):
            raise ConfigError("unknown report kind %r (csv or plots)" % rep)
    reduce_sites = _parse_ints(out.get("reduce_sites", ""), "reduce_sites") if "reduce_sites" in out else ()
    checkpoint = out.get("checkpoint") or None

    return ExperimentConfig(
        fields=fields,
        dim=dim,
        extents=extents,
        periodic=periodic,
        mode=mode,
        r0=r0,
        alternating=alternating,
        uniform=uniform,
        shared_deformation=shared,
        m_schedule=m_schedule,
        seed=seed,
        optimizer=optimizer,
        out_dir=out_dir,
        reports=reports,
        reduce_sites=reduce_sites,
        checkpoint=checkpoint,
    )


# -- experiment assembly -------------------------------------------------------


def _build_lattice(cfg: ExperimentConfig) -> Lattice:
    return build_lattice(cfg.dim, cfg.extents, periodic=cfg.periodic)


def _build_profile(cfg: ExperimentConfig, lattice: Lattice) -> Optional[SymmetryProfile]:
    if cfg.mode == "none":
        return None
    return SymmetryProfile(
        mode=cfg.mode,
        r0=cfg.r0,
        alternating_unitaries=cfg.alternating,
        uniform_unitaries=cfg.uniform,
        shared_deformation=cfg.shared_deformation,
        lattice=lattice,
    )


def _optimizer_config(cfg: ExperimentConfig, seed: int) -> OptimizerConfig:
    return OptimizerConfig(seed=seed, m_schedule=cfg.m_schedule, **cfg.optimizer)


def _entropy_cells(ansatz: SuperpositionAnsatz, lattice: Lattice) -> List[str]:
    """Entropies of side-L cubes anchored at the origin, L = 1..3; blank when infeasible."""
    cells: List[str] = []
    for side in (1, 2, 3):
        if any(side > e for e in lattice.extents) or side ** lattice.dim > MAX_BLOCK_SITES:
            cells.append("")
            continue
        coords = np.stack(
            np.meshgrid(*[np.arange(side)] * lattice.dim, indexing="ij"), axis=-1
        ).reshape(-1, lattice.dim)
        sites = [lattice.site_index(c) for c in coords]
        cells.append(repr(block_entropy(ansatz, sites)))
    return cells


def _neighbor_pair(lattice: Lattice) -> Tuple[int, int]:
    """Site 0 and its neighbor along the first axis (the reported correlation pair)."""
    step = np.zeros(lattice.dim, dtype=int)
    step[0] = 1
    return 0, lattice.site_index(step % np.array(lattice.extents))


def _diagnostic_cells(ansatz: SuperpositionAnsatz, lattice: Lattice) -> List[str]:
    a, b = _neighbor_pair(lattice)
    q = correlations(ansatz, a, b).q_max
    return [repr(q)] + _entropy_cells(ansatz, lattice)


def _write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence[str]]):
    """Atomic write; first line is a timestamp comment, the body is deterministic."""
    stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("# generated %s\n" % stamp)
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    os.replace(tmp, path)


_BASE_HEADER = ["B", "m", "energy", "energy_per_bond"]
_TAIL_HEADER = ["q_max", "entropy_L1", "entropy_L2", "entropy_L3", "seconds"]


def _schedule_point(cfg: ExperimentConfig, b_value: float, seed: int):
    """One full cold optimization at a single field value (worker-safe)."""
    lattice = _build_lattice(cfg)
    ham = ising(lattice, b_value)
    profile = _build_profile(cfg, lattice)
    opt_cfg = _optimizer_config(cfg, seed)
    t0 = time.perf_counter()
    ansatz, trace = run_schedule(ham, profile, opt_cfg)
    seconds = time.perf_counter() - t0
    return ansatz, trace, seconds, lattice, ham


def _cold_point_worker(payload):
    cfg, b_value, seed = payload
    ansatz, trace, seconds, lattice, ham = _schedule_point(cfg, b_value, seed)
    energy_val = trace.final_energy
    row = (
        [repr(float(b_value)), str(ansatz.n_branches), repr(energy_val), repr(energy_val / len(lattice.bonds))]
        + _diagnostic_cells(ansatz, lattice)
        + ["%.3f" % seconds]
    )
    stage = list(trace.stage_energies("stage-final"))
    return row, stage


# -- subcommands ---------------------------------------------------------------


def run_optimize(cfg: ExperimentConfig, args) -> List[str]:
    if len(cfg.fields) != 1:
        raise ConfigError("optimize wants a single field value b, not a range")
    b_value = cfg.fields[0]
    ansatz, trace, seconds, lattice, _ = _schedule_point(cfg, b_value, cfg.seed)
    energy_val = trace.final_energy
    row = (
        [repr(float(b_value)), str(ansatz.n_branches), repr(energy_val), repr(energy_val / len(lattice.bonds))]
        + _diagnostic_cells(ansatz, lattice)
        + ["%.3f" % seconds]
    )
    summary = os.path.join(cfg.out_dir, "summary.csv")
    _write_csv(summary, _BASE_HEADER + _TAIL_HEADER, [row])
    trace_path = os.path.join(cfg.out_dir, "trace.csv")
    _write_csv(
        trace_path,
        ["stage", "m", "energy", "detail"],
        [[r.stage, str(r.n_branches), repr(r.energy), r.detail.replace(",", ";")] for r in trace.records],
    )
    written = [summary, trace_path]
    try:
        ck = os.path.join(cfg.out_dir, cfg.checkpoint or "checkpoint.state")
        save_ansatz(ansatz, ck)
        written.append(ck)
    except CapacityError as exc:
        print("note: checkpoint skipped (%s)" % exc, file=sys.stderr)
    if _plots_enabled(cfg, args):
        from . import report

        written.append(report.render_trace(trace, cfg.out_dir))
    return written


def _plots_enabled(cfg: ExperimentConfig, args) -> bool:
    return "plots" in cfg.reports and not getattr(args, "no_plot", False)


def run_sweep_field(cfg: ExperimentConfig, args) -> List[str]:
    cold = bool(getattr(args, "cold_start", False))
    jobs = int(getattr(args, "jobs", 1) or 1)
    if jobs > 1 and not cold:
        raise ConfigError("--jobs needs --cold-start; warm-starting is inherently sequential")
    rows: List[List[str]] = []
    if cold:
        payloads = [(cfg, b, cfg.seed + idx) for idx, b in enumerate(cfg.fields)]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_cold_point_worker, payloads))
        else:
            results = [_cold_point_worker(p) for p in payloads]
        rows = [row for row, _ in results]
    else:
        lattice = _build_lattice(cfg)
        profile = _build_profile(cfg, lattice)
        ansatz = None
        for b_value in cfg.fields:
            ham = ising(lattice, b_value)
            t0 = time.perf_counter()
            if ansatz is None:
                ansatz, trace = run_schedule(ham, profile, _optimizer_config(cfg, cfg.seed))
                energy_val = trace.final_energy
            else:
                ansatz, energy_val, _ = refine_ansatz(ansatz, ham, _optimizer_config(cfg, cfg.seed))
            seconds = time.perf_counter() - t0
            rows.append(
                [repr(float(b_value)), str(ansatz.n_branches), repr(energy_val), repr(energy_val / len(lattice.bonds))]
                + _diagnostic_cells(ansatz, lattice)
                + ["%.3f" % seconds]
            )
    path = os.path.join(cfg.out_dir, "sweep_field.csv")
    _write_csv(path, _BASE_HEADER + _TAIL_HEADER, rows)
    written = [path]
    if _plots_enabled(cfg, args):
        from . import report

        written.append(report.render_sweep(path, cfg.out_dir))
    return written


def run_compare_exact(cfg: ExperimentConfig, args) -> List[str]:
    lattice = _build_lattice(cfg)
    cluster_shape = _default_cluster_shape(cfg)
    rows: List[List[str]] = []
    for idx, b_value in enumerate(cfg.fields):
        ham = ising(lattice, b_value)
        exact = exact_ground_energy(ham, seed=cfg.seed)
        bound = anderson_bound(ham, cluster_shape, seed=cfg.seed)
        t0 = time.perf_counter()
        # every point is seeded independently so the output is identical
        # whether points run sequentially or under --jobs
        ansatz, trace, _, _, _ = _schedule_point(cfg, b_value, cfg.seed + idx)
        seconds = time.perf_counter() - t0
        diag = _diagnostic_cells(ansatz, lattice)
        stage = trace.stage_energies("stage-final")
        for m_val, e_val in stage:
            final = m_val == stage[-1][0]
            rows.append(
                [
                    repr(float(b_value)),
                    str(m_val),
                    repr(e_val),
                    repr(e_val / len(lattice.bonds)),
                    repr(abs(e_val - exact) / abs(exact)),
                    repr(bound),
                ]
                + (diag if final else ["", "", "", ""])
                + ["%.3f" % seconds]
            )
    header = _BASE_HEADER + ["rel_dev", "anderson"] + _TAIL_HEADER
    path = os.path.join(cfg.out_dir, "compare_exact.csv")
    _write_csv(path, header, rows)
    written = [path]
    if _plots_enabled(cfg, args):
        from . import report

        written.append(report.render_compare(path, cfg.out_dir))
    return written


def _default_cluster_shape(cfg: ExperimentConfig) -> Tuple[int, ...]:
    """Largest tile of 2-per-axis cubes that divides the lattice, else single sites."""
    shape = []
    for e in cfg.extents:
        shape.append(2 if e % 2 == 0 else 1)
    return tuple(shape)


def run_anderson(cfg: ExperimentConfig, args) -> List[str]:
    lattice = _build_lattice(cfg)
    cluster_shape = _default_cluster_shape(cfg)
    rows = []
    for b_value in cfg.fields:
        ham = ising(lattice, b_value)
        t0 = time.perf_counter()
        bound = anderson_bound(ham, cluster_shape, seed=cfg.seed)
        seconds = time.perf_counter() - t0
        rows.append(
            [repr(float(b_value)), "", "", "", repr(bound), "", "", "", "", "%.3f" % seconds]
        )
    header = _BASE_HEADER + ["anderson"] + _TAIL_HEADER
    path = os.path.join(cfg.out_dir, "anderson.csv")
    _write_csv(path, header, rows)
    written = [path]
    if _plots_enabled(cfg, args):
        from . import report

        written.append(report.render_anderson(path, cfg.out_dir))
    return written


def run_reduce(cfg: ExperimentConfig, args) -> List[str]:
    if not cfg.reduce_sites:
        raise ConfigError("reduce needs reduce_sites in [outputs], e.g. reduce_sites = 0,1")
    if len(cfg.fields) != 1:
        raise ConfigError("reduce wants a single field value b, not a range")
    ansatz, _, _, lattice, _ = _schedule_point(cfg, cfg.fields[0], cfg.seed)
    rho = reduced_density(ansatz, cfg.reduce_sites)
    tag = "-".join(str(s) for s in cfg.reduce_sites)
    path = os.path.join(cfg.out_dir, "reduced_density_%s.csv" % tag)
    dim = rho.matrix.shape[0]
    rows = [[repr(complex(rho.matrix[r, c])) for c in range(dim)] for r in range(dim)]
    _write_csv(path, ["col%d" % c for c in range(dim)], rows)
    written = [path]
    if _plots_enabled(cfg, args):
        from . import report

        written.append(report.render_density(rho.matrix, tag, cfg.out_dir))
    return written


# -- entry point ---------------------------------------------------------------

_SUBCOMMANDS = {
    "optimize": run_optimize,
    "sweep-field": run_sweep_field,
    "compare-exact": run_compare_exact,
    "anderson": run_anderson,
    "reduce": run_reduce,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="wgsolve",
        description="Variational ground-state experiments on spin lattices.",
    )
    parser.add_argument("subcommand", choices=sorted(_SUBCOMMANDS))
    parser.add_argument("--config", required=True, help="sectioned key=value experiment file")
    parser.add_argument("--out", help="output directory (overrides [outputs] directory)")
    parser.add_argument("--jobs", type=int, default=1, help="parallel field points (cold start only)")
    parser.add_argument("--cold-start", action="store_true", help="optimize field points independently")
    parser.add_argument("--no-plot", action="store_true", help="skip figure rendering")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.out:
            cfg.out_dir = args.out
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        os.makedirs(cfg.out_dir, exist_ok=True)
        written = _SUBCOMMANDS[args.subcommand](cfg, args)
    except (ValueError, configparser.Error) as exc:  # ConfigError is a ValueError
        print("config error: %s" % exc, file=sys.stderr)
        return 1
    except CapacityError as exc:
        print("capacity error: %s" % exc, file=sys.stderr)
        return 2
    except (NumericRangeError, DegenerateStateError, DegenerateSolutionError) as exc:
        print("numeric failure: %s" % exc, file=sys.stderr)
        return 3
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
