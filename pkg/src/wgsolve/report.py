"""Figure rendering for the experiment CSVs (PNG files next to the data)."""

from __future__ import annotations

import csv
import os
from typing import Dict, List

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np  # noqa: E402


def _read_rows(path: str) -> List[Dict[str, str]]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _column(rows, key) -> np.ndarray:
    return np.array([float(r[key]) for r in rows if r.get(key)])


def render_trace(trace, out_dir: str) -> str:
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    energies = [r.energy for r in trace.records]
    ax.plot(range(len(energies)), energies, marker=".", lw=1.0)
    grow_at = [i for i, r in enumerate(trace.records) if r.stage == "grow"]
    for i in grow_at:
        ax.axvline(i, color="tab:gray", lw=0.6, ls="--")
    ax.set_xlabel("optimization step")
    ax.set_ylabel("energy")
    ax.set_title("energy trace (dashed: branch growth)")
    fig.tight_layout()
    path = os.path.join(out_dir, "trace.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_sweep(csv_path: str, out_dir: str) -> str:
    rows = _read_rows(csv_path)
    b = _column(rows, "B")
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6))
    axes[0].plot(b, _column(rows, "energy_per_bond"), marker="o", ms=3)
    axes[0].set_xlabel("transverse field B")
    axes[0].set_ylabel("energy per bond")
    q = _column(rows, "q_max")
    axes[1].plot(b[: len(q)], q, marker="o", ms=3, color="tab:red")
    if len(q):
        peak = int(np.argmax(q))
        axes[1].axvline(b[peak], color="tab:red", lw=0.7, ls=":")
        axes[1].annotate("peak B=%.3g" % b[peak], (b[peak], q[peak]), fontsize=8)
    axes[1].set_xlabel("transverse field B")
    axes[1].set_ylabel("max two-point correlation")
    fig.tight_layout()
    path = os.path.join(out_dir, "sweep_field.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_compare(csv_path: str, out_dir: str) -> str:
    rows = _read_rows(csv_path)
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    by_field: Dict[str, List] = {}
    for r in rows:
        by_field.setdefault(r["B"], []).append((int(r["m"]), float(r["rel_dev"])))
    for b_val, pts in by_field.items():
        pts.sort()
        ax.semilogy([m for m, _ in pts], [max(d, 1e-16) for _, d in pts], marker="o", label="B=%s" % b_val)
    ax.set_xlabel("superposed branches m")
    ax.set_ylabel("relative energy deviation")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = os.path.join(out_dir, "compare_exact.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_anderson(csv_path: str, out_dir: str) -> str:
    rows = _read_rows(csv_path)
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(_column(rows, "B"), _column(rows, "anderson"), marker="s", ms=3, color="tab:green")
    ax.set_xlabel("transverse field B")
    ax.set_ylabel("cluster lower bound")
    fig.tight_layout()
    path = os.path.join(out_dir, "anderson.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_density(matrix: np.ndarray, tag: str, out_dir: str) -> str:
    fig, ax = plt.subplots(figsize=(4.6, 4.0))
    im = ax.imshow(np.abs(matrix), cmap="viridis")
    fig.colorbar(im, ax=ax, label="|entry|")
    ax.set_title("reduced block %s" % tag)
    fig.tight_layout()
    path = os.path.join(out_dir, "reduced_density_%s.png" % tag)
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
