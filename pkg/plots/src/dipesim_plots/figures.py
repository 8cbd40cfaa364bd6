"""Figure rendering from dipesim harness CSVs.

The figures consume only the documented CSV schemas (no in-process
coupling to the simulator package):

* variance: columns k, var_wi        -> log2 variance vs k with LS fit
* error:    columns N, mean_abs_error -> log-log decay with -1/2 reference
* checks:   columns name, params, residual, threshold, passed
* netsim:   columns run_id, classical_bytes, quantum_payload_bytes,
            quantum_qubits_sent

Rendering is deterministic for fixed input: figures carry no timestamps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "dipesim-plots"

import matplotlib.pyplot as plt
import numpy as np


class PlotInputError(ValueError):
    """Missing columns or an empty row selection."""


KINDS = ("variance", "error", "checks", "netsim")

_REQUIRED = {
    "variance": ("k", "var_wi"),
    "error": ("N", "mean_abs_error"),
    "checks": ("name", "params", "residual", "threshold", "passed"),
    "netsim": ("run_id", "classical_bytes", "quantum_payload_bytes", "quantum_qubits_sent"),
}


@dataclass
class PlotSpec:
    """One figure request: input CSV, figure kind, output image path."""

    kind: str
    source: str
    out: str
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlotInputError(f"unknown figure kind {self.kind!r}")


def load_rows(path: str, kind: str) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise PlotInputError(f"{path}: no data rows")
    missing = [c for c in _REQUIRED[kind] if c not in rows[0]]
    if missing:
        raise PlotInputError(f"{path}: missing columns {missing}")
    return rows


def least_squares_slope(x, y) -> tuple:
    """Plain least-squares fit y = a x + b; returns (a, b)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    slope = float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
    return slope, float(y.mean() - slope * x.mean())


def _save(fig, out: str) -> None:
    metadata = {"Date": None} if out.endswith(".svg") else None
    fig.savefig(out, metadata=metadata)
    plt.close(fig)


def variance_figure(rows: list, out: str) -> float:
    """log2 per-batch variance against channel width with the fitted
    slope annotated; returns the slope."""
    ks = [float(r["k"]) for r in rows]
    log_vars = [np.log2(float(r["var_wi"])) for r in rows]
    slope, intercept = least_squares_slope(ks, log_vars)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(ks, log_vars, "o", color="tab:blue", label="measured")
    grid = np.linspace(min(ks), max(ks), 50)
    ax.plot(grid, slope * grid + intercept, "-", color="tab:orange",
            label=f"fit, slope = {slope:.6f}")
    ax.set_xlabel("communicated qubits k")
    ax.set_ylabel("log2 var(w_i)")
    ax.set_title("Per-batch estimator variance vs channel width")
    ax.legend()
    fig.tight_layout()
    _save(fig, out)
    return slope


def error_figure(rows: list, out: str) -> float:
    """Mean absolute error against copy budget on log-log axes with a
    -1/2 reference; returns the fitted log-log slope."""
    ns = np.array([float(r["N"]) for r in rows])
    errs = np.array([float(r["mean_abs_error"]) for r in rows])
    slope, intercept = least_squares_slope(np.log10(ns), np.log10(errs))
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.loglog(ns, errs, "o", color="tab:blue", label="measured")
    ref = errs[0] * np.sqrt(ns[0] / ns)
    ax.loglog(ns, ref, "--", color="tab:gray", label="slope -1/2 reference")
    grid = np.logspace(np.log10(ns.min()), np.log10(ns.max()), 50)
    ax.loglog(grid, 10.0**intercept * grid**slope, "-", color="tab:orange",
              label=f"fit, slope = {slope:.6f}")
    ax.set_xlabel("copies N")
    ax.set_ylabel("mean |estimate - truth|")
    ax.set_title("Estimation error vs copy budget")
    ax.legend()
    fig.tight_layout()
    _save(fig, out)
    return slope


def checks_figure(rows: list, out: str) -> int:
    """Residual summary bar chart, one bar per check, coloured by
    pass/fail; returns the number of failures."""
    labels = [f"{r['name']}[{r['params']}]" for r in rows]
    residuals = np.array([float(r["residual"]) for r in rows])
    passed = [r["passed"] == "True" for r in rows]
    floor = 1e-18
    heights = np.log10(np.maximum(np.abs(residuals), floor)) - np.log10(floor)
    colors = ["tab:green" if ok else "tab:red" for ok in passed]
    fig, ax = plt.subplots(figsize=(max(6.0, 0.12 * len(rows)), 4.5))
    ax.bar(range(len(rows)), heights, color=colors)
    ax.set_xticks([])
    ax.set_xlabel(f"{len(rows)} checks (green pass / red fail)")
    ax.set_ylabel("log10 |residual| above 1e-18")
    fails = sum(1 for ok in passed if not ok)
    ax.set_title(f"Identity-check residuals ({fails} failing)")
    fig.tight_layout()
    _save(fig, out)
    return fails


def netsim_figure(rows: list, out: str) -> dict:
    """Byte accounting per run: classical vs quantum payload bars plus
    the qubit counter; returns the column totals."""
    run_ids = [r["run_id"] for r in rows]
    classical = np.array([float(r["classical_bytes"]) for r in rows])
    quantum = np.array([float(r["quantum_payload_bytes"]) for r in rows])
    qubits = np.array([float(r["quantum_qubits_sent"]) for r in rows])
    x = np.arange(len(rows))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    width = 0.4
    ax1.bar(x - width / 2, classical, width, label="classical bytes", color="tab:blue")
    ax1.bar(x + width / 2, quantum, width, label="quantum payload bytes", color="tab:purple")
    ax1.set_xlabel("run")
    ax1.set_ylabel("bytes")
    ax1.set_title("Channel bytes per run")
    ax1.legend()
    ax2.bar(x, qubits, color="tab:green")
    ax2.set_xlabel("run")
    ax2.set_ylabel("qubits")
    ax2.set_title("Quantum qubits sent")
    if len(run_ids) <= 12:
        ax1.set_xticks(x)
        ax1.set_xticklabels(run_ids)
        ax2.set_xticks(x)
        ax2.set_xticklabels(run_ids)
    else:
        ax1.set_xticks([])
        ax2.set_xticks([])
    fig.tight_layout()
    _save(fig, out)
    return {
        "classical_bytes": float(classical.sum()),
        "quantum_payload_bytes": float(quantum.sum()),
        "quantum_qubits_sent": float(qubits.sum()),
    }


def render(spec: PlotSpec):
    """Render one figure; returns the kind-specific summary value."""
    rows = load_rows(spec.source, spec.kind)
    if spec.kind == "variance":
        return variance_figure(rows, spec.out)
    if spec.kind == "error":
        return error_figure(rows, spec.out)
    if spec.kind == "checks":
        return checks_figure(rows, spec.out)
    return netsim_figure(rows, spec.out)
