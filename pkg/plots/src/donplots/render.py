"""Render publication-style figures from donflow run artifacts.

Reads only the documented file contracts (diagnostics.csv, heat.csv,
summary.json) — never solver internals — and writes deterministic PNG + SVG
panels: semilog oscillation decay with the fitted exponential overlay,
stationary-equation residual, eigenvalue/trace bands, and the heat-study
envelope with the gradient-quantity monitor.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

# exact column contracts of the producing CLI
DIAG_COLUMNS = [
    "t", "theta", "sup_abs_phidot", "osc_phi",
    "min_tr_omega_chiphi", "max_tr_omega_chiphi",
    "min_tr_chiphi_omega", "max_tr_chiphi_omega",
    "min_eig", "residual_sup", "b_current", "spectral_tail", "dt_used",
]
HEAT_COLUMNS = ["t", "sup_u", "inf_u", "sup_G_over_t", "harnack_R_running"]

CONVERGED_THETA = 1e-12

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "donplots",
}


class SchemaError(ValueError):
    """CSV header does not match the documented contract."""

    def __init__(self, path, missing, extra):
        self.missing = missing
        self.extra = extra
        parts = []
        if missing:
            parts.append(f"missing column(s): {', '.join(missing)}")
        if extra:
            parts.append(f"unexpected column(s): {', '.join(extra)}")
        super().__init__(f"{path}: {'; '.join(parts)}")


@dataclass(frozen=True)
class PlotJob:
    summary_path: Path
    diagnostics_path: Path
    out_dir: Path
    heat_path: Path | None = None
    formats: tuple = ("png", "svg")
    log_theta: bool = True
    log_residual: bool = True


def read_contract_csv(path, expected_columns) -> dict:
    """Parse a CSV against an exact header contract; floats only."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(path, expected_columns, []) from None
        if header != expected_columns:
            missing = [c for c in expected_columns if c not in header]
            extra = [c for c in header if c not in expected_columns]
            raise SchemaError(path, missing, extra)
        rows = [[float(v) for v in line] for line in reader if line]
    data = {name: np.array([r[k] for r in rows]) for k, name in enumerate(header)}
    return data


def _decay_fit_from_summary(summary: dict):
    fit = summary.get("decay_fit")
    if fit is None:
        fit = (summary.get("flow") or {}).get("decay_fit")
    return fit


def _save(fig, stem: Path, formats) -> list:
    written = []
    for fmt in formats:
        path = stem.with_suffix(f".{fmt}")
        # strip writer metadata so identical inputs give identical bytes
        metadata = {"Software": None} if fmt == "png" else {"Date": None}
        fig.savefig(path, format=fmt, metadata=metadata)
        written.append(str(path))
    plt.close(fig)
    return written


def _panel_theta(diag, fit, out_dir, job):
    t, theta = diag["t"], diag["theta"]
    fig, ax = plt.subplots()
    positive = theta > 0
    if job.log_theta and np.any(positive):
        ax.semilogy(t[positive], theta[positive], "o-", ms=3, label="theta(t)")
    else:
        ax.plot(t, theta, "o-", ms=3, label="theta(t)")
    slope = None
    converged = float(theta.max(initial=0.0)) <= CONVERGED_THETA or fit is None
    if converged:
        ax.annotate(
            "converged at t=0",
            xy=(0.5, 0.5),
            xycoords="axes fraction",
            ha="center",
            fontsize=12,
        )
    else:
        c1, c2 = fit["c1_hat"], fit["c2_hat"]
        slope = -c2
        lo, hi = fit.get("window", [t[0], t[-1]])
        tt = np.linspace(lo, hi, 200)
        ax.semilogy(tt, c1 * np.exp(-c2 * tt), "r--", label="fit c1*exp(-c2 t)")
        ax.annotate(
            f"slope {-c2:.6g}",
            xy=(0.02, 0.06),
            xycoords="axes fraction",
            fontsize=9,
            color="red",
        )
        ax.legend(loc="upper right")
    ax.set_xlabel("t")
    ax.set_ylabel("oscillation of d(phi)/dt")
    ax.set_title("time-derivative oscillation decay")
    files = _save(fig, out_dir / "theta_decay", job.formats)
    return {"files": files, "fit_slope": slope, "converged": converged}


def _panel_residual(diag, out_dir, job):
    t, res = diag["t"], diag["residual_sup"]
    fig, ax = plt.subplots()
    positive = res > 0
    if job.log_residual and np.any(positive):
        ax.semilogy(t[positive], res[positive], "s-", ms=3, color="tab:purple")
    else:
        ax.plot(t, res, "s-", ms=3, color="tab:purple")
    ax.set_xlabel("t")
    ax.set_ylabel("sup |residual|")
    ax.set_title("stationary-equation residual (log form)")
    return {"files": _save(fig, out_dir / "residual", job.formats)}


def _panel_eigen_band(diag, out_dir, job):
    t = diag["t"]
    fig, ax = plt.subplots()
    ax.fill_between(
        t, diag["min_tr_omega_chiphi"], diag["max_tr_omega_chiphi"],
        alpha=0.3, color="tab:blue", label="tr_omega(chi_phi) range",
    )
    ax.fill_between(
        t, diag["min_tr_chiphi_omega"], diag["max_tr_chiphi_omega"],
        alpha=0.3, color="tab:orange", label="tr_chi_phi(omega) range",
    )
    ax.plot(t, diag["min_eig"], "k-", lw=1.2, label="min eigenvalue")
    ax.set_xlabel("t")
    ax.set_ylabel("value")
    ax.set_title("eigenvalue floor and trace bounds")
    ax.legend(loc="best", fontsize=8)
    return {"files": _save(fig, out_dir / "eigen_band", job.formats)}


def _panel_heat(heat, out_dir, job):
    t = heat["t"]
    fig, ax = plt.subplots()
    ax.fill_between(
        t, heat["inf_u"], heat["sup_u"], alpha=0.3, color="tab:green",
        label="inf/sup envelope of u",
    )
    ax.plot(t, heat["sup_u"], color="tab:green", lw=1)
    ax.plot(t, heat["inf_u"], color="tab:green", lw=1)
    ax.set_xlabel("t")
    ax.set_ylabel("u range")
    ax2 = ax.twinx()
    ax2.plot(t, heat["sup_G_over_t"], "r-", lw=1.2, label="sup G/t")
    ax2.set_ylabel("sup G/t", color="red")
    ax2.grid(False)
    ax.set_title("heat study: envelope and gradient monitor")
    ax.legend(loc="upper right", fontsize=8)
    return {"files": _save(fig, out_dir / "heat", job.formats)}


def render(job: PlotJob) -> dict:
    """Render all panels; returns a manifest with file lists and the theta
    overlay slope (None when the run is flagged converged)."""
    with open(job.summary_path) as fh:
        summary = json.load(fh)
    diag = read_contract_csv(job.diagnostics_path, DIAG_COLUMNS)
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(STYLE):
        manifest = {
            "theta": _panel_theta(diag, _decay_fit_from_summary(summary), out_dir, job),
            "residual": _panel_residual(diag, out_dir, job),
            "eigen_band": _panel_eigen_band(diag, out_dir, job),
        }
        if job.heat_path is not None:
            heat = read_contract_csv(job.heat_path, HEAT_COLUMNS)
            manifest["heat"] = _panel_heat(heat, out_dir, job)
    return manifest
