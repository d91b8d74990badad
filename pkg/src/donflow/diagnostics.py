"""Monitored quantities, decay fitting, and the stationary-equation residual.

The convergence monitor is the oscillation theta(t) = sup - inf of the time
derivative of the potential; its exponential decay is fitted on log theta.
The stationary-equation residual is measured in log form,
r = log(tr_{chi_phi} omega / n) - F - b with b the mean-removing constant, so
r has zero mean by construction and r = -(phi_t - mean(phi_t)) pointwise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields

import numpy as np

from .geometry import BackgroundGeometry
from .grid import ScalarField, dbar_hessian, spectral_tail_energy
from .hermitian import stack_inverse_hermitian, stack_trace_pair

__all__ = [
    "DiagnosticsRow",
    "DecayFit",
    "DIAG_COLUMNS",
    "oscillation",
    "decay_fit",
    "unit_time_ratios",
    "donaldson_residual",
    "residual_from_trace",
    "assemble_row",
    "write_diagnostics_csv",
    "read_diagnostics_csv",
    "format_float",
]

THETA_FLOOR = 100 * np.finfo(float).eps


@dataclass(frozen=True)
class DiagnosticsRow:
    t: float
    theta: float
    sup_abs_phidot: float
    osc_phi: float
    min_tr_omega_chiphi: float
    max_tr_omega_chiphi: float
    min_tr_chiphi_omega: float
    max_tr_chiphi_omega: float
    min_eig: float
    residual_sup: float
    b_current: float
    spectral_tail: float
    dt_used: float

    def __post_init__(self):
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ValueError(f"non-finite diagnostics entry {f.name}")
        if self.theta < 0:
            raise ValueError("theta must be nonnegative")
        if (
            self.min_tr_omega_chiphi > self.max_tr_omega_chiphi
            or self.min_tr_chiphi_omega > self.max_tr_chiphi_omega
        ):
            raise ValueError("min/max pair out of order")


DIAG_COLUMNS = [f.name for f in fields(DiagnosticsRow)]


@dataclass(frozen=True)
class DecayFit:
    """Least-squares exponential fit theta(t) ~ c1_hat * exp(-c2_hat * t)."""

    c1_hat: float
    c2_hat: float
    window: tuple
    r_squared: float
    worst_unit_ratio: float | None
    n_samples: int

    @property
    def is_decaying(self) -> bool:
        return self.c2_hat > 0.0


def oscillation(f: ScalarField) -> float:
    """sup - inf over the grid."""
    return f.max() - f.min()


def _interp_log_theta(times, log_thetas, t):
    return float(np.interp(t, times, log_thetas))


def unit_time_ratios(times, thetas, start=1.0):
    """Ratios theta(m+1)/theta(m) at integer-spaced times >= start, from
    linear interpolation of log theta; samples at or below the fp floor are
    excluded."""
    times = np.asarray(times, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    mask = thetas > THETA_FLOOR
    if np.count_nonzero(mask) < 2:
        return []
    times, log_thetas = times[mask], np.log(thetas[mask])
    lo = max(start, math.ceil(times[0]))
    marks = np.arange(lo, math.floor(times[-1]) + 1.0)
    if marks.size < 2:
        return []
    samples = [_interp_log_theta(times, log_thetas, m) for m in marks]
    return [math.exp(samples[k + 1] - samples[k]) for k in range(len(samples) - 1)]


def decay_fit(times, thetas, window=None):
    """Fit log theta over a window (default: the last half of the series).

    Returns None when the windowed series has fewer than 5 samples above the
    floating-point floor — the converged signal, not an error.
    """
    times = np.asarray(times, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    if window is None:
        t_hi = times[-1]
        window = (0.5 * (times[0] + t_hi), t_hi)
    lo, hi = window
    mask = (times >= lo) & (times <= hi) & (thetas > THETA_FLOOR)
    if np.count_nonzero(mask) < 5:
        return None
    t_w = times[mask]
    y = np.log(thetas[mask])
    slope, intercept = np.polyfit(t_w, y, 1)
    pred = slope * t_w + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot < 1e-30 else max(0.0, 1.0 - ss_res / ss_tot)
    ratios = unit_time_ratios(t_w, thetas[mask], start=t_w[0])
    return DecayFit(
        c1_hat=float(np.exp(intercept)),
        c2_hat=float(-slope),
        window=(float(lo), float(hi)),
        r_squared=float(min(1.0, r2)),
        worst_unit_ratio=max(ratios) if ratios else None,
        n_samples=int(np.count_nonzero(mask)),
    )


def residual_from_trace(tr_values: np.ndarray, f_values: np.ndarray, n: int):
    """(b, residual values) from the pointwise trace tr_{chi_phi} omega.

    b = mean(log(tr/n) - F); the residual log(tr/n) - F - b has zero mean by
    construction and vanishes exactly at solutions of the stationary equation.
    """
    logs = np.log(tr_values / n) - f_values
    b = float(np.mean(logs))
    return b, logs - b


def donaldson_residual(phi_tilde: ScalarField, geom: BackgroundGeometry):
    """Log-form residual of the stationary equation at a normalized potential.

    Returns (b, residual_field, residual_sup).
    """
    hess = dbar_hessian(phi_tilde)
    chi_phi = geom.chi.values + hess.values
    inv = stack_inverse_hermitian(chi_phi)  # raises if not positive definite
    tr = stack_trace_pair(inv, geom.omega.entries)
    b, r = residual_from_trace(tr, geom.F.flat, geom.n)
    field = ScalarField(geom.grid, r.reshape(geom.grid.shape))
    return b, field, float(np.max(np.abs(r)))


def assemble_row(state, geom: BackgroundGeometry) -> DiagnosticsRow:
    """Fill a diagnostics row from a flow state (pure; uses the state caches)."""
    tr = state.tr_chiphi_omega
    tr_omega_chi = np.einsum(
        "ij,pji->p", geom.omega_inverse, state.chi_phi.values
    ).real
    b, residual = residual_from_trace(tr, geom.F.flat, geom.n)
    return DiagnosticsRow(
        t=float(state.t),
        theta=oscillation(state.phi_dot),
        sup_abs_phidot=state.phi_dot.max_abs(),
        osc_phi=oscillation(state.phi),
        min_tr_omega_chiphi=float(tr_omega_chi.min()),
        max_tr_omega_chiphi=float(tr_omega_chi.max()),
        min_tr_chiphi_omega=float(tr.min()),
        max_tr_chiphi_omega=float(tr.max()),
        min_eig=float(state.min_eig),
        residual_sup=float(np.max(np.abs(residual))),
        b_current=b,
        spectral_tail=spectral_tail_energy(state.phi_dot),
        dt_used=float(state.dt_used),
    )


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def write_diagnostics_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DIAG_COLUMNS)
        for row in rows:
            writer.writerow([format_float(getattr(row, c)) for c in DIAG_COLUMNS])


def read_diagnostics_csv(path) -> dict:
    """Columns as float arrays, keyed by the exact header names."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = {name: [] for name in header}
        for line in reader:
            for name, value in zip(header, line):
                data[name].append(float(value))
    return {name: np.asarray(vals) for name, vals in data.items()}
