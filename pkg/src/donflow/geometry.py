"""Background geometry on the torus: the fixed pair (omega, chi) and F.

Seeded generation draws band-limited mode coefficients in a fixed order
independent of the grid resolution, and takes every amplitude decision
(field rescaling, the cone-margin shrink loop) on a fixed reference
resolution.  A seed therefore defines a single continuum geometry that is
sampled exactly on every admissible grid — refinement studies compare like
with like.

The construction contract: chi = c0*I plus a band-limited Hermitian
perturbation whose amplitude is halved until the cone condition
chi >= ((n-1)(1+eps)/(n e^F)) omega holds with margin eps >= 0.1; F is a
band-limited real field rescaled to a requested max amplitude (or
manufactured as log(tr_chi omega / n), which makes zero initial data
stationary for the flow).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, HermitianField, ScalarField, TorusGrid, make_grid
from .hermitian import (
    ConeReport,
    HermitianMatrix,
    InvalidInputError,
    cone_margin,
    stack_eigvalsh,
    stack_inverse_hermitian,
    stack_trace_pair,
    whitener,
)

__all__ = [
    "BackgroundGeometry",
    "ConeError",
    "generate_geometry",
    "identity_geometry",
    "band_limited_real_field",
    "band_limited_complex_field",
    "save_geometry",
    "load_geometry",
]

CONE_TARGET = 0.1


class ConeError(ValueError):
    """The cone condition failed; carries the offending report."""

    def __init__(self, report: ConeReport, grid: TorusGrid):
        self.report = report
        idx = np.unravel_index(report.worst_point, grid.shape)
        super().__init__(
            f"cone condition violated: margin {report.margin:.6g} at grid point "
            f"{report.worst_point} (multi-index {tuple(int(i) for i in idx)})"
        )


def _positive_half_modes(n_complex: int, kmax: int):
    """Frequency vectors k in Z^{2n}, 0 < |k|_inf <= kmax, first nonzero > 0."""
    axes = 2 * n_complex
    out = []
    for k in itertools.product(range(-kmax, kmax + 1), repeat=axes):
        if all(c == 0 for c in k):
            continue
        first = next(c for c in k if c != 0)
        if first > 0:
            out.append(k)
    return out


def _all_modes(n_complex: int, kmax: int):
    axes = 2 * n_complex
    return [
        k
        for k in itertools.product(range(-kmax, kmax + 1), repeat=axes)
        if any(c != 0 for c in k)
    ]


def _draw(rng, count):
    return (rng.standard_normal(count) + 1j * rng.standard_normal(count)) / 2.0


def _spectral_fill(grid: TorusGrid, modes, coeffs) -> np.ndarray:
    """Inverse transform of {mode k: coefficient c_k}; field = sum c_k e^{2 pi i k.x}."""
    spec = np.zeros(grid.shape, dtype=complex)
    for k, c in zip(modes, coeffs):
        spec[tuple(kk % grid.N for kk in k)] += c
    return np.fft.ifftn(spec) * grid.npoints


def _synth_real(grid: TorusGrid, coeffs, kmax) -> np.ndarray:
    modes = _positive_half_modes(grid.n, kmax)
    neg = [tuple(-kk for kk in k) for k in modes]
    return _spectral_fill(grid, modes + neg, np.concatenate([coeffs, coeffs.conj()])).real


def band_limited_real_field(grid: TorusGrid, rng, kmax: int = 2) -> ScalarField:
    """Random real field supported on modes |k|_inf <= kmax (zero mean)."""
    coeffs = _draw(rng, len(_positive_half_modes(grid.n, kmax)))
    return ScalarField(grid, _synth_real(grid, coeffs, kmax))


def band_limited_complex_field(grid: TorusGrid, rng, kmax: int = 2) -> np.ndarray:
    """Random complex field (flat, length P) supported on modes |k|_inf <= kmax."""
    modes = _all_modes(grid.n, kmax)
    return _spectral_fill(grid, modes, _draw(rng, len(modes))).reshape(-1)


@dataclass(frozen=True)
class _GeometryDraw:
    """Seeded mode coefficients, independent of any grid."""

    n: int
    kmax: int
    diag: list  # n real-field coefficient arrays (positive-half modes)
    upper: dict  # (i, j) -> complex-field coefficient array (all modes)
    f: np.ndarray


def _draw_geometry(seed: int, n: int, kmax: int) -> _GeometryDraw:
    rng = np.random.default_rng(seed)
    n_half = len(_positive_half_modes(n, kmax))
    n_full = len(_all_modes(n, kmax))
    diag = [_draw(rng, n_half) for _ in range(n)]
    upper = {}
    for i in range(n):
        for j in range(i + 1, n):
            upper[(i, j)] = _draw(rng, n_full)
    f = _draw(rng, n_half)
    return _GeometryDraw(n=n, kmax=kmax, diag=diag, upper=upper, f=f)


def _synth_perturbation(grid: TorusGrid, drawn: _GeometryDraw) -> np.ndarray:
    n, p = grid.n, grid.npoints
    pert = np.zeros((p, n, n), dtype=complex)
    modes = _all_modes(n, drawn.kmax)
    for i in range(n):
        pert[:, i, i] = _synth_real(grid, drawn.diag[i], drawn.kmax).reshape(-1)
    for (i, j), coeffs in drawn.upper.items():
        v = _spectral_fill(grid, modes, coeffs).reshape(-1)
        pert[:, i, j] = v
        pert[:, j, i] = np.conj(v)
    return pert


@dataclass(frozen=True)
class BackgroundGeometry:
    """Fixed data (omega, chi, F) with validated positivity and cone margin."""

    grid: TorusGrid
    omega: HermitianMatrix
    chi: HermitianField
    F: ScalarField
    cone: ConeReport

    def __post_init__(self):
        if self.omega.dim != self.grid.n:
            raise InvalidInputError("omega dimension does not match the grid")
        min_eig = float(stack_eigvalsh(self.chi.values)[:, 0].min())
        if min_eig <= 0:
            raise InvalidInputError(
                f"chi is not positive definite (min eigenvalue {min_eig:.3e})"
            )
        if not self.cone.satisfied:
            raise ConeError(self.cone, self.grid)
        object.__setattr__(self, "_whitener", whitener(self.omega))
        object.__setattr__(self, "_omega_inv", np.linalg.inv(self.omega.entries))
        object.__setattr__(
            self,
            "_omega_is_identity",
            bool(
                np.array_equal(
                    self.omega.entries, np.eye(self.omega.dim, dtype=complex)
                )
            ),
        )

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def omega_whitener(self) -> np.ndarray:
        return self._whitener

    @property
    def omega_inverse(self) -> np.ndarray:
        return self._omega_inv

    @property
    def omega_is_identity(self) -> bool:
        return self._omega_is_identity


def _chi_trace_field(chi_values: np.ndarray, omega: HermitianMatrix) -> np.ndarray:
    inv = stack_inverse_hermitian(chi_values)
    return stack_trace_pair(inv, omega.entries)


def _reference_grid(grid: TorusGrid) -> TorusGrid:
    ref_n = 16 if grid.n <= 2 else 8
    if grid.N == ref_n:
        return grid
    return make_grid(GridSpec(grid.n, ref_n, max_points=grid.spec.max_points))


def _assemble(chi_values, f_scaled, stationary, omega, n):
    if stationary:
        return np.log(_chi_trace_field(chi_values, omega) / n)
    return f_scaled


def generate_geometry(
    grid: TorusGrid,
    seed: int,
    c0: float = 1.0,
    chi_amplitude: float = 0.25,
    F_amplitude: float = 0.4,
    stationary: bool = False,
    cone_target: float = CONE_TARGET,
) -> BackgroundGeometry:
    """Seeded background with omega = I and the shrink-to-margin contract.

    ``stationary`` manufactures F = log(tr_chi omega / n), the datum for which
    phi = 0 already solves the stationary equation.
    """
    n = grid.n
    omega = HermitianMatrix.identity(n)
    drawn = _draw_geometry(seed, n, kmax=2)

    ref = _reference_grid(grid)
    pert_ref = _synth_perturbation(ref, drawn)
    pert_scale = float(np.max(np.abs(stack_eigvalsh(pert_ref))))
    f_ref_raw = _synth_real(ref, drawn.f, drawn.kmax)
    f_peak = float(np.max(np.abs(f_ref_raw)))
    f_factor = (
        F_amplitude / f_peak if (F_amplitude > 0.0 and f_peak > 0.0) else 0.0
    )

    eye_ref = np.broadcast_to(np.eye(n, dtype=complex), pert_ref.shape)
    amp = chi_amplitude if pert_scale > 0 else 0.0
    accepted = None
    for _ in range(60):
        chi_ref = c0 * eye_ref + (amp / pert_scale if amp else 0.0) * pert_ref
        if float(stack_eigvalsh(chi_ref)[:, 0].min()) > 0:
            f_ref = _assemble(
                chi_ref, (f_factor * f_ref_raw).reshape(-1), stationary, omega, n
            )
            report = cone_margin(chi_ref, omega, f_ref)
            if report.vacuous or report.margin >= cone_target:
                accepted = amp
                break
        if amp == 0.0:
            break
        amp *= 0.5
        if amp < 1e-12:
            amp = 0.0
    if accepted is None:
        chi_ref = c0 * eye_ref
        f_ref = _assemble(
            chi_ref, (f_factor * f_ref_raw).reshape(-1), stationary, omega, n
        )
        raise ConeError(cone_margin(chi_ref, omega, f_ref), ref)

    if ref is grid:
        pert, f_raw = pert_ref, f_ref_raw
    else:
        pert = _synth_perturbation(grid, drawn)
        f_raw = _synth_real(grid, drawn.f, drawn.kmax)
    eye = np.broadcast_to(np.eye(n, dtype=complex), pert.shape)
    chi_values = c0 * eye + (accepted / pert_scale if accepted else 0.0) * pert
    f_values = _assemble(
        chi_values, (f_factor * f_raw).reshape(-1), stationary, omega, n
    )
    report = cone_margin(chi_values, omega, f_values)
    chi = HermitianField(grid, chi_values)
    f_field = ScalarField(grid, f_values.reshape(grid.shape))
    return BackgroundGeometry(grid, omega, chi, f_field, report)


def identity_geometry(grid: TorusGrid) -> BackgroundGeometry:
    """chi = omega = I, F = 0; the flat reference background."""
    omega = HermitianMatrix.identity(grid.n)
    chi_values = np.broadcast_to(
        np.eye(grid.n, dtype=complex), (grid.npoints, grid.n, grid.n)
    ).copy()
    f = grid.constant(0.0)
    report = cone_margin(chi_values, omega, f.flat)
    return BackgroundGeometry(grid, omega, HermitianField(grid, chi_values), f, report)


def save_geometry(path, geom: BackgroundGeometry) -> None:
    np.savez(
        path,
        n=geom.grid.n,
        N=geom.grid.N,
        omega=geom.omega.entries,
        chi=geom.chi.values,
        F=geom.F.flat,
    )


def load_geometry(path) -> BackgroundGeometry:
    with np.load(path) as data:
        grid = make_grid(GridSpec(int(data["n"]), int(data["N"])))
        omega = HermitianMatrix(data["omega"])
        chi_values = np.asarray(data["chi"], dtype=complex)
        f = ScalarField(grid, np.asarray(data["F"], dtype=float).reshape(grid.shape))
    report = cone_margin(chi_values, omega, f.flat)
    return BackgroundGeometry(grid, omega, HermitianField(grid, chi_values), f, report)
