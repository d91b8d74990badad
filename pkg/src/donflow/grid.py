"""Uniform periodic grids on the flat complex torus and spectral calculus.

The torus is C^n modulo the unit integer lattice in every real coordinate:
real coordinates (x^1, y^1, ..., x^n, y^n) with z^j = x^j + i y^j, each of
period 1, sampled at N points per axis.  Array axis 2j holds x^{j+1} and axis
2j+1 holds y^{j+1}; flattening is row-major in that order.

Derivatives are Fourier multipliers with d_j = (d/dx^j - i d/dy^j)/2 and
d_jbar its conjugate.  Nyquist modes are zeroed in every first-derivative
(odd) multiplier, standard for even N; pure second derivatives keep the
Nyquist mode with the true multiplier -4 pi^2 k^2, so the diagonal Hessian
entries damp Nyquist content and the discrete Hessian annihilates only
constants.  Off-diagonal (mixed-axis) entries are products of the
Nyquist-zeroed first-derivative multipliers.

Snapshot file format (``.field``): a single UTF-8 JSON header line
``{"format": "donflow-field", "version": 1, "n": ..., "N": ..., "field_name":
..., "time": ...}`` terminated by a newline, followed by the raw little-endian
float64 field values in row-major order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .hermitian import HermitianMatrix, InvalidInputError, symmetrize_stack

__all__ = [
    "GridSpec",
    "TorusGrid",
    "ScalarField",
    "HermitianField",
    "ComplexVectorField",
    "GridError",
    "make_grid",
    "dbar_hessian",
    "holomorphic_gradient",
    "flat_laplacian",
    "integrate_mu",
    "spectral_tail_energy",
    "write_field",
    "read_field",
]

DEFAULT_MAX_POINTS = 2**24

FIELD_FORMAT_NAME = "donflow-field"
FIELD_FORMAT_VERSION = 1


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """n complex dimensions, N (even, >= 8) points per real axis, period 1."""

    n_complex: int
    points_per_axis: int
    max_points: int = DEFAULT_MAX_POINTS

    def __post_init__(self):
        if self.n_complex < 1:
            raise GridError(f"n_complex must be >= 1, got {self.n_complex}")
        n_pts = self.points_per_axis
        if n_pts < 8 or n_pts % 2 != 0:
            raise GridError(f"points_per_axis must be an even integer >= 8, got {n_pts}")
        if self.npoints > self.max_points:
            raise GridError(
                f"grid of {self.npoints} points exceeds the memory cap {self.max_points}"
            )

    @property
    def shape(self) -> tuple:
        return (self.points_per_axis,) * (2 * self.n_complex)

    @property
    def npoints(self) -> int:
        return self.points_per_axis ** (2 * self.n_complex)


class TorusGrid:
    """Grid handle: coordinates, Fourier multipliers, and field constructors."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.n = spec.n_complex
        self.N = spec.points_per_axis

    @property
    def shape(self):
        return self.spec.shape

    @property
    def npoints(self):
        return self.spec.npoints

    @cached_property
    def axis_coords(self) -> np.ndarray:
        return np.arange(self.N) / self.N

    def coordinate(self, axis: int) -> np.ndarray:
        """Coordinate field along a real axis (0 -> x^1, 1 -> y^1, ...)."""
        shape = [1] * (2 * self.n)
        shape[axis] = self.N
        return np.broadcast_to(self.axis_coords.reshape(shape), self.shape).copy()

    @cached_property
    def _freqs(self) -> np.ndarray:
        return np.fft.fftfreq(self.N, d=1.0 / self.N)

    def _axis_multiplier(self, axis: int) -> np.ndarray:
        """First-derivative multiplier 2*pi*i*k along one real axis, Nyquist zeroed."""
        k = self._freqs.copy()
        k[self.N // 2] = 0.0
        shape = [1] * (2 * self.n)
        shape[axis] = self.N
        return (2j * np.pi * k).reshape(shape)

    def _axis_second_multiplier(self, axis: int) -> np.ndarray:
        """Second-derivative multiplier -4 pi^2 k^2, Nyquist retained (even)."""
        shape = [1] * (2 * self.n)
        shape[axis] = self.N
        return (-4.0 * np.pi**2 * self._freqs**2).reshape(shape)

    @cached_property
    def hessian_diag_multipliers(self) -> list:
        """Real multipliers of d_j d_jbar = (d_x^2 + d_y^2)/4 per complex axis."""
        return [
            0.25
            * (
                self._axis_second_multiplier(2 * j)
                + self._axis_second_multiplier(2 * j + 1)
            )
            for j in range(self.n)
        ]

    @cached_property
    def dz_multipliers(self) -> list:
        """Multipliers of d_j = (d_x - i d_y)/2 for each complex direction."""
        return [
            0.5 * (self._axis_multiplier(2 * j) - 1j * self._axis_multiplier(2 * j + 1))
            for j in range(self.n)
        ]

    @cached_property
    def dzbar_multipliers(self) -> list:
        return [
            0.5 * (self._axis_multiplier(2 * j) + 1j * self._axis_multiplier(2 * j + 1))
            for j in range(self.n)
        ]

    def scalar(self, values) -> "ScalarField":
        return ScalarField(self, np.asarray(values, dtype=float).reshape(self.shape))

    def constant(self, value: float) -> "ScalarField":
        return ScalarField(self, np.full(self.shape, float(value)))


def make_grid(spec: GridSpec) -> TorusGrid:
    return TorusGrid(spec)


@dataclass(frozen=True)
class ScalarField:
    """Real scalar samples over the grid, stored in grid shape."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            v = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("scalar field has non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def __add__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(self.grid, self.values + other.values)
        return ScalarField(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(self.grid, self.values - other.values)
        return ScalarField(self.grid, self.values - other)

    def __mul__(self, c):
        return ScalarField(self.grid, self.values * c)

    __rmul__ = __mul__

    def max(self) -> float:
        return float(self.values.max())

    def min(self) -> float:
        return float(self.values.min())

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class HermitianField:
    """One Hermitian n x n matrix per grid point, stored as a (P, n, n) stack."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        p, n = self.grid.npoints, self.grid.n
        if v.shape != (p, n, n):
            raise InvalidInputError(f"expected stack of shape {(p, n, n)}, got {v.shape}")
        object.__setattr__(self, "values", v)

    def __add__(self, other):
        return HermitianField(self.grid, self.values + other.values)


@dataclass(frozen=True)
class ComplexVectorField:
    """n complex components per grid point, components-first layout."""

    grid: TorusGrid
    values: np.ndarray  # shape (n,) + grid.shape

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (self.grid.n,) + self.grid.shape:
            raise InvalidInputError("vector field shape mismatch")
        if not np.all(np.isfinite(v.view(float))):
            raise InvalidInputError("vector field has non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def stack(self) -> np.ndarray:
        """Point-major view of shape (P, n)."""
        n = self.grid.n
        return self.values.reshape(n, -1).T


# ---------------------------------------------------------------------------
# spectral operators


def hessian_entries_n2(grid: TorusGrid, phi_hat: np.ndarray):
    """Fused n=2 Hessian kernel: (entry00, entry11, entry01) from the spectrum.

    The two diagonal multipliers are real, so one inverse transform of
    (m00 + i m11) * phi_hat carries both real diagonal entries exactly.
    """
    m00, m11 = grid.hessian_diag_multipliers
    diag = np.fft.ifftn((m00 + 1j * m11) * phi_hat)
    e01 = np.fft.ifftn(grid.dz_multipliers[0] * grid.dzbar_multipliers[1] * phi_hat)
    return diag.real, diag.imag, e01


def dbar_hessian(phi: ScalarField) -> HermitianField:
    """The mixed complex Hessian d_i d_jbar(phi) as a Hermitian field.

    Entry (i, j) is synthesized from the multiplier of d_i times that of
    d_jbar; for real phi the result is Hermitian in exact arithmetic and is
    symmetrized to remove floating-point drift.
    """
    g = phi.grid
    n = g.n
    phi_hat = np.fft.fftn(phi.values)
    out = np.empty((g.npoints, n, n), dtype=complex)
    if n == 2:
        e00, e11, e01 = hessian_entries_n2(g, phi_hat)
        out[:, 0, 0] = e00.reshape(-1)
        out[:, 1, 1] = e11.reshape(-1)
        out[:, 0, 1] = e01.reshape(-1)
        out[:, 1, 0] = np.conj(out[:, 0, 1])
        return HermitianField(g, out)
    for i in range(n):
        for j in range(i, n):
            if i == j:
                mult = g.hessian_diag_multipliers[i]
            else:
                mult = g.dz_multipliers[i] * g.dzbar_multipliers[j]
            entry = np.fft.ifftn(mult * phi_hat).reshape(-1)
            out[:, i, j] = entry
            if i != j:
                out[:, j, i] = np.conj(entry)
    return HermitianField(g, symmetrize_stack(out, guard=False))


def holomorphic_gradient(phi: ScalarField) -> ComplexVectorField:
    """Components d_j(phi) = (d_x phi - i d_y phi)/2 via Fourier multipliers."""
    g = phi.grid
    phi_hat = np.fft.fftn(phi.values)
    comps = np.stack(
        [np.fft.ifftn(g.dz_multipliers[j] * phi_hat) for j in range(g.n)]
    )
    return ComplexVectorField(g, comps)


def flat_laplacian(phi: ScalarField) -> ScalarField:
    """Sum of second derivatives over all 2n real axes (true -4 pi^2 k^2
    multipliers, Nyquist retained — the Hessian-diagonal convention)."""
    g = phi.grid
    phi_hat = np.fft.fftn(phi.values)
    total = np.zeros(g.shape, dtype=complex)
    for axis in range(2 * g.n):
        total += g._axis_second_multiplier(axis) * phi_hat
    return ScalarField(g, np.fft.ifftn(total).real)


def integrate_mu(f: ScalarField, omega: HermitianMatrix) -> float:
    """Integral of f against the normalized measure omega^n / int(omega^n).

    omega is constant, so its volume density cancels and the integral is the
    grid mean (trapezoidal rule on a periodic domain: spectrally accurate).
    """
    eigs = np.linalg.eigvalsh(omega.entries)
    if eigs[0] <= 0:
        raise InvalidInputError("omega must be positive definite")
    return float(np.mean(f.values))


def spectral_tail_energy(f: ScalarField) -> float:
    """Fraction of (non-mean) Fourier energy at frequencies in the top third
    of any axis; the resolution-adequacy monitor for the nonlinear flow."""
    g = f.grid
    f_hat = np.fft.fftn(f.values)
    power = np.abs(f_hat) ** 2
    power[(0,) * (2 * g.n)] = 0.0
    total = power.sum()
    if total == 0.0:
        return 0.0
    cut = g.N / 3.0
    tail_mask = np.zeros(g.shape, dtype=bool)
    for axis in range(2 * g.n):
        shape = [1] * (2 * g.n)
        shape[axis] = g.N
        tail_mask |= np.abs(g._freqs).reshape(shape) > cut
    return float(power[tail_mask].sum() / total)


# ---------------------------------------------------------------------------
# snapshot files


def write_field(path, f: ScalarField, field_name: str, time: float) -> None:
    header = {
        "format": FIELD_FORMAT_NAME,
        "version": FIELD_FORMAT_VERSION,
        "n": f.grid.n,
        "N": f.grid.N,
        "field_name": field_name,
        "time": float(time),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(f.flat.astype("<f8").tobytes())


def read_field(path, grid: TorusGrid | None = None):
    """Read a snapshot; returns (ScalarField, header dict)."""
    path = Path(path)
    with open(path, "rb") as fh:
        header_line = fh.readline()
        raw = fh.read()
    header = json.loads(header_line.decode("utf-8"))
    if header.get("format") != FIELD_FORMAT_NAME:
        raise GridError(f"{path} is not a {FIELD_FORMAT_NAME} file")
    if grid is None:
        grid = make_grid(GridSpec(header["n"], header["N"]))
    elif grid.n != header["n"] or grid.N != header["N"]:
        raise GridError(
            f"snapshot grid (n={header['n']}, N={header['N']}) does not match "
            f"target grid (n={grid.n}, N={grid.N})"
        )
    values = np.frombuffer(raw, dtype="<f8")
    if values.size != grid.npoints:
        raise GridError(f"{path}: expected {grid.npoints} values, found {values.size}")
    return ScalarField(grid, values.reshape(grid.shape).copy()), header
