"""Pointwise complex-Hermitian linear algebra.

Everything here follows a single index convention, fixed once and tested
against explicit index-sum oracles:

* a Hermitian form is stored as the matrix ``M`` with ``M[i, j]`` holding the
  component with indices ``(i, j-bar)``;
* the raised components ``chi^{i jbar}`` are the entries of the *conjugate*
  of the matrix inverse, so that ``chi^{i jbar} chi_{k jbar} = delta_{ik}``.

With that convention the trace pairing ``tr_chi g = chi^{i jbar} g_{i jbar}``
reduces to ``trace(chi^{-1} g)`` and the inverse components of the metric
``h`` (``h^{i jbar} = chi^{i lbar} chi^{k jbar} g_{k lbar}``) reduce to the
conjugate of ``chi^{-1} g chi^{-1}``.

Matrix-valued helpers come in two flavours: single-matrix operations on
:class:`HermitianMatrix`, and batched kernels on stacks of shape ``(P, n, n)``
used by the grid modules.  Stacked 1x1 and 2x2 eigenvalue/inverse kernels are
closed-form; larger sizes go through numpy's batched routines.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "HermitianMatrix",
    "EigenSpectrum",
    "ConeReport",
    "InvalidInputError",
    "NotPositiveDefiniteError",
    "UnsupportedDimensionError",
    "BoundHypothesisError",
    "eigenvalues_hermitian",
    "is_positive_definite",
    "inverse_hermitian",
    "trace_pair",
    "h_inverse_metric",
    "wedge_trace_ratio_oracle",
    "li_eigenvalue_bound",
    "cone_margin",
    "symmetrize_stack",
    "stack_eigvalsh",
    "stack_inverse_hermitian",
    "stack_trace_pair",
    "stack_h_conjugate",
    "whitener",
    "stack_generalized_eigvalsh",
]

# Inputs must be Hermitian up to this drift before symmetrization is applied;
# spectral differentiation of real fields drifts at the 1e-15 level.
HERMITIAN_DRIFT_TOL = 1e-12


class InvalidInputError(ValueError):
    """Non-finite or structurally invalid input."""


class NotPositiveDefiniteError(ValueError):
    """An operation required a positive definite matrix and did not get one."""


class UnsupportedDimensionError(ValueError):
    """Raised by the factorial-cost wedge oracle for n > 4."""


class BoundHypothesisError(ValueError):
    """The eigenvalue-bound hypothesis 4/n <= alpha^2/beta < 4/(n-1) failed."""


@dataclass(frozen=True)
class HermitianMatrix:
    """An n x n complex Hermitian matrix, symmetrized on construction."""

    entries: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise InvalidInputError(f"expected a square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m.view(float))):
            raise InvalidInputError("matrix has non-finite entries")
        drift = np.max(np.abs(m - m.conj().T))
        if drift > HERMITIAN_DRIFT_TOL * max(1.0, np.max(np.abs(m))):
            raise InvalidInputError(f"matrix is not Hermitian (drift {drift:.3e})")
        m = 0.5 * (m + m.conj().T)
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @staticmethod
    def identity(n: int) -> "HermitianMatrix":
        return HermitianMatrix(np.eye(n))

    @staticmethod
    def diagonal(values) -> "HermitianMatrix":
        return HermitianMatrix(np.diag(np.asarray(values, dtype=complex)))


@dataclass(frozen=True)
class EigenSpectrum:
    """Real eigenvalues in ascending order."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(np.diff(v) < 0):
            raise InvalidInputError("spectrum must be ascending")
        object.__setattr__(self, "values", v)

    @property
    def min(self) -> float:
        return float(self.values[0])

    @property
    def max(self) -> float:
        return float(self.values[-1])


@dataclass(frozen=True)
class ConeReport:
    """Pointwise-worst margin of the cone condition chi >= ((n-1)(1+eps)/(n e^F)) omega.

    ``margin`` is the raw supremal eps (may exceed 1/(n-1); -inf if the
    condition fails outright), ``worst_point`` the flat grid index attaining
    it.  For n = 1 the condition is vacuous: margin = +inf, ``vacuous`` set.
    """

    margin: float
    worst_point: int
    vacuous: bool = field(default=False)

    @property
    def satisfied(self) -> bool:
        return self.margin > 0.0


# ---------------------------------------------------------------------------
# single-matrix operations


def eigenvalues_hermitian(h: HermitianMatrix) -> EigenSpectrum:
    """All real eigenvalues of a Hermitian matrix, ascending."""
    return EigenSpectrum(np.linalg.eigvalsh(h.entries))


def is_positive_definite(h: HermitianMatrix, tol: float = 0.0) -> bool:
    """True iff the smallest eigenvalue exceeds ``tol`` (tol >= 0)."""
    if tol < 0:
        raise InvalidInputError("tol must be >= 0")
    return eigenvalues_hermitian(h).min > tol


def inverse_hermitian(h: HermitianMatrix) -> HermitianMatrix:
    """Inverse of a positive definite Hermitian matrix (Hermitian again)."""
    if not is_positive_definite(h):
        raise NotPositiveDefiniteError("matrix is not positive definite")
    return HermitianMatrix(np.linalg.inv(h.entries))


def trace_pair(chi: HermitianMatrix, g: HermitianMatrix) -> float:
    """The trace pairing tr_chi g = chi^{i jbar} g_{i jbar} = trace(chi^{-1} g)."""
    if chi.dim != g.dim:
        raise InvalidInputError(f"dimension mismatch: {chi.dim} vs {g.dim}")
    inv = inverse_hermitian(chi)
    return float(np.trace(inv.entries @ g.entries).real)


def h_inverse_metric(chi_phi: HermitianMatrix, g: HermitianMatrix) -> HermitianMatrix:
    """Raised components h^{i jbar} = chi^{i lbar} chi^{k jbar} g_{k lbar}.

    Under the storage convention this is the conjugate of
    ``chi_phi^{-1} g chi_phi^{-1}``; for chi_phi = diag(lambda) and g = I it
    is diag(1/lambda^2).
    """
    if chi_phi.dim != g.dim:
        raise InvalidInputError(f"dimension mismatch: {chi_phi.dim} vs {g.dim}")
    if not is_positive_definite(g):
        raise NotPositiveDefiniteError("g is not positive definite")
    inv = inverse_hermitian(chi_phi).entries
    return HermitianMatrix((inv @ g.entries @ inv).conj())


def _leibniz_det(m: np.ndarray) -> complex:
    """Determinant by the permutation-sum formula (independent of numpy.linalg)."""
    n = m.shape[0]
    total = 0.0 + 0.0j
    for perm in itertools.permutations(range(n)):
        sign = 1
        # parity by counting inversions
        for a in range(n):
            for b in range(a + 1, n):
                if perm[a] > perm[b]:
                    sign = -sign
        term = sign + 0j
        for row, col in enumerate(perm):
            term *= m[row, col]
        total += term
    return total


def wedge_trace_ratio_oracle(g: HermitianMatrix, chi: HermitianMatrix) -> float:
    """n * (omega wedge chi^{n-1}) / chi^n via the mixed determinant.

    Expands D(g, chi, ..., chi)/det(chi) by permutation sums (column
    replacement), entirely avoiding matrix inversion; agrees with
    ``trace_pair(chi, g)`` as an algebraic identity.  Factorial cost, so
    capped at n <= 4.
    """
    n = chi.dim
    if n != g.dim:
        raise InvalidInputError(f"dimension mismatch: {chi.dim} vs {g.dim}")
    if n > 4:
        raise UnsupportedDimensionError("wedge oracle is restricted to n <= 4")
    if not is_positive_definite(chi):
        raise NotPositiveDefiniteError("chi is not positive definite")
    det_chi = _leibniz_det(chi.entries)
    acc = 0.0 + 0.0j
    for j in range(n):
        replaced = chi.entries.copy()
        replaced[:, j] = g.entries[:, j]
        acc += _leibniz_det(replaced)
    return float((acc / det_chi).real)


def li_eigenvalue_bound(alpha: float, beta: float, n: int) -> float:
    """Upper bound 2*beta/(alpha - sqrt(n*alpha^2 - 4*beta)) for positive
    lambda_1..lambda_n satisfying 0 >= 1 - alpha*sum(1/lambda_i) + beta*sum(1/lambda_i^2).

    Requires alpha, beta > 0, n >= 2 and 4/n <= alpha^2/beta < 4/(n-1); the
    hypothesis guarantees 0 <= n*alpha^2 - 4*beta < alpha^2, hence a finite
    positive value.
    """
    if n < 2:
        raise BoundHypothesisError(f"n must be >= 2, got {n}")
    if alpha <= 0:
        raise BoundHypothesisError(f"alpha must be positive, got {alpha}")
    if beta <= 0:
        raise BoundHypothesisError(f"beta must be positive, got {beta}")
    ratio = alpha * alpha / beta
    if ratio < 4.0 / n:
        raise BoundHypothesisError(
            f"hypothesis alpha^2/beta >= 4/n failed: {ratio:.6g} < {4.0 / n:.6g}"
        )
    if ratio >= 4.0 / (n - 1):
        raise BoundHypothesisError(
            f"hypothesis alpha^2/beta < 4/(n-1) failed: {ratio:.6g} >= {4.0 / (n - 1):.6g}"
        )
    disc = n * alpha * alpha - 4.0 * beta
    return 2.0 * beta / (alpha - math.sqrt(disc))


# ---------------------------------------------------------------------------
# stacked kernels (shape (P, n, n)) shared by the field modules


def symmetrize_stack(values: np.ndarray, guard: bool = True) -> np.ndarray:
    """Hermitian-symmetrize a (P, n, n) stack, guarding against real drift."""
    adj = np.conj(np.swapaxes(values, -1, -2))
    if guard:
        drift = np.max(np.abs(values - adj))
        scale = max(1.0, float(np.max(np.abs(values))))
        if drift > HERMITIAN_DRIFT_TOL * scale:
            raise InvalidInputError(f"field is not Hermitian (drift {drift:.3e})")
    return 0.5 * (values + adj)


def stack_eigvalsh(values: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of a Hermitian stack; closed form for n <= 2."""
    n = values.shape[-1]
    if n == 1:
        return values[..., 0, 0].real[..., None].copy()
    if n == 2:
        a = values[..., 0, 0].real
        d = values[..., 1, 1].real
        b = values[..., 0, 1]
        mid = 0.5 * (a + d)
        rad = np.sqrt(np.square(0.5 * (a - d)) + np.square(np.abs(b)))
        return np.stack([mid - rad, mid + rad], axis=-1)
    return np.linalg.eigvalsh(values)


def stack_inverse_hermitian(values: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Inverse of a positive definite Hermitian stack.

    ``floor`` is an eigenvalue floor below which the stack is rejected; the
    caller is expected to have guarded positivity already, this is a safety
    net for the closed-form 2x2 branch.
    """
    n = values.shape[-1]
    if n == 1:
        diag = values[..., 0, 0].real
        if np.any(diag <= floor):
            raise NotPositiveDefiniteError("1x1 field is not positive definite")
        return (1.0 / diag)[..., None, None].astype(complex)
    if n == 2:
        a = values[..., 0, 0].real
        d = values[..., 1, 1].real
        b = values[..., 0, 1]
        det = a * d - np.square(np.abs(b))
        if np.any(det <= 0.0) or np.any(a <= floor):
            raise NotPositiveDefiniteError("2x2 field is not positive definite")
        out = np.empty_like(values)
        out[..., 0, 0] = d / det
        out[..., 1, 1] = a / det
        out[..., 0, 1] = -b / det
        out[..., 1, 0] = np.conj(-b) / det
        return out
    eigs = np.linalg.eigvalsh(values)
    if np.any(eigs[..., 0] <= floor):
        raise NotPositiveDefiniteError("field is not positive definite")
    return symmetrize_stack(np.linalg.inv(values), guard=False)


def stack_trace_pair(inv_chi: np.ndarray, g: np.ndarray) -> np.ndarray:
    """trace(chi^{-1} g) per point, for a stacked inverse and one constant g."""
    return np.einsum("pij,ji->p", inv_chi, g).real


def stack_h_conjugate(inv_chi: np.ndarray, g: np.ndarray) -> np.ndarray:
    """The matrix chi^{-1} g chi^{-1} per point (conjugate of the raised h).

    Contractions against Hessian stacks use this directly:
    ``Delta_h u = trace((chi^{-1} g chi^{-1}) . hess(u))``.
    """
    return np.einsum("pij,jk,pkl->pil", inv_chi, g, inv_chi)


def whitener(omega: HermitianMatrix) -> np.ndarray:
    """omega^{-1/2}, turning generalized eigenproblems (A, omega) into plain ones."""
    eigs, vecs = np.linalg.eigh(omega.entries)
    if eigs[0] <= 0:
        raise NotPositiveDefiniteError("omega is not positive definite")
    return (vecs * (1.0 / np.sqrt(eigs))) @ vecs.conj().T


def stack_generalized_eigvalsh(values: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Generalized eigenvalues of (A, omega) per point, given w = omega^{-1/2}."""
    return stack_eigvalsh(np.einsum("ij,pjk,kl->pil", w, values, w))


def cone_margin(chi_values: np.ndarray, omega: HermitianMatrix, f_values: np.ndarray) -> ConeReport:
    """Largest eps with chi >= ((n-1)(1+eps)/(n e^F)) omega at every point.

    ``chi_values`` is a (P, n, n) Hermitian stack and ``f_values`` the flat F
    samples.  The per-point supremal eps is
    lambda_min(chi, omega) * n e^F / (n-1) - 1; the report carries the grid
    minimum, unclamped.
    """
    n = omega.dim
    p = chi_values.shape[0]
    if f_values.shape != (p,):
        raise InvalidInputError("chi field and F field live on different grids")
    if n == 1:
        return ConeReport(margin=math.inf, worst_point=0, vacuous=True)
    w = whitener(omega)
    lam_min = stack_generalized_eigvalsh(chi_values, w)[:, 0]
    eps = lam_min * (n / (n - 1)) * np.exp(f_values) - 1.0
    worst = int(np.argmin(eps))
    return ConeReport(margin=float(eps[worst]), worst_point=worst)
