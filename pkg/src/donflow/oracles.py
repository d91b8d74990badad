"""Independent verification routes for the core identities.

Everything here deliberately avoids the implementation path it checks:
finite-difference stencils instead of Fourier multipliers, permutation-sum
determinants instead of matrix inverses, exhaustive grid search instead of
the closed-form eigenvalue bound.
"""

from __future__ import annotations

import numpy as np

from .geometry import band_limited_real_field
from .grid import GridSpec, HermitianField, ScalarField, dbar_hessian, make_grid
from .hermitian import (
    HermitianMatrix,
    li_eigenvalue_bound,
    trace_pair,
    wedge_trace_ratio_oracle,
)

__all__ = [
    "fd_dbar_hessian",
    "hessian_convergence_study",
    "li_bound_search",
    "li_bound_study",
    "wedge_identity_sweep",
]

_STENCILS = {
    # antisymmetric central first-derivative weights: {offset: coefficient}/h
    4: ((1, 8.0 / 12.0), (2, -1.0 / 12.0)),
    8: ((1, 4.0 / 5.0), (2, -1.0 / 5.0), (3, 4.0 / 105.0), (4, -1.0 / 280.0)),
}


def _fd_derivative(values: np.ndarray, axis: int, h: float, order: int) -> np.ndarray:
    out = np.zeros_like(values)
    for offset, coeff in _STENCILS[order]:
        out += coeff * (np.roll(values, -offset, axis) - np.roll(values, offset, axis))
    return out / h


def fd_dbar_hessian(phi: ScalarField, order: int = 4) -> HermitianField:
    """Mixed complex Hessian by centered finite differences on the periodic grid.

    Composes central first-derivative stencils (order 4 or 8) along the real
    axes: entry (i, j) = (d_x^i - i d_y^i)(d_x^j + i d_y^j) phi / 4.
    """
    g = phi.grid
    if order not in _STENCILS:
        raise ValueError(f"unsupported stencil order {order}")
    h = 1.0 / g.N
    n = g.n
    out = np.empty((g.npoints, n, n), dtype=complex)
    for j in range(n):
        dbar_j = 0.5 * (
            _fd_derivative(phi.values, 2 * j, h, order)
            + 1j * _fd_derivative(phi.values, 2 * j + 1, h, order)
        )
        for i in range(n):
            entry = 0.5 * (
                _fd_derivative(dbar_j, 2 * i, h, order)
                - 1j * _fd_derivative(dbar_j, 2 * i + 1, h, order)
            )
            out[:, i, j] = entry.reshape(-1)
    return HermitianField(g, 0.5 * (out + np.conj(np.swapaxes(out, -1, -2))))


def hessian_convergence_study(seed: int, n: int = 2, sizes=(8, 16, 32), order: int = 4):
    """Max-norm gap between the spectral and finite-difference Hessians of a
    seeded band-limited field across grid sizes, with observed orders.

    The band-limited field is resolved exactly at every size, so the gap is
    the FD truncation error and should shrink at the stencil order.
    """
    errors = []
    for size in sizes:
        grid = make_grid(GridSpec(n, size))
        rng = np.random.default_rng(seed)
        phi = band_limited_real_field(grid, rng, kmax=2)
        spectral = dbar_hessian(phi).values
        fd = fd_dbar_hessian(phi, order=order).values
        errors.append(float(np.max(np.abs(spectral - fd))))
    orders = [
        float(np.log2(errors[k] / errors[k + 1])) for k in range(len(errors) - 1)
    ]
    return {
        "sizes": list(sizes),
        "max_norm_errors": errors,
        "observed_orders": orders,
        "stencil_order": order,
    }


def li_bound_search(alpha: float, beta: float, n: int, step: float = 1e-3, slack: float = 1e-9):
    """Exhaustive grid check of the eigenvalue bound on (0, 2*bound]^n.

    The admissibility constraint 1 + sum_i g(lambda_i) <= 0 with
    g(x) = -alpha/x + beta/x^2 decouples across coordinates, so a grid point
    with first component v extends to an admissible grid point iff
    1 + g(v) + (n-1) * min_grid(g) <= 0; scanning v over the same grid visits
    exactly the admissible set of the full n-dimensional scan.

    Returns (violations, admissible_count, top_admissible): the number of grid
    values v > bound + step that extend to an admissible point, how many grid
    values extend at all, and the largest such v (None if none).
    """
    bound = li_eigenvalue_bound(alpha, beta, n)
    grid = np.arange(step, 2.0 * bound + step / 2, step)
    g = -alpha / grid + beta / grid**2
    feasible = 1.0 + g + (n - 1) * g.min() <= slack
    admissible = grid[feasible]
    if admissible.size == 0:
        return 0, 0, None
    violations = int(np.count_nonzero(admissible > bound + step))
    return violations, int(admissible.size), float(admissible.max())


def li_bound_study(seed: int, cases: int = 1000, dims=(2, 3), step: float = 1e-3):
    """Seeded sweep of the bound against the grid search.

    Always includes the analytically tight case (n=2, alpha=beta=2) whose
    admissible set is the single point (2, 2).
    """
    rng = np.random.default_rng(seed)
    violations = 0
    empty = 0
    worst_excess = -np.inf
    for case in range(cases):
        n = int(dims[case % len(dims)])
        alpha = rng.uniform(0.5, 4.0)
        # cap the hypothesis ratio below 4/(n-1) so the bound stays desk-scale
        ratio = rng.uniform(4.0 / n, 4.0 / (n - 0.85))
        beta = alpha * alpha / ratio
        bound = li_eigenvalue_bound(alpha, beta, n)
        count = li_bound_search(alpha, beta, n, step=step)
        violations += count[0]
        if count[1] == 0:
            empty += 1
        elif count[2] is not None:
            worst_excess = max(worst_excess, count[2] - bound)
    tight = li_bound_search(2.0, 2.0, 2, step=step)
    return {
        "cases": cases,
        "violations": violations,
        "empty_admissible_sets": empty,
        "worst_excess_over_bound": None if worst_excess == -np.inf else worst_excess,
        "tight_case": {
            "bound": li_eigenvalue_bound(2.0, 2.0, 2),
            "violations": tight[0],
            "admissible_count": tight[1],
            "top_admissible": tight[2],
        },
    }


def _random_spd(rng, n, lo=0.5, hi=2.0) -> HermitianMatrix:
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    q, _ = np.linalg.qr(a)
    m = (q * rng.uniform(lo, hi, size=n)) @ q.conj().T
    return HermitianMatrix(0.5 * (m + m.conj().T))


def wedge_identity_sweep(seed: int, cases: int = 1000, dims=(2, 3, 4)):
    """Relative gap between trace_pair and the mixed-determinant route over
    seeded well-conditioned SPD pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for case in range(cases):
        n = int(dims[case % len(dims)])
        chi = _random_spd(rng, n)
        g = _random_spd(rng, n)
        a = trace_pair(chi, g)
        b = wedge_trace_ratio_oracle(g, chi)
        worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    return {"cases": cases, "dims": list(dims), "worst_relative_error": worst}
