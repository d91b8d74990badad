import numpy as np
import pytest

from donflow.oracles import (
    fd_dbar_hessian,
    hessian_convergence_study,
    li_bound_search,
    li_bound_study,
    wedge_identity_sweep,
)
from donflow.grid import GridSpec, make_grid


def test_fd_oracle_rejects_unknown_order():
    g = make_grid(GridSpec(1, 8))
    with pytest.raises(ValueError):
        fd_dbar_hessian(g.constant(0.0), order=3)


def test_fd_oracle_hermitian_output():
    g = make_grid(GridSpec(2, 8))
    f = g.scalar(np.sin(2 * np.pi * g.coordinate(0)) * np.cos(2 * np.pi * g.coordinate(3)))
    h = fd_dbar_hessian(f).values
    np.testing.assert_allclose(h, np.conj(np.swapaxes(h, -1, -2)), atol=1e-12)


def test_hessian_convergence_study_order():
    report = hessian_convergence_study(seed=5, sizes=(8, 16))
    assert report["observed_orders"][0] >= 2.0
    assert report["max_norm_errors"][1] < report["max_norm_errors"][0]


def test_li_bound_search_tight_case():
    violations, count, top = li_bound_search(2.0, 2.0, 2)
    assert violations == 0
    assert count == 1
    assert top == pytest.approx(2.0, abs=1e-3)


def test_li_bound_study_small_sweep():
    report = li_bound_study(seed=42, cases=40)
    assert report["violations"] == 0
    assert report["tight_case"]["admissible_count"] == 1


def test_wedge_identity_sweep_small():
    report = wedge_identity_sweep(seed=42, cases=60)
    assert report["worst_relative_error"] <= 1e-12
