import math

import numpy as np
import pytest

from donflow.diagnostics import (
    DecayFit,
    DiagnosticsRow,
    DIAG_COLUMNS,
    assemble_row,
    decay_fit,
    donaldson_residual,
    oscillation,
    read_diagnostics_csv,
    unit_time_ratios,
    write_diagnostics_csv,
)
from donflow.flow import FlowConfig, initial_state, normalize, run_flow
from donflow.geometry import generate_geometry
from donflow.grid import GridSpec, make_grid

from conftest import constant_geometry


def test_oscillation_constant_is_zero():
    g = make_grid(GridSpec(2, 8))
    assert oscillation(g.constant(7.0)) == 0.0


def test_oscillation_cosine_is_two():
    g = make_grid(GridSpec(2, 8))
    f = g.scalar(np.cos(2 * np.pi * g.coordinate(0)))
    assert oscillation(f) == pytest.approx(2.0, abs=1e-14)


def test_oscillation_matches_scan_oracle():
    g = make_grid(GridSpec(2, 8))
    rng = np.random.default_rng(3)
    f = g.scalar(rng.normal(size=g.shape))
    hi = -math.inf
    lo = math.inf
    for v in f.flat:
        hi = max(hi, v)
        lo = min(lo, v)
    assert oscillation(f) == hi - lo


# ---------------------------------------------------------------------------
# decay fitting


def test_decay_fit_exact_exponential():
    t = np.arange(1.0, 11.0)
    theta = 3.0 * np.exp(-0.5 * t)
    fit = decay_fit(t, theta)
    assert fit.c1_hat == pytest.approx(3.0, rel=1e-9)
    assert fit.c2_hat == pytest.approx(0.5, rel=1e-9)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.is_decaying
    assert fit.worst_unit_ratio == pytest.approx(math.exp(-0.5), rel=1e-9)


def test_decay_fit_with_multiplicative_noise():
    rng = np.random.default_rng(12)
    t = np.linspace(0.5, 20.0, 120)
    theta = 3.0 * np.exp(-0.5 * t) * (1.0 + 0.01 * rng.standard_normal(t.size))
    fit = decay_fit(t, theta)
    assert fit.c2_hat == pytest.approx(0.5, rel=0.05)


def test_decay_fit_constant_flags_non_decaying():
    t = np.arange(0.0, 10.0)
    fit = decay_fit(t, np.full(10, 0.2))
    assert abs(fit.c2_hat) <= 1e-12
    assert not fit.is_decaying
    assert 0.0 <= fit.r_squared <= 1.0


def test_decay_fit_converged_returns_none():
    t = np.arange(0.0, 10.0)
    assert decay_fit(t, np.zeros(10)) is None
    assert decay_fit(t, np.full(10, 1e-18)) is None


def test_decay_fit_explicit_window():
    t = np.linspace(0.0, 10.0, 101)
    theta = np.exp(-t) + 5e-3  # early transient toward a plateau
    fit = decay_fit(t, theta, window=(0.0, 2.0))
    assert fit.window == (0.0, 2.0)
    assert fit.n_samples == 21


def test_unit_time_ratios_exponential():
    t = np.linspace(0.0, 6.0, 61)
    theta = np.exp(-1.3 * t)
    ratios = unit_time_ratios(t, theta, start=1.0)
    assert len(ratios) == 5
    for r in ratios:
        assert r == pytest.approx(math.exp(-1.3), rel=1e-6)


# ---------------------------------------------------------------------------
# stationary-equation residual


def test_residual_constant_datum(const_geom):
    phi_tilde = const_geom.grid.constant(0.0)
    b, field, sup = donaldson_residual(phi_tilde, const_geom)
    assert b == pytest.approx(-math.log(1.3) - 0.2, rel=1e-12)
    assert sup <= 1e-13
    assert field.max_abs() <= 1e-13


def test_residual_stationary_datum():
    geom = generate_geometry(make_grid(GridSpec(2, 8)), seed=3, stationary=True)
    b, field, sup = donaldson_residual(geom.grid.constant(0.0), geom)
    assert abs(b) <= 1e-13
    assert sup <= 1e-12


def test_residual_zero_mean():
    geom = generate_geometry(make_grid(GridSpec(2, 8)), seed=9)
    result = run_flow(geom, FlowConfig(t_max=0.2, theta_stop=0.0))
    phi_tilde = normalize(result.final.phi, geom)
    _, field, _ = donaldson_residual(phi_tilde, geom)
    assert abs(field.values.mean()) <= 1e-12


def test_residual_bounded_by_theta():
    # r = -(phi_dot - mean(phi_dot)) pointwise, so sup|r| <= osc(phi_dot)
    geom = generate_geometry(make_grid(GridSpec(2, 8)), seed=9)
    result = run_flow(geom, FlowConfig(t_max=0.5, theta_stop=0.0))
    for row in result.rows:
        assert row.residual_sup <= row.theta + 1e-12


# ---------------------------------------------------------------------------
# row assembly and CSV round trip


def test_assemble_row_stationary():
    geom = generate_geometry(make_grid(GridSpec(2, 8)), seed=3, stationary=True)
    row = assemble_row(initial_state(geom), geom)
    assert row.theta <= 1e-13
    assert row.residual_sup <= 1e-12
    assert row.t == 0.0


def test_assemble_row_constant_datum(const_geom):
    row = assemble_row(initial_state(const_geom), const_geom)
    assert row.theta == 0.0
    assert row.osc_phi == 0.0
    assert row.residual_sup <= 1e-13
    assert row.b_current == pytest.approx(-math.log(1.3) - 0.2, rel=1e-12)
    assert row.min_tr_omega_chiphi == pytest.approx(2 * 1.3, rel=1e-12)
    assert row.min_tr_chiphi_omega == pytest.approx(2 / 1.3, rel=1e-12)
    assert row.min_eig == pytest.approx(1.3, rel=1e-12)


def test_row_invariants_enforced():
    with pytest.raises(ValueError):
        DiagnosticsRow(
            t=0.0, theta=-1.0, sup_abs_phidot=0.0, osc_phi=0.0,
            min_tr_omega_chiphi=0.0, max_tr_omega_chiphi=0.0,
            min_tr_chiphi_omega=0.0, max_tr_chiphi_omega=0.0,
            min_eig=0.0, residual_sup=0.0, b_current=0.0,
            spectral_tail=0.0, dt_used=0.0,
        )
    with pytest.raises(ValueError):
        DiagnosticsRow(
            t=0.0, theta=0.0, sup_abs_phidot=0.0, osc_phi=0.0,
            min_tr_omega_chiphi=1.0, max_tr_omega_chiphi=0.5,
            min_tr_chiphi_omega=0.0, max_tr_chiphi_omega=0.0,
            min_eig=0.0, residual_sup=0.0, b_current=0.0,
            spectral_tail=0.0, dt_used=0.0,
        )


def test_csv_round_trip_and_determinism(tmp_path):
    geom = generate_geometry(make_grid(GridSpec(2, 8)), seed=9)
    result = run_flow(geom, FlowConfig(t_max=0.3, theta_stop=0.0))
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_diagnostics_csv(p1, result.rows)
    write_diagnostics_csv(p2, result.rows)
    assert p1.read_bytes() == p2.read_bytes()
    data = read_diagnostics_csv(p1)
    assert list(data.keys()) == DIAG_COLUMNS
    for k, row in enumerate(result.rows):
        for name in DIAG_COLUMNS:
            assert data[name][k] == getattr(row, name)


def test_csv_serializes_17_significant_digits(tmp_path):
    from donflow.diagnostics import format_float

    x = 1.0 / 3.0
    assert format_float(x) == format(x, ".17g")
    assert float(format_float(x)) == x
