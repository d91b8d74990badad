import math

import numpy as np
import pytest

from donflow.diagnostics import oscillation
from donflow.flow import (
    FlowConfig,
    PositivityError,
    StepFailureError,
    chi_phi,
    flow_rhs,
    flow_step,
    initial_dt,
    initial_state,
    normalize,
    run_flow,
)
from donflow.geometry import generate_geometry
from donflow.grid import GridSpec, ScalarField, make_grid
from donflow.hermitian import HermitianMatrix, wedge_trace_ratio_oracle

from conftest import constant_geometry


def seeded_geom(seed=101, N=8):
    return generate_geometry(make_grid(GridSpec(2, N)), seed=seed)


# ---------------------------------------------------------------------------
# chi_phi and the right side


def test_chi_phi_at_zero_is_chi(const_geom):
    field = chi_phi(const_geom.grid.constant(0.0), const_geom)
    np.testing.assert_array_equal(field.values, const_geom.chi.values)


def test_chi_phi_constant_shift_invariant(const_geom):
    field = chi_phi(const_geom.grid.constant(4.2), const_geom)
    np.testing.assert_allclose(field.values, const_geom.chi.values, atol=1e-12)


def test_chi_phi_cosine_perturbation():
    geom = constant_geometry(c=1.0, f0=0.0)
    g = geom.grid
    eps = 1e-3
    phi = g.scalar(eps * np.cos(2 * np.pi * g.coordinate(0)))
    field = chi_phi(phi, geom).values
    want_11 = 1.0 - eps * np.pi**2 * np.cos(2 * np.pi * g.coordinate(0)).reshape(-1)
    np.testing.assert_allclose(field[:, 0, 0].real, want_11, atol=1e-12)
    np.testing.assert_allclose(field[:, 1, 1].real, 1.0, atol=1e-12)
    assert np.max(np.abs(field[:, 0, 1])) <= 1e-12


def test_flow_rhs_constant_datum(const_geom):
    # tr_chi omega = n/c, so the right side is log c + F0 everywhere
    rhs = flow_rhs(const_geom.grid.constant(0.0), const_geom)
    want = math.log(1.3) + 0.2
    np.testing.assert_allclose(rhs.values, want, atol=1e-14)


def test_flow_rhs_stationary_datum_vanishes():
    geom = generate_geometry(make_grid(GridSpec(2, 8)), seed=3, stationary=True)
    rhs = flow_rhs(geom.grid.constant(0.0), geom)
    assert rhs.max_abs() <= 1e-13


def test_flow_rhs_matches_wedge_oracle():
    geom = seeded_geom(seed=21)
    rng = np.random.default_rng(0)
    phi = ScalarField(
        geom.grid, 0.01 * np.cos(2 * np.pi * geom.grid.coordinate(0))
    )
    rhs = flow_rhs(phi, geom).flat
    field = chi_phi(phi, geom).values
    # spot-check a handful of points against the permutation-sum route
    idx = rng.integers(0, geom.grid.npoints, size=12)
    for p in idx:
        ratio = wedge_trace_ratio_oracle(
            geom.omega, HermitianMatrix(field[p])
        )
        want = math.log(geom.n) - math.log(ratio) + geom.F.flat[p]
        assert rhs[p] == pytest.approx(want, abs=1e-11)


def test_flow_rhs_positivity_error_names_point():
    geom = constant_geometry(c=1.0, f0=0.0)
    g = geom.grid
    # curvature of 2*cos exceeds chi = I somewhere
    phi = g.scalar(2.0 * np.cos(2 * np.pi * g.coordinate(0)))
    with pytest.raises(PositivityError) as err:
        flow_rhs(phi, geom)
    assert err.value.min_eig <= 0
    assert 0 <= err.value.worst_point < g.npoints


# ---------------------------------------------------------------------------
# stepping


def test_flow_step_stationary_is_fixed_point():
    geom = generate_geometry(make_grid(GridSpec(2, 8)), seed=3, stationary=True)
    state = initial_state(geom)
    new = flow_step(state, 0.01, geom)
    assert new.phi.max_abs() <= 1e-14
    assert new.t == pytest.approx(0.01)


def test_flow_step_constant_datum_closed_form(const_geom):
    state = initial_state(const_geom)
    dt = 0.05
    slope = math.log(1.3) + 0.2
    for _ in range(3):
        state = flow_step(state, dt, const_geom)
    np.testing.assert_allclose(state.phi.values, 3 * dt * slope, atol=1e-14)
    assert oscillation(state.phi) <= 1e-14


def test_flow_step_halves_on_positivity_rejection():
    geom = seeded_geom(seed=9)
    state = initial_state(geom)
    # absurd dt: some stage loses positivity, halvings shrink it to acceptance
    new = flow_step(state, 64.0, geom, max_halvings=40)
    assert new.dt_used < 64.0
    assert new.min_eig > 0


def test_flow_step_exhausted_halvings_raises():
    geom = seeded_geom(seed=9)
    state = initial_state(geom)
    with pytest.raises(StepFailureError) as err:
        flow_step(state, 1e3, geom, max_halvings=0)
    assert err.value.state is state


def test_flow_step_trace_identity_exact():
    geom = seeded_geom(seed=31)
    state = initial_state(geom)
    dt = initial_dt(state, geom, 0.4)
    for _ in range(5):
        state = flow_step(state, dt, geom)
    rel = np.abs(
        state.tr_chiphi_omega
        * np.exp(state.phi_dot.flat - geom.F.flat)
        / geom.n
        - 1.0
    )
    assert rel.max() <= 1e-12


def test_flow_step_refinement_of_grid_means():
    # same continuum geometry and dt on two grids: the mean trajectories agree
    means = []
    for N in (8, 16):
        geom = seeded_geom(seed=11, N=N)
        state = initial_state(geom)
        for _ in range(4):
            state = flow_step(state, 2e-3, geom)
        means.append(float(np.mean(state.phi.values)))
    # O(dt^4) time error is ~1e-13 here; the remaining gap is spectral truncation
    assert means[0] == pytest.approx(means[1], abs=1e-7)


# ---------------------------------------------------------------------------
# normalization


def test_normalize_constant_is_zero(const_geom):
    out = normalize(const_geom.grid.constant(5.0), const_geom)
    assert out.max_abs() == 0.0


def test_normalize_idempotent_and_shift_invariant(const_geom):
    g = const_geom.grid
    rng = np.random.default_rng(2)
    phi = g.scalar(rng.normal(size=g.shape))
    once = normalize(phi, const_geom)
    twice = normalize(once, const_geom)
    np.testing.assert_allclose(once.values, twice.values, atol=1e-13)
    shifted = normalize(ScalarField(g, phi.values + 12.5), const_geom)
    np.testing.assert_allclose(once.values, shifted.values, atol=1e-12)
    assert abs(once.values.mean()) <= 1e-13


# ---------------------------------------------------------------------------
# full runs


def test_run_flow_stationary_terminates_immediately():
    geom = generate_geometry(make_grid(GridSpec(2, 8)), seed=3, stationary=True)
    result = run_flow(geom, FlowConfig(t_max=5.0))
    assert result.terminated == "theta"
    assert result.steps == 0
    assert result.final.phi.max_abs() == 0.0
    assert result.rows[0].theta <= 1e-13


def test_run_flow_constant_datum_normalized_limit(const_geom):
    config = FlowConfig(t_max=0.5, theta_stop=0.0, snapshot_every=0.1)
    result = run_flow(const_geom, config)
    assert result.terminated == "t_max"
    tilde = normalize(result.final.phi, const_geom)
    assert tilde.max_abs() <= 1e-12
    # phi itself grew linearly
    want = 0.5 * (math.log(1.3) + 0.2)
    np.testing.assert_allclose(result.final.phi.values, want, atol=1e-12)


def test_run_flow_generic_theta_decays_and_checks_pass():
    geom = seeded_geom(seed=101)
    result = run_flow(geom, FlowConfig(t_max=4.0, theta_stop=1e-9))
    assert result.terminated in ("theta", "t_max")
    rows = result.rows
    late = [r.theta for r in rows if r.t >= 1.0]
    assert len(late) >= 2 and late[-1] < late[0]
    assert result.checks["max_principle"]["pass"]
    assert result.checks["positivity"]["pass"]
    assert result.checks["trace_exponential_identity"]["pass"]
    assert result.checks["trace_lower_bound"]["pass"]
    assert result.checks["no_abort"]["pass"]


def test_run_flow_deterministic():
    geom = seeded_geom(seed=55)
    config = FlowConfig(t_max=0.3, theta_stop=0.0)
    a = run_flow(geom, config)
    b = run_flow(geom, config)
    assert len(a.rows) == len(b.rows)
    for ra, rb in zip(a.rows, b.rows):
        assert ra == rb


def test_run_flow_snapshot_callback_times():
    geom = seeded_geom(seed=55)
    seen = []
    run_flow(
        geom,
        FlowConfig(t_max=0.35, theta_stop=0.0, snapshot_every=0.1),
        on_snapshot=lambda s: seen.append(s.t),
    )
    assert seen[0] == 0.0
    assert seen[-1] == pytest.approx(0.35, abs=1e-9)
    assert len(seen) >= 4


def test_converged_run_cauchy_bound_with_fitted_constants():
    # ||phi~(t2) - phi~(t1)||_inf <= (c1/c2)(e^{-c2 t1} - e^{-c2 t2}) from the
    # fitted decay constants, for sample times inside the fit window
    from donflow.diagnostics import decay_fit

    geom = seeded_geom(seed=102)
    snaps = []
    result = run_flow(
        geom,
        FlowConfig(t_max=25.0, theta_stop=1e-9, snapshot_every=0.1),
        on_snapshot=lambda s: snaps.append((s.t, normalize(s.phi, geom).values.copy())),
    )
    assert result.terminated == "theta"
    assert result.checks["osc_phi_stable"]["pass"]
    times = np.array([r.t for r in result.rows])
    thetas = np.array([r.theta for r in result.rows])
    fit = decay_fit(times, thetas)
    lo, hi = fit.window
    window_snaps = [(t, v) for t, v in snaps if lo <= t <= hi]
    t1, v1 = window_snaps[0]
    for t2, v2 in window_snaps[1:]:
        gap = float(np.max(np.abs(v2 - v1)))
        bound = fit.c1_hat / fit.c2_hat * (
            math.exp(-fit.c2_hat * t1) - math.exp(-fit.c2_hat * t2)
        )
        assert gap <= 1.5 * bound + 1e-12
