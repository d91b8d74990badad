"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run as ``pytest tests/test_acceptance.py -v -s``.  Desk scale: n = 2 with
N = 8 for the seeded five-geometry suite and N = 16 for the convergence,
refinement, and linearization studies (a few minutes total).
"""

import json
import math

import numpy as np
import pytest

from donflow.cli import main as cli_main
from donflow.diagnostics import decay_fit, unit_time_ratios
from donflow.flow import (
    FlowConfig,
    FlowState,
    initial_state,
    normalize,
    run_flow,
    stable_dt_estimate,
)
from donflow.geometry import generate_geometry
from donflow.grid import GridSpec, make_grid
from donflow.heat import (
    FrozenCoefficients,
    flow_linearization_errors,
    harnack_ratio,
    identity_coefficients,
    run_heat,
)
from donflow.hermitian import li_eigenvalue_bound
from donflow.oracles import hessian_convergence_study, li_bound_study, wedge_identity_sweep

SEEDS = (101, 102, 103, 104, 105)
LAMBDA_2D = np.pi**2 / 2.0


def report(criterion: str, passed: bool, detail: str) -> None:
    print(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
    assert passed, f"{criterion}: {detail}"


@pytest.fixture(scope="module")
def seeded_suite():
    """Five seeded geometries at n=2, N=8, integrated to theta < 1e-9."""
    out = {}
    for seed in SEEDS:
        geom = generate_geometry(make_grid(GridSpec(2, 8)), seed=seed)
        result = run_flow(geom, FlowConfig(t_max=25.0, theta_stop=1e-9))
        out[seed] = (geom, result)
    return out


@pytest.fixture(scope="module")
def a6_run():
    """Seed-101 geometry at N=16 run to theta < 1e-12, keeping normalized
    potential snapshots for the Cauchy-in-time check."""
    geom = generate_geometry(make_grid(GridSpec(2, 16)), seed=101)
    state0 = initial_state(geom)
    dt = stable_dt_estimate(state0, geom)
    snaps = []

    def on_snapshot(state: FlowState):
        snaps.append((state.t, normalize(state.phi, geom).values.copy()))

    config = FlowConfig(
        t_max=50.0, theta_stop=1e-12, dt_initial=dt, snapshot_every=0.1
    )
    result = run_flow(geom, config, on_snapshot=on_snapshot)
    return geom, result, snaps


def _frozen_heat_study(geom, final_state):
    """Heat run over frozen converged coefficients; returns (R, sup G/t max)."""
    grid = geom.grid
    u0 = grid.scalar(1.0 + 0.1 * np.cos(2 * np.pi * grid.coordinate(0)))
    source = FrozenCoefficients(final_state, geom)
    records = sorted({0.5, 1.0, *np.arange(0.1, 1.21, 0.1)})
    traj = run_heat(
        u0,
        source,
        (0.0, 1.2),
        dt_initial=stable_dt_estimate(final_state, geom),
        record_times=records,
        alpha=2.0,
    )
    assert traj.checks["max_principle_sup"]["pass"]
    assert traj.checks["max_principle_inf"]["pass"]
    r = harnack_ratio(traj, 0.5, 1.0)
    sup_g = float(np.nanmax(traj.sup_G_over_t[1:]))  # t > 0 samples
    return r, sup_g


@pytest.fixture(scope="module")
def heat_refinement(seeded_suite, a6_run):
    geom8, result8 = seeded_suite[101]
    geom16, result16, _ = a6_run
    return _frozen_heat_study(geom8, result8.final), _frozen_heat_study(
        geom16, result16.final
    )


def test_a1_stationarity():
    geom = generate_geometry(make_grid(GridSpec(2, 8)), seed=101, stationary=True)
    result = run_flow(geom, FlowConfig(t_max=1.0, theta_stop=0.0))
    final_sup = result.final.phi.max_abs()
    report(
        "A1 stationarity",
        result.final.t >= 1.0 - 1e-9 and final_sup <= 1e-8,
        f"max|phi(1)| = {final_sup:.3e} (tolerance 1e-8)",
    )


def test_a2_maximum_principle(seeded_suite):
    worst = -math.inf
    for seed, (geom, result) in seeded_suite.items():
        initial = result.rows[0].sup_abs_phidot
        bound = initial * (1.0 + 1e-6) + 1e-8
        run_sup = max(r.sup_abs_phidot for r in result.rows)
        worst = max(worst, run_sup - bound)
    report(
        "A2 maximum principle",
        worst <= 0.0,
        f"worst excess over sup|phi_dot(0)|*(1+1e-6)+1e-8 across 5 seeds: {worst:.3e}",
    )


def test_a3_trace_exponential_identity(seeded_suite):
    worst = max(
        result.checks["trace_exponential_identity"]["max_relative_error"]
        for _, result in seeded_suite.values()
    )
    report(
        "A3 trace-exponential identity",
        worst <= 1e-10,
        f"max relative error over snapshots/seeds: {worst:.3e} (tolerance 1e-10)",
    )


def test_a4_positivity(seeded_suite):
    min_eig = min(
        result.checks["positivity"]["min_generalized_eigenvalue"]
        for _, result in seeded_suite.values()
    )
    aborted = any(
        result.terminated == "aborted" for _, result in seeded_suite.values()
    )
    report(
        "A4 positivity",
        min_eig > 0.0 and not aborted,
        f"min generalized eigenvalue over all accepted steps: {min_eig:.3e}; aborts: {aborted}",
    )


def test_a5_oscillation_decay(seeded_suite):
    worst_ratio = -math.inf
    worst_r2 = math.inf
    min_c2 = math.inf
    for seed, (geom, result) in seeded_suite.items():
        times = np.array([r.t for r in result.rows])
        thetas = np.array([r.theta for r in result.rows])
        ratios = unit_time_ratios(times, thetas, start=1.0)
        assert len(ratios) >= 1, f"seed {seed}: no unit-time ratios past t >= 1"
        worst_ratio = max(worst_ratio, max(ratios))
        fit = decay_fit(times, thetas)
        assert fit is not None, f"seed {seed}: decay fit unavailable"
        worst_r2 = min(worst_r2, fit.r_squared)
        min_c2 = min(min_c2, fit.c2_hat)
    report(
        "A5 oscillation decay",
        worst_ratio <= 0.99 and min_c2 > 0.0 and worst_r2 >= 0.95,
        f"worst unit-time ratio {worst_ratio:.3f} (<= 0.99), "
        f"min C2_hat {min_c2:.2f} (> 0), worst r^2 {worst_r2:.4f} (>= 0.95)",
    )


def test_a6_convergence_to_critical_equation(a6_run):
    geom, result, snaps = a6_run
    t_end = result.final.t
    terminated_ok = result.final.theta <= 1e-9 or t_end >= 50.0
    residual = result.rows[-1].residual_sup
    # Cauchy check between the final time and its half
    t_mid = t_end / 2.0
    mid = next(v for t, v in snaps if t >= t_mid - 1e-9)
    final = snaps[-1][1]
    cauchy = float(np.max(np.abs(final - mid)))
    report(
        "A6 convergence",
        terminated_ok and residual <= 1e-6 and cauchy <= 1e-6,
        f"t_end {t_end:.2f}, residual_sup {residual:.3e} (<= 1e-6), "
        f"||phi~(t_end) - phi~(t_end/2)||_inf {cauchy:.3e} (<= 1e-6)",
    )


def test_a7_eigenvalue_bound_oracle():
    study = li_bound_study(seed=2024, cases=1000, dims=(2, 3))
    tight = study["tight_case"]
    bound_val = li_eigenvalue_bound(2.0, 2.0, 2)
    passed = (
        study["violations"] == 0
        and tight["violations"] == 0
        and tight["admissible_count"] == 1
        and abs(tight["top_admissible"] - 2.0) <= 1e-3
        and bound_val == pytest.approx(2.0, abs=1e-12)
    )
    report(
        "A7 eigenvalue-bound grid search",
        passed,
        f"1000 cases, violations {study['violations']}; tight case bound "
        f"{bound_val}, unique admissible point at {tight['top_admissible']:.3f}",
    )


def test_a8_wedge_trace_identity():
    sweep = wedge_identity_sweep(seed=2024, cases=1000, dims=(2, 3, 4))
    report(
        "A8 wedge/trace identity",
        sweep["worst_relative_error"] <= 1e-12,
        f"worst relative gap over 1000 SPD pairs (n in 2,3,4): "
        f"{sweep['worst_relative_error']:.2e} (tolerance 1e-12)",
    )


def test_a9_discretization_order():
    study = hessian_convergence_study(seed=2024, sizes=(8, 16, 32), order=4)
    orders = study["observed_orders"]
    report(
        "A9 discretization order",
        all(o >= 2.0 for o in orders),
        f"observed orders across N=8->16->32: {[f'{o:.2f}' for o in orders]} (>= 2)",
    )


def test_a10_linear_heat(heat_refinement):
    # eigenmode decay rate at identity coefficients
    grid = make_grid(GridSpec(2, 8))
    u0 = grid.scalar(1.0 + 0.1 * np.cos(2 * np.pi * grid.coordinate(0)))
    traj = run_heat(
        u0,
        identity_coefficients(grid),
        (0.0, 0.5),
        record_times=[0.25, 0.5],
        alpha=2.0,
    )
    amp = 0.5 * (traj.sup_u - traj.inf_u)
    rate = math.log(amp[1] / amp[2]) / 0.25
    rate_ok = abs(rate - LAMBDA_2D) <= 1e-6 * LAMBDA_2D
    mp_ok = (
        traj.checks["max_principle_sup"]["pass"]
        and traj.checks["max_principle_inf"]["pass"]
    )
    (r8, g8), (r16, g16) = heat_refinement
    r_stable = abs(r8 - r16) <= 0.1 * max(abs(r8), abs(r16))
    g_stable = abs(g8 - g16) <= 0.1 * max(abs(g8), abs(g16))
    finite = all(map(math.isfinite, (r8, r16, g8, g16)))
    report(
        "A10 linear heat",
        rate_ok and mp_ok and finite and r_stable and g_stable,
        f"eigenmode rate {rate:.9f} vs pi^2/2 (rel err {abs(rate-LAMBDA_2D)/LAMBDA_2D:.1e}); "
        f"Harnack R: N8 {r8:.5f} vs N16 {r16:.5f}; sup G/t: N8 {g8:.5f} vs N16 {g16:.5f}",
    )


def test_a11_flow_linearization_identity():
    geom = generate_geometry(make_grid(GridSpec(2, 16)), seed=101)
    dt0 = 1.0e-3
    coarse = flow_linearization_errors(geom, dt=dt0, n_steps=8)
    fine = flow_linearization_errors(geom, dt=dt0 / 2.0, n_steps=16)
    # same centering time t = 6*dt0 on both step sizes
    err_coarse = coarse[5]
    err_fine = fine[11]
    order = math.log2(err_coarse / err_fine)
    report(
        "A11 flow-linearization identity",
        order >= 1.0,
        f"max-norm error {err_coarse:.3e} -> {err_fine:.3e} as dt halves "
        f"(observed order {order:.2f} >= 1)",
    )


def test_a12_determinism(tmp_path):
    config = {
        "schema_version": 1,
        "mode": "flow",
        "grid": {"n": 2, "N": 8},
        "geometry": {"seed": 101},
        "flow": {"t_max": 0.5, "theta_stop": 0.0, "snapshot_every": 0.1},
    }
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(config))
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert cli_main(["flow", "--config", str(cfg), "--output", str(out1)]) == 0
    assert cli_main(["flow", "--config", str(cfg), "--output", str(out2)]) == 0
    identical = (out1 / "diagnostics.csv").read_bytes() == (
        out2 / "diagnostics.csv"
    ).read_bytes()
    report(
        "A12 determinism",
        identical,
        "repeated seeded runs produced byte-identical diagnostics.csv",
    )
