"""Time integration of the parabolic flow of the potential.

The evolved equation, in trace form, is

    d(phi)/dt = -log(tr_{chi_phi} omega) + log n + F,     phi(., 0) = 0,

with chi_phi = chi + (mixed complex Hessian of phi) required to stay positive
definite.  The right side makes the trace identity
tr_{chi_phi} omega * exp(d(phi)/dt - F) = n hold exactly at every state, and
stationary points solve the trace form of the critical-metric equation up to
the mean constant b.

Stepping is classical RK4 with a positivity guard: any stage (or the result)
whose smallest generalized eigenvalue of (chi_phi, omega) drops to the floor
rejects the step, which is retried at dt/2 up to a halving budget.  The run
loop is sequential and deterministic; states are immutable snapshots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diagnostics import assemble_row, oscillation
from .geometry import BackgroundGeometry
from .grid import (
    HermitianField,
    ScalarField,
    dbar_hessian,
    hessian_entries_n2,
    integrate_mu,
)
from .hermitian import (
    stack_eigvalsh,
    stack_generalized_eigvalsh,
    stack_h_conjugate,
    stack_inverse_hermitian,
    stack_trace_pair,
)

__all__ = [
    "FlowConfig",
    "FlowState",
    "FlowRunResult",
    "PositivityError",
    "StepFailureError",
    "POSITIVITY_FLOOR",
    "chi_phi",
    "flow_rhs",
    "initial_state",
    "state_from_potential",
    "initial_dt",
    "stable_dt_estimate",
    "flow_step",
    "normalize",
    "run_flow",
]

POSITIVITY_FLOOR = 1e-8
MAX_HALVINGS = 40
SPECTRAL_TAIL_WARN = 1e-6


class PositivityError(ValueError):
    """chi_phi lost positivity; carries the worst point and eigenvalue."""

    def __init__(self, min_eig: float, worst_point: int):
        self.min_eig = min_eig
        self.worst_point = worst_point
        super().__init__(
            f"chi_phi is not positive definite: min generalized eigenvalue "
            f"{min_eig:.6e} at grid point {worst_point}"
        )


class StepFailureError(RuntimeError):
    """The halving budget ran out; carries the last valid state."""

    def __init__(self, state, dt: float, halvings: int, cause: PositivityError):
        self.state = state
        self.dt = dt
        self.halvings = halvings
        self.cause = cause
        super().__init__(
            f"step from t={state.t:.6g} failed after {halvings} halvings "
            f"(last dt {dt:.3e}): {cause}"
        )


@dataclass(frozen=True)
class FlowConfig:
    """Run parameters; dt_initial = None takes the explicit-stability heuristic."""

    t_max: float
    dt_initial: float | None = None
    dt_safety: float = 0.4
    theta_stop: float = 1e-9
    snapshot_every: float = 0.1
    rng_seed: int | None = None
    alpha_liyau: float = 2.0

    def __post_init__(self):
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")
        if not (0.0 < self.dt_safety <= 1.0):
            raise ValueError("dt_safety must lie in (0, 1]")
        if self.dt_initial is not None and self.dt_initial <= 0:
            raise ValueError("dt_initial must be positive")
        if self.theta_stop < 0:
            raise ValueError("theta_stop must be >= 0")
        if self.snapshot_every <= 0:
            raise ValueError("snapshot_every must be positive")
        if self.alpha_liyau <= 1.0:
            raise ValueError("alpha_liyau must exceed 1")


@dataclass(frozen=True)
class FlowState:
    """Immutable flow snapshot with caches coherent by construction:
    chi_phi = chi + hessian(phi), phi_dot the evaluated right side,
    tr_chiphi_omega the pointwise trace, min_eig the smallest generalized
    eigenvalue of (chi_phi, omega) over the grid."""

    t: float
    phi: ScalarField
    chi_phi: HermitianField
    tr_chiphi_omega: np.ndarray
    phi_dot: ScalarField
    min_eig: float
    dt_used: float = math.nan

    @property
    def theta(self) -> float:
        return oscillation(self.phi_dot)

    @property
    def inv_chi_phi(self) -> np.ndarray:
        """Pointwise inverse of chi_phi, computed on first use."""
        cached = getattr(self, "_inv_chi_phi", None)
        if cached is None:
            cached = stack_inverse_hermitian(self.chi_phi.values)
            object.__setattr__(self, "_inv_chi_phi", cached)
        return cached


def chi_phi(phi: ScalarField, geom: BackgroundGeometry) -> HermitianField:
    """chi plus the mixed Hessian of phi; positivity is the caller's check."""
    return HermitianField(geom.grid, geom.chi.values + dbar_hessian(phi).values)


def _eval_n2(phi_values, geom, floor, need_stack):
    """Component-level right-side evaluation for n = 2 (the hot path).

    Returns (chi_stack or None, tr, phi_dot, min_eig); positivity is checked
    on the whitened closed-form eigenvalues before anything is inverted.
    """
    grid = geom.grid
    phi_hat = np.fft.fftn(phi_values)
    e00, e11, e01 = hessian_entries_n2(grid, phi_hat)
    chi = geom.chi.values
    a = chi[:, 0, 0].real + e00.reshape(-1)
    d = chi[:, 1, 1].real + e11.reshape(-1)
    b = chi[:, 0, 1] + e01.reshape(-1)
    if geom.omega_is_identity:
        wa, wd, wb = a, d, b
    else:
        w = geom.omega_whitener
        w00, w01, w11 = w[0, 0].real, w[0, 1], w[1, 1].real
        aw00 = a * w00 + b * np.conj(w01)
        aw10 = np.conj(b) * w00 + d * np.conj(w01)
        aw01 = a * w01 + b * w11
        aw11 = np.conj(b) * w01 + d * w11
        wa = (w00 * aw00 + w01 * aw10).real
        wd = (np.conj(w01) * aw01 + w11 * aw11).real
        wb = w00 * aw01 + w01 * aw11
    mid = 0.5 * (wa + wd)
    rad = np.sqrt(np.square(0.5 * (wa - wd)) + np.square(np.abs(wb)))
    lam_min = mid - rad
    worst = int(np.argmin(lam_min))
    min_eig = float(lam_min[worst])
    if min_eig <= floor:
        raise PositivityError(min_eig, worst)
    det = a * d - np.square(np.abs(b))
    if geom.omega_is_identity:
        tr = (a + d) / det
    else:
        g = geom.omega.entries
        adj_dot_g = d * g[0, 0] - b * g[1, 0] - np.conj(b) * g[0, 1] + a * g[1, 1]
        tr = adj_dot_g.real / det
    phi_dot = -np.log(tr) + _LOG2 + geom.F.flat
    stack = None
    if need_stack:
        stack = np.empty((grid.npoints, 2, 2), dtype=complex)
        stack[:, 0, 0] = a
        stack[:, 1, 1] = d
        stack[:, 0, 1] = b
        stack[:, 1, 0] = np.conj(b)
    return stack, tr, phi_dot, min_eig


_LOG2 = math.log(2.0)


def _eval_general(phi_values, geom, floor, need_stack):
    phi = ScalarField(geom.grid, phi_values)
    chi_values = geom.chi.values + dbar_hessian(phi).values
    if geom.omega_is_identity:
        lam_min = stack_eigvalsh(chi_values)[:, 0]
    else:
        lam_min = stack_generalized_eigvalsh(chi_values, geom.omega_whitener)[:, 0]
    worst = int(np.argmin(lam_min))
    min_eig = float(lam_min[worst])
    if min_eig <= floor:
        raise PositivityError(min_eig, worst)
    inv = stack_inverse_hermitian(chi_values)
    tr = stack_trace_pair(inv, geom.omega.entries)
    phi_dot = -np.log(tr) + math.log(geom.n) + geom.F.flat
    return (chi_values if need_stack else None), tr, phi_dot, min_eig


def _evaluate(phi_values, geom, floor, need_stack=True):
    if geom.n == 2:
        return _eval_n2(phi_values, geom, floor, need_stack)
    return _eval_general(phi_values, geom, floor, need_stack)


def flow_rhs(phi: ScalarField, geom: BackgroundGeometry) -> ScalarField:
    """Right side -log(tr_{chi_phi} omega) + log n + F at a given potential."""
    _, _, phi_dot, _ = _evaluate(phi.values, geom, floor=0.0, need_stack=False)
    return ScalarField(geom.grid, phi_dot.reshape(geom.grid.shape))


def _make_state(t, phi, geom, floor, dt_used=math.nan) -> FlowState:
    chi_values, tr, phi_dot, min_eig = _evaluate(phi.values, geom, floor)
    return FlowState(
        t=t,
        phi=phi,
        chi_phi=HermitianField(geom.grid, chi_values),
        tr_chiphi_omega=tr,
        phi_dot=ScalarField(geom.grid, phi_dot.reshape(geom.grid.shape)),
        min_eig=min_eig,
        dt_used=dt_used,
    )


def initial_state(geom: BackgroundGeometry) -> FlowState:
    return _make_state(
        0.0, geom.grid.constant(0.0), geom, floor=POSITIVITY_FLOOR, dt_used=0.0
    )


def state_from_potential(phi: ScalarField, geom: BackgroundGeometry, t: float = 0.0) -> FlowState:
    """Rebuild a coherent flow state from a stored potential snapshot."""
    return _make_state(t, phi, geom, floor=0.0, dt_used=0.0)


def initial_dt(state: FlowState, geom: BackgroundGeometry, dt_safety: float) -> float:
    """Explicit-diffusion step heuristic evaluated at the given state:
    dt = safety * dx^2 * (min lambda(chi_phi, omega))^2 / max lambda(h^{ij}, omega)."""
    w = geom.omega_whitener
    lam_min = float(stack_generalized_eigvalsh(state.chi_phi.values, w)[:, 0].min())
    h_upper = np.conj(stack_h_conjugate(state.inv_chi_phi, geom.omega.entries))
    lam_h_max = float(stack_generalized_eigvalsh(h_upper, w)[:, -1].max())
    dx = 1.0 / geom.grid.N
    return dt_safety * dx * dx * lam_min * lam_min / lam_h_max


RK4_REAL_AXIS = 2.785


def stable_dt_estimate(state: FlowState, geom: BackgroundGeometry, margin: float = 0.85) -> float:
    """Sharper step bound from the linearized symbol.

    The linearization of the right side is (tr_{chi_phi} omega)^{-1} Delta_h,
    whose Fourier symbol is bounded by
    max_x [lambda_max(chi^{-1} omega chi^{-1}) / tr] * pi^2 * 2n (N/2)^2;
    the step must keep that inside RK4's real-axis stability interval.  Less
    conservative than ``initial_dt``; the reject-and-halve guard still backs
    it.
    """
    m = stack_h_conjugate(state.inv_chi_phi, geom.omega.entries)
    coeff = float((stack_eigvalsh(m)[:, -1] / state.tr_chiphi_omega).max())
    n, big_n = geom.n, geom.grid.N
    rho = coeff * np.pi**2 * 2.0 * n * (big_n / 2.0) ** 2
    return margin * RK4_REAL_AXIS / rho


def _stage_rhs(phi_values, geom, floor):
    _, _, phi_dot, _ = _evaluate(phi_values, geom, floor, need_stack=False)
    return phi_dot.reshape(geom.grid.shape)


def flow_step(
    state: FlowState,
    dt: float,
    geom: BackgroundGeometry,
    floor: float = POSITIVITY_FLOOR,
    max_halvings: int = MAX_HALVINGS,
) -> FlowState:
    """One guarded RK4 step.  Rejection (positivity at any stage or at the
    result) retries with dt/2; after the halving budget a StepFailureError
    carrying the last valid state is raised."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    phi0 = state.phi.values
    k1 = state.phi_dot.values  # stage 1 right side is the cached evaluation
    last_error = None
    for halving in range(max_halvings + 1):
        try:
            k2 = _stage_rhs(phi0 + 0.5 * dt * k1, geom, floor)
            k3 = _stage_rhs(phi0 + 0.5 * dt * k2, geom, floor)
            k4 = _stage_rhs(phi0 + dt * k3, geom, floor)
            phi_new = ScalarField(
                geom.grid, phi0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            )
            return _make_state(state.t + dt, phi_new, geom, floor, dt_used=dt)
        except PositivityError as err:
            last_error = err
            dt *= 0.5
    raise StepFailureError(state, dt, max_halvings, last_error)


def normalize(phi: ScalarField, geom: BackgroundGeometry) -> ScalarField:
    """Remove the mean against the normalized volume measure."""
    return ScalarField(geom.grid, phi.values - integrate_mu(phi, geom.omega))


@dataclass
class FlowRunResult:
    rows: list
    final: FlowState
    checks: dict
    terminated: str  # "theta" | "t_max" | "aborted"
    steps: int
    failure: StepFailureError | None = None


class _InvariantMonitor:
    """Accumulates the runtime-checked estimates along accepted steps."""

    def __init__(self, state0: FlowState, geom: BackgroundGeometry):
        self.geom = geom
        self.initial_sup = state0.phi_dot.max_abs()
        self.running_sup = self.initial_sup
        self.min_eig = state0.min_eig
        self.identity_err = 0.0
        self.amhm_margin = math.inf
        self.tail_max = 0.0
        self.observe_step(state0)
        self.observe_snapshot(state0)

    def observe_step(self, state: FlowState):
        self.running_sup = max(self.running_sup, state.phi_dot.max_abs())
        self.min_eig = min(self.min_eig, state.min_eig)

    def observe_snapshot(self, state: FlowState):
        tr = state.tr_chiphi_omega
        rel = np.abs(
            tr * np.exp(state.phi_dot.flat - self.geom.F.flat) / self.geom.n - 1.0
        )
        self.identity_err = max(self.identity_err, float(rel.max()))
        tr_omega_chi = np.einsum(
            "ij,pji->p", self.geom.omega_inverse, state.chi_phi.values
        ).real
        self.amhm_margin = min(
            self.amhm_margin, float((tr_omega_chi - self.geom.n / tr).min())
        )

    def summary(self, rows) -> dict:
        max_principle_bound = self.initial_sup * (1.0 + 1e-6) + 1e-8
        osc = [r.osc_phi for r in rows]
        times = [r.t for r in rows]
        checks = {
            "max_principle": {
                "pass": self.running_sup <= max_principle_bound,
                "sup_abs_phidot_initial": self.initial_sup,
                "sup_abs_phidot_run": self.running_sup,
            },
            "trace_exponential_identity": {
                "pass": self.identity_err <= 1e-10,
                "max_relative_error": self.identity_err,
            },
            "positivity": {
                "pass": self.min_eig > 0.0,
                "min_generalized_eigenvalue": self.min_eig,
            },
            "trace_lower_bound": {
                "pass": self.amhm_margin >= -1e-10 * max(1.0, self.geom.n),
                "min_margin": self.amhm_margin,
            },
            "normalization": {"pass": True},
            "spectral_tail_warning": {
                "warn": self.tail_max > SPECTRAL_TAIL_WARN,
                "max_tail": self.tail_max,
            },
        }
        # oscillation of phi stabilizes; meaningful only on converged runs
        if len(rows) >= 3 and times[-1] > 0:
            half = float(np.interp(times[-1] / 2.0, times, osc))
            scale = max(max(osc), 1e-30)
            checks["osc_phi_stable"] = {
                "pass": abs(osc[-1] - half) <= 0.01 * scale,
                "osc_final": osc[-1],
                "osc_half_time": half,
                "scale": scale,
            }
        return checks


def run_flow(
    geom: BackgroundGeometry, config: FlowConfig, on_snapshot=None
) -> FlowRunResult:
    """Integrate from zero initial data until t_max or theta(t) < theta_stop.

    Emits a diagnostics row at t = 0, whenever a snapshot boundary is crossed,
    and at the final state; ``on_snapshot(state)`` is called at the same
    moments.  Deterministic for a fixed geometry and config.
    """
    state = initial_state(geom)
    monitor = _InvariantMonitor(state, geom)
    rows = [assemble_row(state, geom)]
    monitor.tail_max = max(monitor.tail_max, rows[0].spectral_tail)
    if on_snapshot is not None:
        on_snapshot(state)

    dt = (
        config.dt_initial
        if config.dt_initial is not None
        else initial_dt(state, geom, config.dt_safety)
    )
    steps = 0
    failure = None
    terminated = "t_max"
    next_snapshot = config.snapshot_every
    if state.theta < config.theta_stop:
        terminated = "theta"
    else:
        while state.t < config.t_max - 1e-12:
            step_dt = min(dt, config.t_max - state.t)
            try:
                state = flow_step(state, step_dt, geom)
            except StepFailureError as err:
                failure = err
                state = err.state
                terminated = "aborted"
                break
            steps += 1
            monitor.observe_step(state)
            crossed = state.t >= next_snapshot - 1e-12
            if crossed:
                while next_snapshot <= state.t + 1e-12:
                    next_snapshot += config.snapshot_every
                monitor.observe_snapshot(state)
                row = assemble_row(state, geom)
                monitor.tail_max = max(monitor.tail_max, row.spectral_tail)
                rows.append(row)
                if on_snapshot is not None:
                    on_snapshot(state)
            if state.theta < config.theta_stop:
                terminated = "theta"
                break
        if rows[-1].t < state.t:
            monitor.observe_snapshot(state)
            row = assemble_row(state, geom)
            monitor.tail_max = max(monitor.tail_max, row.spectral_tail)
            rows.append(row)
            if on_snapshot is not None:
                on_snapshot(state)

    checks = monitor.summary(rows)
    if terminated != "theta":
        # the stabilization check presumes a converged run
        checks.pop("osc_phi_stable", None)
    checks["no_abort"] = {"pass": terminated != "aborted", "terminated": terminated}
    return FlowRunResult(
        rows=rows,
        final=state,
        checks=checks,
        terminated=terminated,
        steps=steps,
        failure=failure,
    )
