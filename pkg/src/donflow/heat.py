"""The linear parabolic equation du/dt = Lu for the flow's linearization
L = (tr_{chi_phi} omega)^{-1} h^{i jbar} d_i d_jbar, with monitors for the
gradient-quantity G = t(|df|_h^2 / tr_{chi_phi} omega - alpha df/dt) of
f = log u and for the sup/inf Harnack ratio.

Coefficients come from a flow state: frozen (one state) or interpolated in
time from stored potential snapshots.  df/dt is evaluated as (Lu)/u, exact
for the continuum equation, rather than by differencing u in time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .flow import FlowState, _make_state, initial_dt
from .geometry import BackgroundGeometry, identity_geometry
from .grid import ScalarField, TorusGrid, hessian_entries_n2, holomorphic_gradient
from .hermitian import InvalidInputError, stack_h_conjugate

__all__ = [
    "HeatState",
    "HeatTrajectory",
    "LiYauReport",
    "HeatPositivityError",
    "FrozenCoefficients",
    "InterpolatedCoefficients",
    "identity_coefficients",
    "apply_L",
    "run_heat",
    "li_yau_G",
    "harnack_ratio",
    "flow_linearization_errors",
]


class HeatPositivityError(RuntimeError):
    """u lost positivity and the halving budget ran out."""


@dataclass(frozen=True)
class HeatState:
    """Positive solution sample with the coefficient state it was evolved under."""

    t: float
    u: ScalarField
    coefficients: FlowState
    geom: BackgroundGeometry

    def __post_init__(self):
        if self.u.min() <= 0.0:
            raise InvalidInputError("heat state requires strictly positive u")


@dataclass(frozen=True)
class LiYauReport:
    alpha: float
    sup_G_over_t: float
    series: list  # (t, sup_M G/t) samples

    def __post_init__(self):
        if self.alpha <= 1.0:
            raise InvalidInputError("alpha must exceed 1")


@dataclass
class HeatTrajectory:
    states: list
    times: np.ndarray
    sup_u: np.ndarray
    inf_u: np.ndarray
    sup_G_over_t: np.ndarray
    report: LiYauReport | None
    checks: dict
    steps: int


class FrozenCoefficients:
    """A single flow state supplies L for all times."""

    def __init__(self, state: FlowState, geom: BackgroundGeometry):
        self.geom = geom
        self._state = state

    def state_at(self, t: float) -> FlowState:
        return self._state


class InterpolatedCoefficients:
    """Coefficients rebuilt from potential snapshots, linear in t between them."""

    def __init__(self, snapshots, geom: BackgroundGeometry):
        # snapshots: iterable of (time, ScalarField phi), strictly increasing
        snaps = sorted(snapshots, key=lambda p: p[0])
        if len(snaps) < 1:
            raise InvalidInputError("need at least one snapshot")
        self.geom = geom
        self._times = np.array([t for t, _ in snaps])
        self._phis = [phi for _, phi in snaps]
        self._cache_t = None
        self._cache_state = None

    def state_at(self, t: float) -> FlowState:
        if self._cache_t == t:
            return self._cache_state
        times = self._times
        if t <= times[0]:
            phi = self._phis[0]
        elif t >= times[-1]:
            phi = self._phis[-1]
        else:
            j = int(np.searchsorted(times, t)) - 1
            w = (t - times[j]) / (times[j + 1] - times[j])
            phi = ScalarField(
                self.geom.grid,
                (1.0 - w) * self._phis[j].values + w * self._phis[j + 1].values,
            )
        state = _make_state(t, phi, self.geom, floor=0.0, dt_used=0.0)
        self._cache_t, self._cache_state = t, state
        return state


def identity_coefficients(grid: TorusGrid) -> FrozenCoefficients:
    """chi_phi = omega = I: L reduces to 1/(4n) times the flat Laplacian."""
    geom = identity_geometry(grid)
    from .flow import initial_state

    return FrozenCoefficients(initial_state(geom), geom)


def _h_conjugate(flow: FlowState, geom: BackgroundGeometry) -> np.ndarray:
    """chi_phi^{-1} omega chi_phi^{-1} per point, cached on the flow state."""
    cached = getattr(flow, "_h_conj", None)
    if cached is None:
        cached = stack_h_conjugate(flow.inv_chi_phi, geom.omega.entries)
        object.__setattr__(flow, "_h_conj", cached)
    return cached


def _laplace_h(u_values: np.ndarray, flow: FlowState, geom: BackgroundGeometry) -> np.ndarray:
    """Delta_h u = trace((chi^{-1} omega chi^{-1}) . hess(u)) as a flat array."""
    grid = geom.grid
    m = _h_conjugate(flow, geom)
    u_hat = np.fft.fftn(u_values.reshape(grid.shape))
    if geom.n == 2:
        e00, e11, e01 = hessian_entries_n2(grid, u_hat)
        return (
            m[:, 0, 0].real * e00.reshape(-1)
            + m[:, 1, 1].real * e11.reshape(-1)
            + 2.0 * (m[:, 0, 1] * np.conj(e01.reshape(-1))).real
        )
    out = np.zeros(grid.npoints)
    for i in range(grid.n):
        for j in range(grid.n):
            if i == j:
                mult = grid.hessian_diag_multipliers[i]
            else:
                mult = grid.dz_multipliers[i] * grid.dzbar_multipliers[j]
            entry = np.fft.ifftn(mult * u_hat).reshape(-1)
            out += (m[:, j, i] * entry).real
    return out


def apply_L(u: ScalarField, flow: FlowState, geom: BackgroundGeometry) -> ScalarField:
    """(tr_{chi_phi} omega)^{-1} h^{i jbar} d_i d_jbar u at the given coefficients."""
    values = _laplace_h(u.values, flow, geom) / flow.tr_chiphi_omega
    return ScalarField(geom.grid, values.reshape(geom.grid.shape))


def li_yau_G(state: HeatState, alpha: float):
    """The gradient quantity G = t(|d log u|_h^2 / tr - alpha d(log u)/dt).

    Returns (G field, sup_M G/t); at t = 0 the field is zero by definition.
    """
    if alpha <= 1.0:
        raise InvalidInputError("alpha must exceed 1")
    geom, flow = state.geom, state.coefficients
    if state.t == 0.0:
        return geom.grid.constant(0.0), 0.0
    u_flat = state.u.flat
    f = ScalarField(geom.grid, np.log(state.u.values))
    grad = holomorphic_gradient(f).stack  # (P, n)
    m = _h_conjugate(flow, geom)
    grad_sq = np.einsum("pi,pij,pj->p", np.conj(grad), m, grad).real
    dfdt = _laplace_h(state.u.values, flow, geom) / flow.tr_chiphi_omega / u_flat
    expr = grad_sq / flow.tr_chiphi_omega - alpha * dfdt
    g_values = state.t * expr
    return (
        ScalarField(geom.grid, g_values.reshape(geom.grid.shape)),
        float(expr.max()),
    )


def run_heat(
    u0: ScalarField,
    source,
    t_span,
    dt_initial: float | None = None,
    dt_safety: float = 0.4,
    record_times=None,
    alpha: float | None = 2.0,
    max_halvings: int = 40,
) -> HeatTrajectory:
    """RK4 integration of du/dt = Lu with a positivity guard on u.

    Steps are clipped to land exactly on every requested record time (span
    endpoints always included), where a HeatState snapshot and the series
    (sup u, inf u, sup G/t) are taken.
    """
    if u0.min() <= 0.0:
        raise InvalidInputError("u0 must be strictly positive")
    geom = source.geom
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise InvalidInputError("empty time span")
    records = {t0, t1}
    if record_times is not None:
        for t in record_times:
            if t < t0 - 1e-12 or t > t1 + 1e-12:
                raise InvalidInputError(f"record time {t} outside the span")
            records.add(float(t))
    records = sorted(records)

    flow0 = source.state_at(t0)
    dt = dt_initial if dt_initial is not None else initial_dt(flow0, geom, dt_safety)

    t, u = t0, u0.values.reshape(geom.grid.shape)
    states, series = [], []

    def take_record(time_pt, u_values):
        state = HeatState(
            t=time_pt,
            u=ScalarField(geom.grid, u_values.copy()),
            coefficients=source.state_at(time_pt),
            geom=geom,
        )
        states.append(state)
        sup_g = li_yau_G(state, alpha)[1] if alpha is not None else math.nan
        series.append((time_pt, float(u_values.max()), float(u_values.min()), sup_g))

    take_record(t0, u)
    next_record = 1
    steps = 0
    while next_record < len(records):
        target = records[next_record]
        step_dt = min(dt, target - t)
        u_new = None
        trial = step_dt
        for _ in range(max_halvings + 1):
            candidate = _rk4_heat(u, t, trial, source, geom)
            if candidate.min() > 0.0:
                u_new = candidate
                break
            trial *= 0.5
        if u_new is None:
            raise HeatPositivityError(
                f"positivity of u lost at t={t:.6g} after {max_halvings} halvings"
            )
        t, u = t + trial, u_new
        steps += 1
        if abs(t - target) <= 1e-12:
            t = target
            take_record(t, u)
            next_record += 1

    times = np.array([s[0] for s in series])
    sup_u = np.array([s[1] for s in series])
    inf_u = np.array([s[2] for s in series])
    sup_g = np.array([s[3] for s in series])
    report = None
    if alpha is not None:
        report = LiYauReport(
            alpha=alpha,
            sup_G_over_t=float(np.nanmax(sup_g)),
            series=[(float(a), float(b)) for a, b in zip(times, sup_g)],
        )
    scale = float(np.max(np.abs(u0.values)))
    sup_ok = bool(np.all(np.diff(sup_u) <= 1e-8 * scale))
    inf_ok = bool(np.all(np.diff(inf_u) >= -1e-8 * scale))
    checks = {
        "max_principle_sup": {"pass": sup_ok, "scale": scale},
        "max_principle_inf": {"pass": inf_ok, "scale": scale},
        "positivity": {"pass": True, "min_u": float(inf_u.min())},
    }
    return HeatTrajectory(
        states=states,
        times=times,
        sup_u=sup_u,
        inf_u=inf_u,
        sup_G_over_t=sup_g,
        report=report,
        checks=checks,
        steps=steps,
    )


def _rk4_heat(u, t, dt, source, geom):
    def rhs(at_t, values):
        flow = source.state_at(at_t)
        return (
            _laplace_h(values, flow, geom) / flow.tr_chiphi_omega
        ).reshape(geom.grid.shape)

    k1 = rhs(t, u)
    k2 = rhs(t + 0.5 * dt, u + 0.5 * dt * k1)
    k3 = rhs(t + 0.5 * dt, u + 0.5 * dt * k2)
    k4 = rhs(t + dt, u + dt * k3)
    return u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def harnack_ratio(traj: HeatTrajectory, s1: float, s2: float) -> float:
    """R = sup u(., s1) / (inf u(., s2) * e^{s2 - s1}) from recorded states.

    Finiteness of R certifies the sup/inf Harnack inequality with constant R.
    """
    if not (0.0 < s1 < s2):
        raise InvalidInputError("need 0 < s1 < s2")
    times = traj.times

    def value_at(s):
        hits = np.nonzero(np.abs(times - s) <= 1e-12)[0]
        if hits.size == 0:
            raise InvalidInputError(f"time {s} is not a recorded trajectory point")
        return int(hits[0])

    i1, i2 = value_at(s1), value_at(s2)
    return float(traj.sup_u[i1] / (traj.inf_u[i2] * math.exp(s2 - s1)))


def flow_linearization_errors(geom: BackgroundGeometry, dt: float, n_steps: int):
    """Max-norm gap between the centered time difference of d(phi)/dt along
    the evolving flow and L applied to it at the middle state.

    The identity d/dt(d phi/dt) = L(d phi/dt) is exact for the spatially
    discretized system, so the gap measures pure time-discretization error.
    """
    from .flow import flow_step, initial_state

    if n_steps < 3:
        raise InvalidInputError("need at least 3 steps for a centered difference")
    states = [initial_state(geom)]
    for _ in range(n_steps):
        states.append(flow_step(states[-1], dt, geom))
    errors = []
    for k in range(1, n_steps):
        prev_state, mid, nxt = states[k - 1], states[k], states[k + 1]
        fd = (nxt.phi_dot.values - prev_state.phi_dot.values) / (2.0 * dt)
        lw = apply_L(mid.phi_dot, mid, geom)
        errors.append(float(np.max(np.abs(fd - lw.values))))
    return errors
