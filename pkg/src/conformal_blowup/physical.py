"""Radial wave equation in physical variables, integrated up to blow-up.

Solves ``u_tt = u_rr + (N-1)/r u_r + |u|^{p-1} u + f(u)`` on ``[0, R]`` by
second-order finite differences in ``r`` and classical RK4 in ``t``.  Time is
accumulated with compensated summation so that steps far below the spacing
of doubles near ``T`` are not lost.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .model import ModelParams, f_eval, kappa0
from .quadrature import RadialGrid


@dataclass(frozen=True, eq=False)
class PhysicalState:
    """``(u, u_t)`` on a radial grid at time ``t``.

    ``t_lo`` holds the low-order part of the compensated time sum.
    """

    t: float
    u: np.ndarray
    ut: np.ndarray
    grid: RadialGrid
    alive: bool = True
    t_lo: float = 0.0

    def __post_init__(self):
        if self.u.shape != self.grid.nodes.shape or self.ut.shape != self.grid.nodes.shape:
            raise ValueError("u and ut must be sampled on the grid")


@dataclass(frozen=True)
class BlowupEstimate:
    T: float
    method: str
    fit_window: tuple
    residual: float
    cone_slope: float = 1.0
    anchor: float = 0.0
    offset: float = 0.0

    def remaining(self, t_hi, t_lo=0.0):
        """``T - t`` without cancellation, for ``t = t_hi + t_lo``."""
        return (self.anchor - np.asarray(t_hi)) + (self.offset - np.asarray(t_lo))


@dataclass
class PhysicalTrajectory:
    """Step history and stored snapshots of one physical run."""

    params: ModelParams
    grid: RadialGrid
    t_hi: list = field(default_factory=list)
    t_lo: list = field(default_factory=list)
    sup: list = field(default_factory=list)
    tau_loc: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    outcome: str = "running"
    last_state: PhysicalState | None = None

    def times(self) -> np.ndarray:
        return np.asarray(self.t_hi) + np.asarray(self.t_lo)

    def snapshot_at(self, t: float, tol: float = 1e-12) -> PhysicalState:
        for snap in self.snapshots:
            if abs(snap.t - t) <= tol * max(1.0, abs(t)):
                return snap
        raise KeyError(f"no snapshot stored at t={t!r}")


def _two_sum(a, b):
    s = a + b
    bp = s - a
    return s, (a - (s - bp)) + (b - bp)


def physical_rhs(u, ut, grid: RadialGrid, params: ModelParams):
    """Right-hand side of the first-order system ``(u_t, u_tt)``."""
    h = grid.spacing
    r = grid.nodes
    N = params.N
    R = grid.domain_end
    lap = np.empty_like(u)
    lap[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h**2 \
        + (N - 1) / r[1:-1] * (u[2:] - u[:-2]) / (2.0 * h)
    lap[0] = 2.0 * N * (u[1] - u[0]) / h**2
    lap[-1] = 0.0
    utt = lap + np.abs(u) ** (params.p - 1.0) * u
    if params.perturbation_on:
        utt += f_eval(u, params)
    du = ut.copy()
    # outgoing condition  u_t + u_r + (N-1) u / (2R) = 0  at r = R
    k = (N - 1) / (2.0 * R)
    du[-1] = -(3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * h) - k * u[-1]
    utt[-1] = -(3.0 * ut[-1] - 4.0 * ut[-2] + ut[-3]) / (2.0 * h) - k * ut[-1]
    return du, utt


def step_physical(state: PhysicalState, dt: float, params: ModelParams,
                  cfl: float = 0.5) -> PhysicalState:
    """Advance one RK4 step; non-finite results mark the state blown up."""
    if not state.alive:
        raise ValueError("cannot step a blown-up state")
    if dt > cfl * state.grid.spacing * (1.0 + 1e-12):
        raise ValueError(f"dt={dt} violates CFL {cfl} for spacing {state.grid.spacing}")
    g = state.grid
    u, v = state.u, state.ut
    with np.errstate(over="ignore", invalid="ignore"):
        k1u, k1v = physical_rhs(u, v, g, params)
        k2u, k2v = physical_rhs(u + 0.5 * dt * k1u, v + 0.5 * dt * k1v, g, params)
        k3u, k3v = physical_rhs(u + 0.5 * dt * k2u, v + 0.5 * dt * k2v, g, params)
        k4u, k4v = physical_rhs(u + dt * k3u, v + dt * k3v, g, params)
        un = u + dt / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
        vn = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    t, lo = _two_sum(state.t, dt)
    alive = bool(np.all(np.isfinite(un)) and np.all(np.isfinite(vn)))
    return PhysicalState(t=t, u=un, ut=vn, grid=g, alive=alive, t_lo=state.t_lo + lo)


def time_scale(sup: float, params: ModelParams) -> float:
    """Remaining time ``(kappa0/|u|)^{(p-1)/2}`` of the flat blow-up with this amplitude."""
    if sup <= 0.0:
        return math.inf
    return (kappa0(params) / sup) ** ((params.p - 1.0) / 2.0)


def _choose_dt(state, params, cfl, step_fraction):
    sup = float(np.max(np.abs(state.u)))
    return min(cfl * state.grid.spacing, step_fraction * time_scale(sup, params))


def run_until_blowup(initial: PhysicalState, params: ModelParams, threshold: float = 1e8,
                     cfl: float = 0.5, horizon: float = 10.0, step_fraction: float = 0.02,
                     snapshot_times=(), method: str = "threshold_fit"):
    """Integrate until ``max|u|`` crosses ``threshold`` or ``t`` reaches ``horizon``.

    Returns
    -------
    trajectory : PhysicalTrajectory
        ``outcome`` is ``"blowup"`` or ``"horizon"``.
    estimate : BlowupEstimate or None
        ``None`` when no blow-up was detected before the horizon.
    """
    if not threshold > float(np.max(np.abs(initial.u))):
        raise ValueError("threshold must exceed the initial amplitude")
    traj = PhysicalTrajectory(params=params, grid=initial.grid)
    pending = sorted(float(t) for t in snapshot_times)
    state = initial

    def record(st):
        i = int(np.argmax(np.abs(st.u)))
        sup = abs(float(st.u[i]))
        traj.t_hi.append(st.t)
        traj.t_lo.append(st.t_lo)
        traj.sup.append(sup)
        rate = abs(float(st.ut[i]))
        traj.tau_loc.append(params.alpha * sup / rate if rate > 0 else math.inf)

    record(state)
    while pending and pending[0] <= state.t:
        traj.snapshots.append(state)
        pending.pop(0)
    while True:
        dt = _choose_dt(state, params, cfl, step_fraction)
        if state.t + dt >= horizon:
            dt = (horizon - state.t) - state.t_lo
        hit = False
        if pending and state.t + dt >= pending[0]:
            dt = (pending[0] - state.t) - state.t_lo
            hit = True
        nxt = step_physical(state, dt, params, cfl)
        if not nxt.alive:
            traj.outcome = "blowup"
            break
        state = nxt
        record(state)
        if hit:
            # pin the stored time to the requested value
            state = replace(state, t=pending.pop(0), t_lo=0.0)
            traj.snapshots.append(state)
            while pending and pending[0] <= state.t:
                pending.pop(0)
        if traj.sup[-1] >= threshold:
            traj.outcome = "blowup"
            break
        if state.t >= horizon:
            traj.outcome = "horizon"
            break
    traj.last_state = state
    if traj.outcome != "blowup":
        return traj, None
    return traj, estimate_blowup_time(traj, threshold, method)


def estimate_blowup_time(traj: PhysicalTrajectory, threshold: float,
                         method: str = "threshold_fit") -> BlowupEstimate:
    """Fit the blow-up time from the last decade of growth of ``max|u|``."""
    p = traj.params.p
    sup = np.asarray(traj.sup)
    hi = np.asarray(traj.t_hi)
    lo = np.asarray(traj.t_lo)
    top = sup[-1]
    # final decade of growth
    below = np.nonzero(sup < top / 10.0)[0]
    start = below[-1] + 1 if below.size else 0
    idx = np.arange(start, len(sup))
    if idx.size < 5:
        idx = np.arange(max(0, len(sup) - 5), len(sup))
    t_ref = hi[idx[0]]
    x = (hi[idx] - t_ref) + (lo[idx] - lo[idx[0]])
    if method == "threshold_fit":
        q = sup[idx] ** (-(p - 1.0) / 2.0)
        c1, c0 = np.polyfit(x, q, 1)
        xstar = -c0 / c1
        resid = q - (c1 * x + c0)
        residual = float(np.sqrt(np.mean(resid**2)) / np.mean(np.abs(q)))
    elif method == "richardson":
        tau = np.asarray(traj.tau_loc)[idx]
        Tloc = x + tau
        c1, c0 = np.polyfit(tau, Tloc, 1)
        xstar = c0
        resid = Tloc - (c1 * tau + c0)
        residual = float(np.sqrt(np.mean(resid**2)))
    else:
        raise ValueError(f"unknown method {method!r}")
    offset = float(xstar + lo[idx[0]])
    T = t_ref + offset
    last = hi[-1] + lo[-1]
    if not T > last:
        T = math.nextafter(last, math.inf)
    return BlowupEstimate(T=float(T), method=method,
                          fit_window=(float(hi[idx[0]]), float(hi[idx[-1]])),
                          residual=residual, anchor=float(t_ref), offset=offset)


def extract_cone_trace(traj: PhysicalTrajectory, T0: float, times) -> list:
    """Stored snapshots restricted to the backward light cone ``r <= T0 - t``."""
    out = []
    for t in times:
        if not t < T0:
            raise ValueError(f"time {t} is not before T0={T0}")
        snap = traj.snapshot_at(t)
        radius = T0 - snap.t
        keep = snap.grid.nodes <= radius * (1.0 + 1e-14)
        m = int(np.count_nonzero(keep))
        if m < 3:
            raise ValueError(f"cone at t={t} holds fewer than 3 nodes")
        nodes = snap.grid.nodes[:m]
        g = RadialGrid(nodes, float(nodes[-1]))
        out.append(PhysicalState(t=snap.t, u=snap.u[:m].copy(), ut=snap.ut[:m].copy(),
                                 grid=g, alive=snap.alive))
    return out


def advance_to(state: PhysicalState, t_end: float, params: ModelParams, cfl: float = 0.5,
               step_fraction: float = 0.02) -> PhysicalState:
    """Integrate to exactly ``t_end``."""
    while state.t < t_end:
        dt = min(_choose_dt(state, params, cfl, step_fraction), t_end - state.t)
        state = step_physical(state, dt, params, cfl)
        if not state.alive:
            raise FloatingPointError(f"solution blew up before t={t_end}")
        if t_end - state.t < 1e-15 * max(1.0, t_end):
            state = replace(state, t=t_end, t_lo=0.0)
    return state


def initial_state(family: str, grid: RadialGrid, params: ModelParams, **kw) -> PhysicalState:
    """Initial data families.

    ``constant``: ``u = u0``, ``u_t = u1``.
    ``gaussian``: ``u = kappa0 c exp(-r^2/sigma^2)``, ``u_t = 0``.
    ``self_similar``: the flat profile blowing up at ``T0`` plus
    ``perturbation * exp(-r^2)`` in ``u``.
    """
    r = grid.nodes
    k0 = kappa0(params)
    if family == "constant":
        u = np.full_like(r, float(kw.get("u0", k0)))
        ut = np.full_like(r, float(kw.get("u1", params.alpha * k0)))
    elif family == "gaussian":
        c = float(kw.get("amplitude", 2.0))
        sig = float(kw.get("sigma", 1.0))
        u = k0 * c * np.exp(-(r / sig) ** 2)
        ut = np.zeros_like(r)
    elif family == "self_similar":
        T0 = float(kw.get("T0", 1.0))
        eps = float(kw.get("perturbation", 0.0))
        u = k0 * T0 ** (-params.alpha) + eps * np.exp(-r**2)
        ut = np.full_like(r, params.alpha * k0 * T0 ** (-params.alpha - 1.0))
    else:
        raise ValueError(f"unknown data family {family!r}")
    return PhysicalState(t=0.0, u=u, ut=ut, grid=grid)
