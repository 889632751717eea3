"""Self-similar variables and the radial similarity equation on ``y in [0, 1]``.

With ``s = -log(T0 - t)``, ``y = r/(T0 - t)`` and ``w = (T0 - t)^alpha u``
(``alpha = 2/(p-1)``) the equation becomes, for ``v = w_s``::

    w_s = v
    v_s = y^{1-N} (y^{N-1} (1-y^2) w_y)_y - 2 y v_y - (p+3)/(p-1) v
          - 2(p+1)/(p-1)^2 w + |w|^{p-1} w + e^{-p alpha s} f(e^{alpha s} w)

The boundary ``y = 1`` is characteristic: all characteristic speeds
``y +- 1`` point out of the domain or vanish there, so no condition is
imposed and one-sided stencils are used.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.interpolate import CubicSpline

from .model import ModelParams, kappa0, scaled_f
from .physical import PhysicalState
from .quadrature import RadialGrid


@dataclass(frozen=True, eq=False)
class SimilarityState:
    s: float
    w: np.ndarray
    ws: np.ndarray
    grid: RadialGrid
    valid: bool = True

    def __post_init__(self):
        if self.grid.domain_end != 1.0:
            raise ValueError("similarity grids live on [0, 1]")
        if self.w.shape != self.grid.nodes.shape or self.ws.shape != self.grid.nodes.shape:
            raise ValueError("w and ws must be sampled on the grid")


def to_similarity(phys: PhysicalState, T0: float, params: ModelParams,
                  grid: RadialGrid) -> SimilarityState:
    """Transform a physical snapshot into the similarity frame of ``T0``.

    ``u`` and ``u_t`` are interpolated by cubic splines clamped to zero slope
    at ``r = 0``; ``w_y`` comes from the spline derivative.  The velocity is
    ``w_s = -alpha w - y w_y + (T0-t)^{alpha+1} u_t``.
    """
    L = T0 - phys.t
    if not L > 0:
        raise ValueError(f"snapshot time {phys.t} is not before T0={T0}")
    if phys.grid.domain_end < L * (1.0 - 1e-14):
        raise ValueError(f"snapshot covers r <= {phys.grid.domain_end}, cone needs {L}")
    r = phys.grid.nodes
    bc = ((1, 0.0), "not-a-knot")
    su = CubicSpline(r, phys.u, bc_type=bc)
    sv = CubicSpline(r, phys.ut, bc_type=bc)
    y = grid.nodes
    rr = np.minimum(y * L, r[-1])
    al = params.alpha
    scale = L**al
    w = scale * su(rr)
    wy = scale * L * su(rr, 1)
    ws = -al * w - y * wy + scale * L * sv(rr)
    return SimilarityState(s=-math.log(L), w=w, ws=ws, grid=grid)


def grad(w, h):
    """Second-order ``w_y``: zero at the centre, one-sided at ``y = 1``."""
    wy = np.empty_like(w)
    wy[1:-1] = (w[2:] - w[:-2]) / (2.0 * h)
    wy[0] = 0.0
    wy[-1] = (3.0 * w[-1] - 4.0 * w[-2] + w[-3]) / (2.0 * h)
    return wy


def similarity_rhs(w, v, s: float, grid: RadialGrid, params: ModelParams, eta: float = 0.0):
    """Right-hand side ``(w_s, v_s)``.

    ``eta > 0`` assembles the operator in its weighted form: divergence
    against ``y^{N-1}(1-y^2)^eta`` plus the compensating ``2 eta y w_y``.
    Both forms coincide up to roundoff.
    """
    h = grid.spacing
    y = grid.nodes
    N, p = params.N, params.p
    wy = grad(w, h)
    wyy = np.empty_like(w)
    wyy[1:-1] = (w[2:] - 2.0 * w[1:-1] + w[:-2]) / h**2
    wyy[0] = 2.0 * (w[1] - w[0]) / h**2
    wyy[-1] = 0.0  # multiplied by 1 - y^2 = 0
    yi = y[1:]
    D = np.empty_like(w)
    D[1:] = (1.0 - yi**2) * wyy[1:] + ((N - 1) * (1.0 - yi**2) / yi - 2.0 * (1.0 + eta) * yi) * wy[1:]
    D[0] = N * wyy[0]
    if eta:
        D[1:] += 2.0 * eta * yi * wy[1:]
    vy = np.empty_like(v)
    vy[2:] = (3.0 * v[2:] - 4.0 * v[1:-1] + v[:-2]) / (2.0 * h)
    vy[1] = (v[2] - v[0]) / (2.0 * h)
    vy[0] = 0.0
    vs = (D - 2.0 * y * vy - (p + 3.0) / (p - 1.0) * v
          - 2.0 * (p + 1.0) / (p - 1.0) ** 2 * w + np.abs(w) ** (p - 1.0) * w)
    if params.perturbation_on:
        vs += scaled_f(w, s, params)
    return v, vs


def step_similarity(state: SimilarityState, ds: float, params: ModelParams,
                    eta_for_form: float = 0.0, cfl: float = 0.4) -> SimilarityState:
    """One classical RK4 step of the similarity system."""
    if not state.valid:
        raise ValueError("cannot step an invalid state")
    if ds > cfl * state.grid.spacing * (1.0 + 1e-12):
        raise ValueError(f"ds={ds} violates CFL {cfl} for spacing {state.grid.spacing}")
    g, s = state.grid, state.s
    w, v = state.w, state.ws
    f = similarity_rhs
    with np.errstate(over="ignore", invalid="ignore"):
        k1w, k1v = f(w, v, s, g, params, eta_for_form)
        k2w, k2v = f(w + 0.5 * ds * k1w, v + 0.5 * ds * k1v, s + 0.5 * ds, g, params, eta_for_form)
        k3w, k3v = f(w + 0.5 * ds * k2w, v + 0.5 * ds * k2v, s + 0.5 * ds, g, params, eta_for_form)
        k4w, k4v = f(w + ds * k3w, v + ds * k3v, s + ds, g, params, eta_for_form)
        wn = w + ds / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
        vn = v + ds / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    valid = bool(np.all(np.isfinite(wn)) and np.all(np.isfinite(vn)))
    return SimilarityState(s=s + ds, w=wn, ws=vn, grid=g, valid=valid)


def boundary_velocity(state: SimilarityState) -> float:
    """``w_s`` at ``y = 1``.

    The grid contains the endpoint, so the one-sided cubic through the last
    four nodes reduces to the nodal value.
    """
    return float(state.ws[-1])


def evolve(state: SimilarityState, params: ModelParams, s_end: float, cfl: float = 0.4,
           eta_for_form: float = 0.0, observer=None, stop=None, nsteps: int | None = None) -> SimilarityState:
    """Integrate to ``s_end`` with uniform steps no larger than ``cfl * spacing``.

    ``observer(state)`` is called on the initial and every subsequent state;
    ``stop(state)`` returning true ends the run early.  ``nsteps`` fixes the
    step count (it must still respect the CFL bound).
    """
    span = s_end - state.s
    if nsteps is None:
        nsteps = max(1, math.ceil(span / (cfl * state.grid.spacing) - 1e-9))
    ds = span / nsteps
    if observer is not None:
        observer(state)
    s0 = state.s
    for k in range(1, nsteps + 1):
        nxt = step_similarity(state, ds, params, eta_for_form, cfl)
        # avoid drift in s from repeated addition
        state = SimilarityState(s=s0 + k * ds, w=nxt.w, ws=nxt.ws, grid=nxt.grid, valid=nxt.valid)
        if not state.valid:
            break
        if observer is not None:
            observer(state)
        if stop is not None and stop(state):
            break
    return state


@dataclass(frozen=True)
class FrameCalibration:
    T0: float
    T_fit: float
    evaluations: int
    final_velocity: float


def calibrate_frame(snapshot: PhysicalState, T_fit: float, params: ModelParams,
                    grid: RadialGrid, span: float, cfl: float = 0.4,
                    stages=(4.0, 8.0), rel_bracket: float = 1e-3) -> FrameCalibration:
    """Locate the frame ``T0`` in which the discrete similarity flow stays bounded.

    A mismatch between ``T0`` and the blow-up time of the discrete similarity
    flow excites the unstable time-translation mode ``~ e^s``.  The sign of
    ``w_s(0)`` after a given similarity-time length separates frames that
    blow up (``T0`` too late) from frames that decay (``T0`` too early);
    the root is refined by Brent's method over increasing lengths.
    """
    k0 = kappa0(params)
    count = [0]

    def escaped(x):
        top = float(np.max(np.abs(x.w)))
        return top > 8.0 * k0 or top < 0.25 * k0

    def g(T0, length):
        count[0] += 1
        st = to_similarity(snapshot, T0, params, grid)
        end = evolve(st, params, st.s + length, cfl, stop=escaped)
        if not end.valid:
            return 1e3
        top = float(np.max(np.abs(end.w)))
        if top > 8.0 * k0:
            return 1e3
        if top < 0.25 * k0:
            return -1e3
        return float(end.ws[0])

    lengths = [L for L in stages if L < span] + [span]
    L0 = T_fit - snapshot.t
    half = rel_bracket * L0
    center = T_fit
    for L in lengths:
        lo, hi = center - half, center + half
        glo, ghi = g(lo, L), g(hi, L)
        tries = 0
        while glo > 0 or ghi < 0:
            tries += 1
            if tries > 30:
                raise RuntimeError("could not bracket the similarity frame")
            if glo > 0:
                lo -= 2 * half
                half *= 2
                glo = g(lo, L)
            if ghi < 0:
                hi += 2 * half
                half *= 2
                ghi = g(hi, L)
        # the unstable mode grows like e^L, so T0 matters only to ~e^{-L}
        xtol = max(1e-4 * math.exp(-L) * L0, 4.0 * np.finfo(float).eps * abs(center))
        center = optimize.brentq(lambda T: g(T, L), lo, hi, xtol=xtol, maxiter=100)
        half = max(20.0 * math.exp(-L) * L0, 1e-14)
    vel = g(center, span)
    return FrameCalibration(T0=float(center), T_fit=float(T_fit), evaluations=count[0],
                            final_velocity=vel)
