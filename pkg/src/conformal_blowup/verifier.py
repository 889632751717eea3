"""Checks of inequalities, monotonicity and growth bounds on computed series."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .functionals import FunctionalConfig, reports_to_arrays
from .model import ModelParams, kappa0
from .physical import initial_state, run_until_blowup
from .quadrature import RadialGrid, product_weights, sphere_area


@dataclass
class CheckOutcome:
    """Result of one check; ``margin >= -tolerance`` is a pass."""

    name: str
    passed: bool
    margin: float
    details: dict = field(default_factory=dict)
    tolerance: float = 0.0

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "margin": float(self.margin),
                "tolerance": float(self.tolerance), "details": _plain(self.details)}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _outcome(name, margin, tol, details):
    margin = float(margin)
    if not math.isfinite(margin):
        margin = -1e300 if margin < 0 or math.isnan(margin) else 1e300
    return CheckOutcome(name, margin >= -tol, margin, details, tol)


# --- Hardy-Sobolev -----------------------------------------------------------

def hardy_sides(h, dh, eta: float, N: int):
    """``(LHS, RHS)`` of the weighted Hardy inequality as ball integrals."""
    h = np.asarray(h, dtype=float)
    n = h.size
    om = sphere_area(N)
    # |y|^2 goes into the weight so it is integrated exactly
    lhs = om * np.dot(product_weights(n, N + 2, eta - 1.0, 0), h**2)
    rhs = om * (np.dot(product_weights(n, N, eta + 1.0, 0), dh**2) / eta**2
                + N / eta * np.dot(product_weights(n, N, eta, 0), h**2))
    return float(lhs), float(rhs)


def hardy_check(h, eta: float, N: int, dh=None, tolerance: float = 1e-8) -> CheckOutcome:
    """``int h^2 |y|^2 rho/(1-|y|^2) <= eta^-2 int |grad h|^2 (1-|y|^2) rho + N/eta int h^2 rho``.

    ``h`` is sampled on a uniform grid of ``[0, 1]``; ``dh`` defaults to
    second-order differences.
    """
    h = np.asarray(h, dtype=float)
    if dh is None:
        from .similarity import grad
        dh = grad(h, 1.0 / (h.size - 1))
    lhs, rhs = hardy_sides(h, np.asarray(dh, dtype=float), eta, N)
    return _outcome("hardy", rhs - lhs, tolerance, {"lhs": lhs, "rhs": rhs, "eta": eta, "N": N})


# --- monotonicity --------------------------------------------------------------

@dataclass(frozen=True)
class Resolution:
    dy: float
    ds: float


def _arrays(reports):
    return reports if isinstance(reports, dict) else reports_to_arrays(reports)


def _unit_pairs(s, burn_in):
    """Index pairs ``(i, j)`` with ``s_j = s_i + 1`` and ``s_i >= burn_in``."""
    step = np.median(np.diff(s))
    per_unit = int(round(1.0 / step))
    if abs(per_unit * step - 1.0) > 1e-6:
        raise ValueError("report spacing must divide one unit of s")
    i = np.nonzero(s >= burn_in - 1e-9)[0]
    i = i[i + per_unit < s.size]
    return i, i + per_unit, per_unit


def _window_integrals(s, q, i, per_unit):
    # trapezoid over each unit window
    out = np.empty(i.size)
    for k, a in enumerate(i):
        out[k] = trapezoid(q[a:a + per_unit + 1], s[a:a + per_unit + 1])
    return out


def series_for(arr, which, params: ModelParams, config: FunctionalConfig,
               theta=None, sigma=None):
    """Lyapunov series rebuilt from its ingredients with optional corrector constants."""
    s = arr["s"]
    p = params.p
    if which == "G_eta":
        th = config.theta if theta is None else theta
        return (arr["H_eta"] + th) * np.exp(-config.eta * (p + 3.0) * s / 2.0)
    if which == "L":
        sg = config.sigma if sigma is None else sigma
        b = config.b
        return np.exp((p + 3.0) / (2.0 * (b - 1.0) * s ** (b - 1.0))) * arr["K"] + sg / s ** (b - 1.0)
    if which == "H0":
        return arr["H0"]
    raise ValueError(f"unknown functional {which!r}")


def monotonicity_check(reports, which: str, burn_in: float, params: ModelParams,
                       config: FunctionalConfig, resolution: Resolution,
                       allowance_c: float = 10.0, theta=None, sigma=None) -> CheckOutcome:
    """Non-increase of ``G_eta``, ``L`` or ``H0`` over unit steps after ``burn_in``.

    The allowance per comparison is ``c (dy^2 + ds^2) |F|``.  For ``G_eta``
    and ``L`` the decrement is also compared with the dissipation integral
    over the same window; the smallest ratio is reported as ``lambda``.
    """
    if burn_in < 1.0:
        raise ValueError("burn_in must be >= 1")
    arr = _arrays(reports)
    s = arr["s"]
    F = series_for(arr, which, params, config, theta, sigma)
    i, j, per_unit = _unit_pairs(s, burn_in)
    if i.size < 2:
        raise ValueError("series too short after burn-in for a monotonicity check")
    inc = F[j] - F[i]
    scale = np.maximum(np.abs(F[i]), np.abs(F[j]))
    allow = allowance_c * (resolution.dy**2 + resolution.ds**2) * scale
    slack = allow - inc
    details = {"functional": which, "burn_in": burn_in, "max_increase": float(inc.max()),
               "allowance_c": allowance_c, "windows": int(i.size),
               "worst_s": float(s[i][np.argmin(slack)])}
    margin = float(np.min(slack))
    if which in ("G_eta", "L"):
        diss = arr["diss_G"] if which == "G_eta" else arr["diss_L"]
        I = _window_integrals(s, diss, i, per_unit)
        ok = I > 0
        lam = float(np.min(-inc[ok] / I[ok])) if np.any(ok) else math.inf
        details["lambda_fit"] = lam
        details["dissipation_positive"] = bool(np.all(I >= 0))
        if not lam > 0:
            margin = min(margin, lam * float(np.min(I[ok])))
    if which == "G_eta":
        k = config.eta * (params.p + 3.0) / 2.0
        H = arr["H_eta"]
        ek = math.exp(-k)
        details["theta_threshold"] = float(np.max((ek * H[j] - H[i]) / (1.0 - ek)))
        details["theta"] = config.theta if theta is None else theta
    if which == "L":
        b, p = config.b, params.p
        AK = np.exp((p + 3.0) / (2.0 * (b - 1.0) * s ** (b - 1.0))) * arr["K"]
        details["sigma_threshold"] = float(np.max((AK[j] - AK[i]) / (s[i] ** (1 - b) - s[j] ** (1 - b))))
        details["sigma"] = config.sigma if sigma is None else sigma
    return _outcome(f"monotone_{which}", margin, 0.0, details)


def corrector_sweep(reports, which: str, burn_in: float, params: ModelParams,
                    config: FunctionalConfig, resolution: Resolution,
                    decades: float = 1.0, points: int = 5, allowance_c: float = 10.0) -> CheckOutcome:
    """Re-run the monotonicity check for corrector constants spread over ``decades`` upwards."""
    base = config.theta if which == "G_eta" else config.sigma
    factors = 10.0 ** np.linspace(0.0, decades, points)
    results = []
    for fac in factors:
        kw = {"theta": base * fac} if which == "G_eta" else {"sigma": base * fac}
        out = monotonicity_check(reports, which, burn_in, params, config, resolution, allowance_c, **kw)
        results.append((float(base * fac), out.passed, out.margin))
    margin = min(m for _, _, m in results)
    return _outcome(f"sweep_{which}", margin, 0.0, {"values": [r[0] for r in results],
                                                    "passed": [r[1] for r in results]})


# --- growth bounds -------------------------------------------------------------

_GROWTH = {
    "thm1_exp": lambda a, N: sphere_area(N) * a["diss_weighted_vel"],
    "thm1_exp_energy": lambda a, N: a["norm_grad_w"] + a["norm_w_p1"],
    "prop3_exp": lambda a, N: a["pot_sing_eta"],
    "thm4_poly_velocity": lambda a, N: a["vel_sing_phi"],
    "thm4_poly_gradient": lambda a, N: a["grad_phi"],
    "thm4_poly_potential": lambda a, N: a["pot_radial"],
}


POLY_PARTS = ("thm4_poly_velocity", "thm4_poly_gradient", "thm4_poly_potential")


def _ols(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef, y - A @ coef


def _bootstrap_slopes(x, y, n_boot, seed):
    coef, res = _ols(x, y)
    fit = y - res
    rng = np.random.default_rng(seed)
    out = np.empty(n_boot)
    for k in range(n_boot):
        out[k] = _ols(x, fit + rng.choice(res, size=res.size, replace=True))[0][0]
    return coef[0], out


def unit_window_averages(reports, quantity, start: float, params: ModelParams):
    arr = _arrays(reports)
    q = _GROWTH[quantity](arr, params.N) if isinstance(quantity, str) else quantity
    s = arr["s"]
    i, _, per_unit = _unit_pairs(s, start)
    i = i[::per_unit]  # disjoint windows
    return s[i], _window_integrals(s, q, i, per_unit)


def growth_bound_check(reports, bound: str, eta_or_b: float, params: ModelParams,
                       start: float = 1.0, fit_tolerance: float = 0.1,
                       n_boot: int = 200, seed: int = 0, min_windows: int = 10) -> CheckOutcome:
    """Exponential or polynomial bound on unit-window time integrals.

    Exponential bounds: ``thm1_exp`` (singular-weighted velocity),
    ``thm1_exp_energy`` (gradient plus potential on the ball) and
    ``prop3_exp`` (singular-weighted potential); the fitted slope of
    ``log A`` must not exceed ``eta (p+3)/2 + fit_tolerance``.

    Polynomial bounds: ``thm4_poly_velocity``, ``thm4_poly_gradient`` and
    ``thm4_poly_potential``; ``A / s^b`` must show no upward trend at 95%
    confidence.  ``thm4_poly`` runs all three and keeps the worst margin.
    """
    if bound == "thm4_poly":
        parts = [growth_bound_check(reports, name, eta_or_b, params, start, fit_tolerance,
                                    n_boot, seed, min_windows) for name in POLY_PARTS]
        worst = min(parts, key=lambda o: o.margin)
        return CheckOutcome("thm4_poly", all(o.passed for o in parts), worst.margin,
                            {o.name: o.details for o in parts}, 0.0)
    arr = _arrays(reports)
    if arr["s"][-1] - arr["s"][0] < 5.0:
        raise ValueError("growth checks need a series spanning at least 5 units of s")
    s0, A = unit_window_averages(arr, bound, start, params)
    details = {"bound": bound, "windows": int(A.size), "start": start}
    if A.size < min_windows:
        details["degenerate"] = "too few windows"
        return CheckOutcome(bound, False, -1.0, details, 0.0)
    if np.all(A <= 0):
        details["degenerate"] = "identically zero quantity"
        return CheckOutcome(bound, True, 0.0, details, 0.0)
    if bound.startswith("thm4"):
        b = eta_or_b
        R = A / s0**b
        slope, boots = _bootstrap_slopes(s0, R / np.mean(R), n_boot, seed)
        lo = float(np.quantile(boots, 0.05))
        details.update(slope=float(slope), slope_ci_low=lo, b=b)
        return _outcome(bound, -lo, 0.0, details)
    if np.any(A <= 0):
        details["degenerate"] = "non-positive window"
        return CheckOutcome(bound, False, -1.0, details, 0.0)
    eta = eta_or_b
    admissible = eta * (params.p + 3.0) / 2.0
    slope, boots = _bootstrap_slopes(s0, np.log(A), n_boot, seed)
    details.update(slope=float(slope), slope_ci_high=float(np.quantile(boots, 0.95)),
                   admissible=admissible, fit_tolerance=fit_tolerance)
    return _outcome(bound, admissible + fit_tolerance - slope, 0.0, details)


# --- rate window -----------------------------------------------------------------

def rate_window_check(reports, params: ModelParams, burn_in: float, span: float = 10.0,
                      floor: float = 1e-3, frame: tuple | None = None,
                      frame_tolerance: float = 1e-3) -> CheckOutcome:
    """``||w||_{H^1(0,1)} + ||w_s||_{L^2(0,1)}`` stays in ``[lo, hi]`` with ``lo > floor``.

    ``frame = (T0, T_fit)`` flags a similarity frame that does not match the
    fitted blow-up time.
    """
    if not params.a > 2.0:
        raise ValueError("the rate window needs a > 2")
    arr = _arrays(reports)
    s = arr["s"]
    step = float(np.median(np.diff(s)))
    sel = (s >= burn_in - 1e-9) & (s <= burn_in + span + 1e-9)
    if not np.any(sel) or s[sel][0] > burn_in + step or s[sel][-1] < burn_in + span - step:
        raise ValueError(f"series does not cover s in [{burn_in}, {burn_in + span}]")
    norm = arr["norm_H1L2"][sel]
    lo, hi = float(norm.min()), float(norm.max())
    details = {"lo": lo, "hi": hi, "floor": floor, "s_range": [burn_in, burn_in + span]}
    margin = lo - floor
    if not math.isfinite(hi):
        margin = -1.0
    if frame is not None:
        T0, T_fit = frame
        mismatch = abs(T0 - T_fit)
        details.update(T0=T0, T_fit=T_fit, frame_mismatch=mismatch)
        if mismatch > frame_tolerance * max(1.0, abs(T_fit)):
            details["frame_flag"] = "T0 differs from the fitted blow-up time"
            margin = min(margin, -mismatch)
    return _outcome("rate_window", margin, 0.0, details)


# --- ODE-level rate ------------------------------------------------------------

def ode_rate_check(params: ModelParams, u0: float, u1: float, threshold: float = 1e8,
                   decades: float = 3.0, window=None, nodes: int = 9) -> CheckOutcome:
    """Two-sided bound on ``(T-t)^alpha max|u|`` for spatially constant data.

    ``window = (lo, hi)`` in units of ``kappa0`` additionally asserts the
    ratio stays inside that band.
    """
    grid = RadialGrid.uniform(nodes, 3.0)
    st = initial_state("constant", grid, params, u0=u0, u1=u1)
    traj, est = run_until_blowup(st, params, threshold=threshold)
    if est is None:
        return CheckOutcome("ode_rate", False, -1.0, {"outcome": traj.outcome})
    rem = est.remaining(np.asarray(traj.t_hi), np.asarray(traj.t_lo))
    out = rate_ratio_check(rem, np.asarray(traj.sup), params, decades, window)
    out.details.update(T=est.T, fit_residual=est.residual)
    return out


def rate_ratio_check(remaining, sup, params: ModelParams, decades: float = 3.0,
                     window=None) -> CheckOutcome:
    """``(T-t)^alpha max|u|`` over the last ``decades`` of ``T - t`` of a recorded history."""
    rem = np.asarray(remaining, dtype=float)
    sup = np.asarray(sup, dtype=float)
    ok = rem > 0
    if not np.any(ok):
        return CheckOutcome("ode_rate", False, -1.0, {"degenerate": "no time before T"})
    sel = ok & (rem <= rem[ok].min() * 10.0**decades)
    ratio = rem[sel] ** params.alpha * sup[sel]
    inf, sup_r = float(ratio.min()), float(ratio.max())
    k0 = kappa0(params)
    details = {"inf": inf, "sup": sup_r, "kappa0": k0, "decades": decades,
               "samples": int(sel.sum())}
    margin = inf if math.isfinite(sup_r) else -1.0
    if window is not None:
        lo, hi = window
        details["window"] = [lo * k0, hi * k0]
        margin = min(margin, inf - lo * k0, hi * k0 - sup_r)
    return _outcome("ode_rate", margin, 0.0, details)
