"""Weighted energies, Lyapunov functionals and their exact dissipation identities.

Conventions
-----------
Ball integrals (``E_eta``, ``J_eta``, ``H_eta``, ``G_eta`` and the ball
quantities of the exponential growth bounds) are radial-line integrals times
the sphere area ``|S^{N-1}| = 2 pi^{N/2} / Gamma(N/2)``.  The functionals
built on ``phi(y, s) = y^{N-1}(1-y^2)^{s^-b}``, on ``Psi_eta`` and on
``y^{N-1}`` (``E, J, K, L, N_eta, E0, H0``) are radial-line integrals without
that factor.

Identity residuals compare a centred difference of a functional along a
computed trajectory with the exact right-hand side of its dissipation
identity evaluated at the centre state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .model import ModelParams, scaled_F, scaled_f
from .quadrature import product_weights, sphere_area
from .similarity import SimilarityState, boundary_velocity, grad

NORMALIZATION = "ball integrals x |S^(N-1)| = 2 pi^(N/2)/Gamma(N/2); phi/Psi/y^(N-1) functionals on the radial line"


@dataclass(frozen=True)
class FunctionalConfig:
    """Weight parameters and corrector constants.

    ``theta`` and ``sigma`` left as ``None`` are resolved from the initial
    state by :func:`resolve_config`.
    """

    eta: float = 0.5
    b: float = 1.5
    theta: float | None = None
    sigma: float | None = None

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if not self.b > 1.0:
            raise ValueError(f"b must exceed 1, got {self.b}")
        for name in ("theta", "sigma"):
            v = getattr(self, name)
            if v is not None and not v >= 0.0:
                raise ValueError(f"{name} must be >= 0, got {v}")

    def check_against(self, params: ModelParams):
        if not self.b < params.a:
            raise ValueError(f"b={self.b} must be below a={params.a}")


@dataclass
class FunctionalReport:
    s: float
    E_eta: float
    J_eta: float
    H_eta: float
    G_eta: float
    E: float
    J: float
    K: float
    L: float
    N_eta: float
    E0: float
    H0: float
    diss_weighted_vel: float
    norm_grad_w: float
    norm_w_p1: float
    norm_H1L2: float
    # growth-bound and dissipation integrands
    pot_sing_eta: float = 0.0
    vel_sing_phi: float = 0.0
    grad_phi: float = 0.0
    pot_radial: float = 0.0
    diss_G: float = 0.0
    diss_L: float = 0.0
    boundary_vel_sq: float = 0.0

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]

    def row(self):
        return [getattr(self, c) for c in self.columns()]


class _Fields:
    """Derived fields of one state, shared between functionals."""

    def __init__(self, state: SimilarityState, params: ModelParams):
        self.state = state
        self.params = params
        self.s = state.s
        self.y = state.grid.nodes
        self.n = state.grid.n
        self.w = state.w
        self.v = state.ws
        self.wy = grad(state.w, state.grid.spacing)
        p = params.p
        self.pot = np.abs(self.w) ** (p + 1.0)
        self.sF = scaled_F(self.w, self.s, params)
        self.wsf = self.w * scaled_f(self.w, self.s, params)

    def q(self, values, c, singular=False, log_power=0, N=None):
        N = self.params.N if N is None else N
        cc = float(c) - (1.0 if singular else 0.0)
        return float(np.dot(product_weights(self.n, int(N), cc, int(log_power)), values))

    def energy(self, c, log_power=0):
        """Energy density integrated against ``y^{N-1}(1-y^2)^c log^m(1-y^2)``."""
        p = self.params.p
        dens = (0.5 * self.v**2 + 0.5 * self.wy**2 * (1.0 - self.y**2)
                + (p + 1.0) / (p - 1.0) ** 2 * self.w**2 - self.pot / (p + 1.0) - self.sF)
        return self.q(dens, c, log_power=log_power)


def energy_terms(state: SimilarityState, params: ModelParams, c: float) -> dict:
    """Separate pieces of the energy against ``y^{N-1}(1-y^2)^c`` (radial line)."""
    fl = _Fields(state, params)
    p = params.p
    return {
        "kinetic": fl.q(0.5 * fl.v**2, c),
        "gradient": fl.q(0.5 * fl.wy**2 * (1.0 - fl.y**2), c),
        "mass": (p + 1.0) / (p - 1.0) ** 2 * fl.q(fl.w**2, c),
        "potential": -fl.q(fl.pot, c) / (p + 1.0),
        "perturbation": -fl.q(fl.sF, c),
    }


def _G_family(fl: _Fields, config: FunctionalConfig):
    p, N, eta, s = fl.params.p, fl.params.N, config.eta, fl.s
    om = sphere_area(N)
    E = om * fl.energy(eta)
    J = om * (-eta * fl.q(fl.w * fl.v, eta) + 0.5 * N * eta * fl.q(fl.w**2, eta))
    H = E + J
    damp = math.exp(-eta * (p + 3.0) * s / 2.0)
    theta = config.theta or 0.0
    return E, J, H, H * damp + theta * damp


def _check_s(s):
    if s < 1.0:
        raise ValueError(f"phi-weighted functionals need s >= 1, got {s}")


def _KL_family(fl: _Fields, config: FunctionalConfig):
    p, b, s = fl.params.p, config.b, fl.s
    _check_s(s)
    c = s ** (-b)
    E = fl.energy(c)
    J = -c * fl.q(fl.w * fl.v, c)
    K = E + J
    sigma = config.sigma or 0.0
    L = math.exp((p + 3.0) / (2.0 * (b - 1.0) * s ** (b - 1.0))) * K + sigma / s ** (b - 1.0)
    return E, J, K, L


def _sing_y2(fl: _Fields, values, c):
    """``int values y^2/(1-y^2)`` against ``(1-y^2)^c``, written as
    ``1/(1-y^2) - 1`` so the polynomial factor goes into the exact weights."""
    return fl.q(values, c, singular=True) - fl.q(values, c)


def _N_eta(fl: _Fields, eta):
    yw = fl.y * fl.wy
    return fl.q(yw**2 + yw * fl.v, eta)


def _E0_H0(fl: _Fields, b):
    a, s = fl.params.a, fl.s
    if not a > 2.0:
        raise ValueError(f"H0 needs a > 2 so that its corrector decays, got a={a}")
    _check_s(s)
    E0 = fl.energy(0.0)
    return E0, E0 + s ** (-(a - b - 1.0) / 2.0)


def eval_E_eta(state, config: FunctionalConfig, params: ModelParams) -> float:
    return _G_family(_Fields(state, params), config)[0]


def eval_G_family(state, config: FunctionalConfig, params: ModelParams):
    """``(E_eta, J_eta, H_eta, G_eta)`` as ball integrals."""
    return _G_family(_Fields(state, params), config)


def eval_KL_family(state, config: FunctionalConfig, params: ModelParams):
    """``(E, J, K, L)`` against the time-dependent weight ``phi``."""
    return _KL_family(_Fields(state, params), config)


def eval_N_eta(state, config: FunctionalConfig, params: ModelParams) -> float:
    return _N_eta(_Fields(state, params), config.eta)


def eval_E0_H0(state, params: ModelParams, b: float | None = None):
    """Unweighted energy ``E0`` and ``H0 = E0 + s^{-(a-b-1)/2}`` (default ``b = a/2``)."""
    b = params.a / 2.0 if b is None else b
    return _E0_H0(_Fields(state, params), b)


# --- right-hand sides of the dissipation identities -------------------------

def _sigma0(fl: _Fields, c):
    p = fl.params.p
    return (2.0 * (p + 1.0) / (p - 1.0) * fl.q(fl.sF, c)
            - 2.0 / (p - 1.0) * fl.q(fl.wsf, c))


def rhs_E_eta(state, config: FunctionalConfig, params: ModelParams) -> float:
    """Exact ``dE_eta/ds`` of the weighted energy (ball convention)."""
    fl = _Fields(state, params)
    eta = config.eta
    om = sphere_area(params.N)
    return om * (-2.0 * eta * _sing_y2(fl, fl.v**2, eta)
                 + 2.0 * eta * fl.q(fl.v * fl.y * fl.wy, eta)
                 + _sigma0(fl, eta))


def sigma_terms_phi(state, params: ModelParams, b: float) -> list:
    """The six remainder terms of ``dE/ds`` for the ``phi``-weighted energy."""
    fl = _Fields(state, params)
    return _sigma2(fl, b)


def _sigma2(fl: _Fields, b):
    p, s = fl.params.p, fl.s
    _check_s(s)
    c = s ** (-b)
    k = b / s ** (b + 1.0)
    e = (p + 1.0) / (p - 1.0) ** 2
    return [
        k / (p + 1.0) * fl.q(fl.pot, c, log_power=1),
        _sigma0(fl, c),
        -0.5 * k * fl.q(fl.v**2, c, log_power=1),
        -0.5 * k * fl.q(fl.wy**2 * (1.0 - fl.y**2), c, log_power=1),
        -k * e * fl.q(fl.w**2, c, log_power=1),
        k * fl.q(fl.sF, c, log_power=1),
    ]


def rhs_E_phi(state, config: FunctionalConfig, params: ModelParams) -> float:
    """Exact ``dE/ds`` for the ``phi``-weighted energy, including weight drift."""
    fl = _Fields(state, params)
    _check_s(fl.s)
    c = fl.s ** (-config.b)
    main = (-2.0 * c * _sing_y2(fl, fl.v**2, c)
            + 2.0 * c * fl.q(fl.v * fl.wy * fl.y, c))
    return main + sum(_sigma2(fl, config.b))


def rhs_N_eta(state, config: FunctionalConfig, params: ModelParams) -> float:
    """Exact ``dN_eta/ds`` from the Pohozaev multiplier ``y w_y``."""
    fl = _Fields(state, params)
    p, N, eta = params.p, params.N, config.eta
    yw = fl.y * fl.wy
    q = fl.q
    return ((N - 2.0) / 2.0 * q(fl.wy**2, eta)
            + (eta - N / 2.0) * q(yw**2, eta)
            - N / 2.0 * q(fl.v**2, eta)
            + eta * _sing_y2(fl, fl.v**2, eta)
            - 2.0 * (p + 1.0) / (p - 1.0) ** 2 * q(yw * fl.w, eta)
            - (p + 3.0) / (p - 1.0) * q(yw * fl.v, eta)
            - N / (p + 1.0) * q(fl.pot, eta)
            + 2.0 * eta / (p + 1.0) * _sing_y2(fl, fl.pot, eta)
            - N * q(fl.sF, eta)
            + 2.0 * eta * _sing_y2(fl, fl.sF, eta))


def rhs_E0(state, params: ModelParams) -> float:
    """Exact ``dE0/ds = -w_s(1)^2 + Sigma_4``."""
    fl = _Fields(state, params)
    return -boundary_velocity(state) ** 2 + _sigma0(fl, 0.0)


def _E_phi(state, config, params):
    return _KL_family(_Fields(state, params), config)[0]


def _E0(state, params):
    return _Fields(state, params).energy(0.0)


IDENTITIES = {
    "E_eta": (lambda st, cfg, prm: eval_E_eta(st, cfg, prm), rhs_E_eta),
    "E_phi": (_E_phi, rhs_E_phi),
    "N_eta": (lambda st, cfg, prm: eval_N_eta(st, cfg, prm), rhs_N_eta),
    "E0": (lambda st, cfg, prm: _E0(st, prm), lambda st, cfg, prm: rhs_E0(st, prm)),
}


def identity_series(window, which: str, config: FunctionalConfig, params: ModelParams,
                    stencil: int = 3):
    """Centred-difference derivative, exact right-hand side and residual.

    ``window`` is a sequence of at least ``stencil`` states (3 or 5) with
    uniform spacing in ``s``.  The 5-point difference removes the
    ``O(ds^2)`` error that functionals with an explicit ``s`` dependence
    carry even along a steady state.  Returns arrays ``(s, lhs, rhs,
    residual)`` at the states where the stencil fits.
    """
    if stencil not in (3, 5):
        raise ValueError("stencil must be 3 or 5")
    if len(window) < stencil:
        raise ValueError(f"identity residuals need at least {stencil} consecutive states")
    value, rhs = IDENTITIES[which]
    s = np.array([st.s for st in window])
    ds = np.diff(s)
    if np.max(np.abs(ds - ds.mean())) > 1e-9 * abs(ds.mean()):
        raise ValueError("states must be uniformly spaced in s")
    vals = np.array([value(st, config, params) for st in window])
    if stencil == 3:
        lhs = (vals[2:] - vals[:-2]) / (s[2:] - s[:-2])
    else:
        h = (s[4:] - s[:-4]) / 4.0
        lhs = (vals[:-4] - 8.0 * vals[1:-3] + 8.0 * vals[3:-1] - vals[4:]) / (12.0 * h)
    k = stencil // 2
    inner = window[k:len(window) - k]
    r = np.array([rhs(st, config, params) for st in inner])
    return s[k:len(s) - k], lhs, r, lhs - r


def _max_residual(window, which, config, params):
    return float(np.max(np.abs(identity_series(window, which, config, params)[3])))


def identity_residual_E_eta(window, config: FunctionalConfig, params: ModelParams) -> float:
    return _max_residual(window, "E_eta", config, params)


def identity_residual_E_phi(window, config: FunctionalConfig, params: ModelParams) -> float:
    return _max_residual(window, "E_phi", config, params)


def identity_residual_pohozaev(window, config: FunctionalConfig, params: ModelParams) -> float:
    return _max_residual(window, "N_eta", config, params)


def identity_residual_E0(window, params: ModelParams) -> float:
    return _max_residual(window, "E0", FunctionalConfig(), params)


# --- full report ---------------------------------------------------------------

def resolve_config(config: FunctionalConfig, initial: SimilarityState,
                   params: ModelParams) -> FunctionalConfig:
    """Fill default ``theta = 10|H_eta|`` and ``sigma = 10|K|/(b-1)`` at the initial state."""
    config.check_against(params)
    fl = _Fields(initial, params)
    theta, sigma = config.theta, config.sigma
    if theta is None:
        theta = 10.0 * abs(_G_family(fl, replace(config, theta=0.0))[2])
    if sigma is None:
        s = max(initial.s, 1.0)
        fl1 = fl if initial.s >= 1.0 else _Fields(replace(initial, s=s), params)
        sigma = 10.0 / (config.b - 1.0) * abs(_KL_family(fl1, replace(config, sigma=0.0))[2])
    return replace(config, theta=float(theta), sigma=float(sigma))


def evaluate_report(state: SimilarityState, config: FunctionalConfig,
                    params: ModelParams, b_H0: float | None = None) -> FunctionalReport:
    """All functionals and growth-bound integrands at one similarity time."""
    fl = _Fields(state, params)
    p, N, eta, b, s = params.p, params.N, config.eta, config.b, state.s
    om = sphere_area(N)
    E_eta, J_eta, H_eta, G_eta = _G_family(fl, config)
    E, J, K, L = _KL_family(fl, config)
    E0, H0 = _E0_H0(fl, params.a / 2.0 if b_H0 is None else b_H0)
    c = s ** (-b)
    y2 = fl.y**2
    one = 1.0 - y2
    vel_sing = fl.q(fl.v**2, eta, singular=True)
    pot_eta = fl.q(fl.pot, eta)
    grad_eta = fl.q(fl.wy**2 * one, eta)
    diss_G = math.exp(-eta * (p + 3.0) * s / 2.0) * om * (vel_sing + pot_eta + grad_eta)
    grad_phi = fl.q(fl.wy**2 * one, c)
    diss_L = s ** (-b) * (fl.q(fl.pot, c) + _sing_y2(fl, fl.v**2, c) + grad_phi)
    h1 = fl.q(fl.w**2, 0.0, N=1) + fl.q(fl.wy**2, 0.0, N=1)
    l2 = fl.q(fl.v**2, 0.0, N=1)
    return FunctionalReport(
        s=s, E_eta=E_eta, J_eta=J_eta, H_eta=H_eta, G_eta=G_eta,
        E=E, J=J, K=K, L=L, N_eta=_N_eta(fl, eta), E0=E0, H0=H0,
        diss_weighted_vel=vel_sing,
        norm_grad_w=om * fl.q(fl.wy**2, 0.0),
        norm_w_p1=om * fl.q(fl.pot, 0.0),
        norm_H1L2=math.sqrt(max(h1, 0.0)) + math.sqrt(max(l2, 0.0)),
        pot_sing_eta=fl.q(fl.pot, eta, singular=True),
        vel_sing_phi=fl.q(fl.v**2, c, singular=True),
        grad_phi=grad_phi,
        pot_radial=fl.q(fl.pot, 0.0),
        diss_G=diss_G, diss_L=diss_L,
        boundary_vel_sq=boundary_velocity(state) ** 2,
    )


def reports_to_arrays(reports) -> dict:
    """Column-oriented view of a report series."""
    return {c: np.array([getattr(r, c) for r in reports]) for c in FunctionalReport.columns()}
