"""Problem definition: parameters, the log-damped nonlinearity and its antiderivative.

The perturbation is ``f(u) = |u|^p / log^a(2 + u^2)`` with ``p`` the conformal
exponent ``1 + 4/(N-1)``.  ``F`` is its antiderivative vanishing at zero.

Two evaluators are provided for ``F``:

* :func:`F_eval` integrates adaptively (QUADPACK) for a single argument and
  raises if the requested tolerance is not met.
* :func:`F_array` evaluates on arrays through the scaled function
  ``G(x) = F(x) / x^{p+1}``, anchored on a memoized table of checkpoints at
  ``x = 2^k``.  This also gives overflow-free access to the rescaled
  quantities needed in similarity variables.
"""
from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

LOG2 = math.log(2.0)


class QuadratureFailure(RuntimeError):
    """Raised when adaptive quadrature misses its tolerance."""


def conformal_exponent(N: int) -> float:
    """Return the conformal exponent ``1 + 4/(N-1)``."""
    if int(N) != N or N < 2:
        raise ValueError(f"dimension N must be an integer >= 2, got {N!r}")
    return 1.0 + 4.0 / (N - 1)


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the radial problem.

    Attributes
    ----------
    N : int
        Spatial dimension.
    p : float
        Power of the focusing term.
    a : float
        Logarithmic exponent of the perturbation.
    M : float
        Perturbation scale, pinned to 1.
    perturbation_on : bool
        When false, ``f`` and ``F`` vanish identically.
    """

    N: int
    p: float
    a: float = 3.0
    M: float = 1.0
    perturbation_on: bool = True

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"N must be an integer >= 2, got {self.N!r}")
        if not self.p > 1.0:
            raise ValueError(f"p must exceed 1, got {self.p!r}")
        if not self.a > 1.0:
            raise ValueError(f"a must exceed 1, got {self.a!r}")
        if self.M != 1.0:
            raise ValueError("only the canonical perturbation scale M=1 is supported")

    @classmethod
    def conformal(cls, N: int, a: float = 3.0, perturbation_on: bool = True) -> "ModelParams":
        return cls(N=int(N), p=conformal_exponent(N), a=float(a), perturbation_on=perturbation_on)

    @property
    def alpha(self) -> float:
        """Similarity scaling exponent ``2/(p-1)``."""
        return 2.0 / (self.p - 1.0)


@dataclass(frozen=True)
class ReferenceConstants:
    kappa0: float
    p: float

    def slope_bound(self, eta: float) -> float:
        """Admissible exponential growth rate ``eta (p+3)/2``."""
        return eta * (self.p + 3.0) / 2.0


def kappa0(params: ModelParams) -> float:
    """Amplitude of the flat steady state, ``kappa0^(p-1) = 2(p+1)/(p-1)^2``."""
    p = params.p
    return (2.0 * (p + 1.0) / (p - 1.0) ** 2) ** (1.0 / (p - 1.0))


def reference_constants(params: ModelParams) -> ReferenceConstants:
    return ReferenceConstants(kappa0=kappa0(params), p=params.p)


def _log_2_plus_sq(logx):
    # log(2 + x^2) from log|x|, safe for huge x
    return np.logaddexp(LOG2, 2.0 * logx)


def f_eval(u, params: ModelParams):
    """Perturbation ``|u|^p / log^a(2+u^2)``; zero when switched off."""
    u = np.asarray(u, dtype=float)
    if not params.perturbation_on:
        out = np.zeros_like(u)
    else:
        au = np.abs(u)
        out = au ** params.p / np.log(2.0 + au * au) ** params.a
    return out[()] if out.ndim == 0 else out


def scaled_f(w, s: float, params: ModelParams):
    """``e^{-p alpha s} f(e^{alpha s} w)`` evaluated without overflow."""
    w = np.asarray(w, dtype=float)
    if not params.perturbation_on:
        return np.zeros_like(w)
    aw = np.abs(w)
    with np.errstate(divide="ignore"):
        lx = np.log(aw) + params.alpha * s
    return aw ** params.p / _log_2_plus_sq(lx) ** params.a


def F_eval(u: float, params: ModelParams, rtol: float = 1e-12) -> float:
    """Antiderivative ``F(u) = int_0^u f`` by adaptive Gauss-Kronrod quadrature.

    Raises
    ------
    QuadratureFailure
        If QUADPACK reports a problem or the error estimate exceeds ``rtol``.
    """
    u = float(u)
    if not math.isfinite(u):
        raise ValueError("F_eval requires a finite argument")
    if not params.perturbation_on or u == 0.0:
        return 0.0
    x = abs(u)
    p, a = params.p, params.a

    def integrand(v):
        return v ** p / math.log(2.0 + v * v) ** a

    # geometric breakpoints keep each panel's dynamic range modest
    pts = [x * 2.0 ** (-k) for k in range(1, min(60, max(1, int(math.log2(x)) + 8)))] if x > 1 else []
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(integrand, 0.0, x, points=pts or None,
                                      epsabs=0.0, epsrel=rtol, limit=500)
        except integrate.IntegrationWarning as exc:
            raise QuadratureFailure(f"F({u}) did not converge: {exc}") from None
    if not (math.isfinite(val) and err <= max(rtol * abs(val), 1e-300) * 10):
        raise QuadratureFailure(f"F({u}) error estimate {err:.3e} above tolerance")
    return math.copysign(val, u)


_GJ_NODES = 24
_GL_NODES = 24
_KMAX = 1100  # table covers x up to 2^1100 via logs


class _ScaledAntiderivative:
    """Table of ``G(x) = x^{-(p+1)} F(x)`` at ``x_k = 2^k``.

    Immutable once built; construction happens under a module lock.
    """

    def __init__(self, p: float, a: float):
        self.p, self.a = p, a
        t, wt = special.roots_jacobi(_GJ_NODES, 0.0, p)
        # weight t^p on [0,1]
        self.gj_t = 0.5 * (t + 1.0)
        self.gj_w = wt * 2.0 ** (-(p + 1.0))
        x, wx = special.roots_legendre(_GL_NODES)
        self.gl_x, self.gl_w = x, wx
        G = np.empty(_KMAX + 1)
        G[0] = self._small(np.array([0.0]))[0]  # log x = 0 -> x = 1
        ratio = 2.0 ** (-(p + 1.0))
        for k in range(1, _KMAX + 1):
            lx = k * LOG2
            val, _ = integrate.quad(
                lambda tau: tau ** p / _log_2_plus_sq(lx + math.log(tau)) ** a,
                0.5, 1.0, epsabs=0.0, epsrel=2e-14, limit=200)
            G[k] = ratio * G[k - 1] + val
        G.setflags(write=False)
        self.G = G

    def _small(self, logx):
        # x <= 1: Gauss-Jacobi in t with weight t^p
        lt = np.log(self.gj_t)
        vals = _log_2_plus_sq(logx[:, None] + lt[None, :]) ** (-self.a)
        return vals @ self.gj_w

    def __call__(self, logx):
        """Evaluate ``G`` at ``x = exp(logx)`` (array)."""
        logx = np.asarray(logx, dtype=float)
        out = np.empty_like(logx)
        small = logx <= 0.0
        if np.any(small):
            out[small] = self._small(logx[small])
        big = ~small
        if np.any(big):
            lx = logx[big]
            k = np.minimum(np.floor(lx / LOG2), _KMAX).astype(int)
            # tau from x_k/x to 1
            lo_log = k * LOG2 - lx
            lo = np.exp(lo_log)
            half = 0.5 * (1.0 - lo)
            tau = 0.5 * (1.0 + lo)[:, None] + half[:, None] * self.gl_x[None, :]
            integrand = tau ** self.p * _log_2_plus_sq(lx[:, None] + np.log(tau)) ** (-self.a)
            tail = (integrand @ self.gl_w) * half
            out[big] = np.exp((self.p + 1.0) * lo_log) * self.G[k] + tail
        return out


_TABLES: dict = {}
_TABLE_LOCK = threading.Lock()


def _table(params: ModelParams) -> _ScaledAntiderivative:
    key = (params.p, params.a)
    tab = _TABLES.get(key)
    if tab is None:
        with _TABLE_LOCK:
            tab = _TABLES.get(key)
            if tab is None:
                tab = _ScaledAntiderivative(*key)
                _TABLES[key] = tab
    return tab


def F_array(u, params: ModelParams):
    """Vectorized ``F`` using the memoized checkpoint table."""
    u = np.asarray(u, dtype=float)
    if not params.perturbation_on:
        return np.zeros_like(u)
    au = np.abs(u)
    out = np.zeros_like(au)
    nz = au > 0
    if np.any(nz):
        G = _table(params)(np.log(au[nz]))
        out[nz] = np.sign(u[nz]) * au[nz] ** (params.p + 1.0) * G
    return out


def scaled_F(w, s: float, params: ModelParams):
    """``e^{-(p+1) alpha s} F(e^{alpha s} w)`` without forming the large argument."""
    w = np.asarray(w, dtype=float)
    if not params.perturbation_on:
        return np.zeros_like(w)
    aw = np.abs(w)
    out = np.zeros_like(aw)
    nz = aw > 0
    if np.any(nz):
        G = _table(params)(np.log(aw[nz]) + params.alpha * s)
        out[nz] = np.sign(w[nz]) * aw[nz] ** (params.p + 1.0) * G
    return out
