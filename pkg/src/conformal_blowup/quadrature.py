"""Radial grids and quadrature against degenerate weights on [0, 1].

Integrals have the form ``int_0^1 g(y) y^{N-1} (1-y^2)^c [log(1-y^2)]^m dy``
with ``c > -1``.  ``g`` is sampled on a uniform grid and replaced by its
piecewise-linear interpolant; the weight is integrated exactly against each
hat function (product integration).  Interior cells use Gauss-Legendre, the
last cell uses QUADPACK's algebraic/logarithmic endpoint rules.  Constants
are integrated to roundoff and smooth ``g`` converges at second order
whatever the endpoint exponent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special


class DivergentIntegral(ValueError):
    """Endpoint exponent at y=1 is not integrable."""


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Uniform radial grid on ``[0, domain_end]``."""

    nodes: np.ndarray
    domain_end: float

    def __post_init__(self):
        y = np.asarray(self.nodes, dtype=float)
        if y.ndim != 1 or y.size < 3:
            raise ValueError("grid needs at least 3 nodes")
        if y[0] != 0.0 or y[-1] != self.domain_end or np.any(np.diff(y) <= 0):
            raise ValueError("nodes must increase strictly from 0 to domain_end")
        y = y.copy()
        y.setflags(write=False)
        object.__setattr__(self, "nodes", y)

    @classmethod
    def uniform(cls, n: int, domain_end: float = 1.0) -> "RadialGrid":
        y = np.linspace(0.0, domain_end, int(n))
        y[-1] = domain_end
        return cls(y, float(domain_end))

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def spacing(self) -> float:
        return self.domain_end / (self.n - 1)


_KINDS = ("static_eta", "dynamic_sb", "pohozaev_psi", "plain_radial")


@dataclass(frozen=True)
class WeightSpec:
    """Which weight multiplies the integrand.

    ``static_eta`` is ``rho_eta = (1-y^2)^eta``; ``dynamic_sb`` is
    ``phi = y^{N-1}(1-y^2)^{s^{-b}}``; ``pohozaev_psi`` is
    ``Psi_eta = y^{N-1}(1-y^2)^eta``; ``plain_radial`` is ``y^{N-1}``.
    """

    kind: str
    eta: float | None = None
    b: float | None = None
    a: float | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.kind in ("static_eta", "pohozaev_psi"):
            # eta=1 is allowed for closed-form checks
            if self.eta is None or not 0.0 < self.eta <= 1.0:
                raise ValueError(f"{self.kind} needs 0 < eta < 1, got {self.eta!r}")
        if self.kind == "dynamic_sb":
            if self.b is None or not self.b > 1.0:
                raise ValueError(f"dynamic_sb needs b > 1, got {self.b!r}")
            if self.a is not None and not self.b < self.a:
                raise ValueError(f"dynamic_sb needs b < a, got b={self.b}, a={self.a}")

    @classmethod
    def static_eta(cls, eta):
        return cls("static_eta", eta=float(eta))

    @classmethod
    def dynamic_sb(cls, b, a=None):
        return cls("dynamic_sb", b=float(b), a=None if a is None else float(a))

    @classmethod
    def pohozaev_psi(cls, eta):
        return cls("pohozaev_psi", eta=float(eta))

    @classmethod
    def plain_radial(cls):
        return cls("plain_radial")

    def exponent(self, s=None) -> float:
        """Power ``c`` of ``(1-y^2)`` carried by the weight."""
        if self.kind in ("static_eta", "pohozaev_psi"):
            return self.eta
        if self.kind == "dynamic_sb":
            if s is None or s < 1.0:
                raise ValueError(f"dynamic_sb weight requires s >= 1, got {s!r}")
            return s ** (-self.b)
        return 0.0


def weight_value(spec: WeightSpec, y, s=None, N: int = 1):
    """Pointwise weight value.  ``rho_eta`` carries no ``y^{N-1}``; the others do."""
    y = np.asarray(y, dtype=float)
    if np.any((y < 0.0) | (y > 1.0)):
        raise ValueError("y must lie in [0, 1]")
    c = spec.exponent(s)
    rho = np.power(1.0 - y * y, c)
    if spec.kind == "static_eta":
        out = rho
    else:
        out = y ** (N - 1) * rho
    return out[()] if out.ndim == 0 else out


_GL = special.roots_legendre(12)


def _last_cell_moments(y0, y1, N, c, m):
    """Exact moments of the two hat functions on the cell touching y=1."""
    h = y1 - y0
    out = []
    for basis in (lambda y: (y1 - y) / h, lambda y: (y - y0) / h):
        def smooth(y, extra=lambda y: 1.0):
            return basis(y) * y ** (N - 1) * (1.0 + y) ** c * extra(y)

        if m == 0:
            val = integrate.quad(smooth, y0, y1, weight="alg", wvar=(0.0, c),
                                 epsabs=0.0, epsrel=1e-13)[0]
        else:
            # log(1-y^2) = log(1-y) + log(1+y)
            v1 = integrate.quad(smooth, y0, y1, weight="alg-logb", wvar=(0.0, c),
                                epsabs=0.0, epsrel=1e-13)[0]
            v2 = integrate.quad(lambda y: smooth(y, lambda t: math.log1p(t)), y0, y1,
                                weight="alg", wvar=(0.0, c), epsabs=0.0, epsrel=1e-13)[0]
            val = v1 + v2
        out.append(val)
    return out


@lru_cache(maxsize=512)
def product_weights(n: int, N: int, c: float, m: int = 0) -> np.ndarray:
    """Node weights for ``int_0^1 g y^{N-1}(1-y^2)^c log^m(1-y^2) dy`` on ``n`` uniform nodes."""
    if not c > -1.0:
        raise DivergentIntegral(f"endpoint exponent {c} <= -1 is not integrable")
    y = np.linspace(0.0, 1.0, n)
    h = 1.0 / (n - 1)
    x, wx = _GL
    # interior cells 0..n-3
    y0 = y[:-2]
    xi = y0[:, None] + 0.5 * h * (1.0 + x[None, :])
    W = xi ** (N - 1) * (1.0 - xi * xi) ** c
    if m:
        W = W * np.log1p(-xi * xi) ** m
    t = 0.5 * (1.0 + x)
    A = 0.5 * h * (W * (1.0 - t)[None, :]) @ wx
    B = 0.5 * h * (W * t[None, :]) @ wx
    q = np.zeros(n)
    q[:-2] += A
    q[1:-1] += B
    if m == 0 and float(c).is_integer():
        # polynomial integrand: Gauss-Legendre is exact
        xi = y[-2] + 0.5 * h * (1.0 + x)
        W = xi ** (N - 1) * (1.0 - xi * xi) ** c
        a_last = 0.5 * h * np.dot(W * (1.0 - t), wx)
        b_last = 0.5 * h * np.dot(W * t, wx)
    else:
        a_last, b_last = _last_cell_moments(y[-2], 1.0, N, c, m)
    q[-2] += a_last
    q[-1] += b_last
    q.setflags(write=False)
    return q


def integrate_weighted(values, grid: RadialGrid, spec: WeightSpec, N: int, s=None,
                       singular_divisor: bool = False, log_power: int = 0) -> float:
    """Radial-line integral of ``values`` against the weight selected by ``spec``.

    Computes ``int_0^1 values(y) w(y) y^{N-1} / (1-y^2)^d log^m(1-y^2) dy``
    where ``w`` is the ``(1-y^2)`` power of ``spec``, ``d`` is 1 when
    ``singular_divisor`` is set and ``m = log_power``.  For ``static_eta``
    the ``y^{N-1}`` factor is the polar-coordinate Jacobian; for the other
    kinds it is already part of the weight.  No sphere-area factor is
    applied.
    """
    if grid.domain_end != 1.0:
        raise ValueError("weighted quadrature is defined on [0, 1] grids")
    values = np.asarray(values, dtype=float)
    if values.shape != grid.nodes.shape:
        raise ValueError("values must be sampled on the grid")
    c = spec.exponent(s) - (1.0 if singular_divisor else 0.0)
    q = product_weights(grid.n, int(N), float(c), int(log_power))
    return float(np.dot(q, values))


def sphere_area(N: int) -> float:
    """Area of the unit sphere in R^N, ``2 pi^{N/2} / Gamma(N/2)``."""
    return 2.0 * math.pi ** (N / 2.0) / math.gamma(N / 2.0)


def beta_oracle(alpha: float, beta: float) -> float:
    """Euler Beta function from log-gamma (test oracle)."""
    if not (alpha > 0 and beta > 0):
        raise ValueError("beta_oracle needs positive arguments")
    return math.exp(math.lgamma(alpha) + math.lgamma(beta) - math.lgamma(alpha + beta))
