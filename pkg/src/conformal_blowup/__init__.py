"""Numerical laboratory for blow-up of the conformal semilinear wave equation
with a log-damped perturbation, ``u_tt = Laplace u + |u|^{p-1} u + f(u)``.

The physical solver integrates radial data up to blow-up, the similarity
solver continues the solution in self-similar variables, and the
functionals/verifier modules evaluate Lyapunov functionals, dissipation
identities and growth bounds along the computed trajectories.
"""

__version__ = "0.1.0"
