import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from conformal_blowup.functionals import (FunctionalConfig, FunctionalReport, energy_terms,
                                          eval_E0_H0, eval_E_eta, eval_G_family, eval_KL_family,
                                          eval_N_eta, evaluate_report, identity_residual_E0,
                                          identity_residual_E_eta, identity_residual_E_phi,
                                          identity_residual_pohozaev, identity_series,
                                          resolve_config, rhs_E0, rhs_E_eta, rhs_N_eta,
                                          sigma_terms_phi)
from conformal_blowup.model import ModelParams, kappa0
from conformal_blowup.quadrature import RadialGrid, beta_oracle
from conformal_blowup.similarity import SimilarityState, evolve


def state(w, v, n=129, s=2.0):
    g = RadialGrid.uniform(n)
    y = g.nodes
    return SimilarityState(s, np.asarray(w(y), float) * np.ones(n), np.asarray(v(y), float) * np.ones(n), g)


def steady(params, n=129, s=2.0):
    k0 = kappa0(params)
    return state(lambda y: k0, lambda y: 0.0, n, s)


def test_E0_steady_state(p3_off):
    E0, _ = eval_E0_H0(steady(p3_off), p3_off)
    assert E0 == pytest.approx(1.0 / 3.0, abs=1e-9)


def test_ball_energy_closed_form_exponent_one(p3_off):
    terms = energy_terms(steady(p3_off), p3_off, 1.0)
    E = 4 * math.pi * sum(terms.values())
    assert E == pytest.approx(8 * math.pi / 15, rel=1e-12)


def test_E_eta_steady_half(p3_off):
    cfg = FunctionalConfig(eta=0.5)
    # 4 pi (2 - 1) * (1/2) B(3/2, 3/2)
    assert eval_E_eta(steady(p3_off), cfg, p3_off) == pytest.approx(math.pi**2 / 4, rel=1e-12)


def test_N_eta_quadratic_profile(p3_off):
    # w = y^2, v = 0: N = int 4 y^6 (1-y^2)^{1/2} = 2 B(7/2, 3/2)
    st_ = state(lambda y: y**2, lambda y: 0.0, n=513)
    ref = 2.0 * beta_oracle(3.5, 1.5)
    assert eval_N_eta(st_, FunctionalConfig(eta=0.5), p3_off) == pytest.approx(ref, rel=1e-5)


def test_H0_corrector(p3_off):
    E0, H0 = eval_E0_H0(steady(p3_off, s=16.0), p3_off)
    assert H0 - E0 == pytest.approx(0.5, rel=1e-14)
    with pytest.raises(ValueError):
        eval_E0_H0(steady(p3_off, s=0.5), p3_off)
    P = ModelParams.conformal(3, a=2.0)
    with pytest.raises(ValueError):
        eval_E0_H0(steady(P), P)


def test_zero_state(p3):
    z = state(lambda y: 0.0, lambda y: 0.0)
    cfg = FunctionalConfig(eta=0.5, b=1.5, theta=2.0, sigma=3.0)
    E, J, H, G = eval_G_family(z, cfg, p3)
    assert (E, J, H) == (0.0, 0.0, 0.0)
    assert G == pytest.approx(2.0 * math.exp(-0.5 * 6 / 2 * 2.0))
    assert eval_N_eta(z, cfg, p3) == 0.0
    assert all(t == 0.0 for t in sigma_terms_phi(z, p3, 1.5))
    assert rhs_E_eta(z, cfg, p3) == 0.0 and rhs_N_eta(z, cfg, p3) == 0.0 and rhs_E0(z, p3) == 0.0


def test_sigma_terms_steady_state(p3_off):
    # only the potential and mass log terms survive for w = kappa0, v = 0, f off
    b, s = 1.5, 2.0
    c = s**-b
    k = b / s ** (b + 1)
    k0 = kappa0(p3_off)
    half_dB = 0.5 * beta_oracle(1.5, c + 1) * (special.digamma(c + 1) - special.digamma(c + 2.5))
    terms = sigma_terms_phi(steady(p3_off, n=257, s=s), p3_off, b)
    assert terms[0] == pytest.approx(k / 4 * k0**4 * half_dB, rel=1e-10)
    assert terms[4] == pytest.approx(-k * 1.0 * k0**2 * half_dB, rel=1e-10)
    for i in (1, 2, 3, 5):
        assert abs(terms[i]) < 1e-14


def test_assembly_invariants(p3):
    st_ = state(lambda y: 1.3 - 0.2 * y**2, lambda y: 0.1 * y**2, s=3.0)
    cfg = FunctionalConfig(eta=0.4, b=1.5, theta=5.0, sigma=2.0)
    E, J, H, G = eval_G_family(st_, cfg, p3)
    assert H == E + J
    assert G == pytest.approx((H + 5.0) * math.exp(-0.4 * 6 / 2 * 3.0), rel=1e-14)
    E2, J2, K, L = eval_KL_family(st_, cfg, p3)
    assert K == E2 + J2
    assert L == pytest.approx(math.exp(6 / (2 * 0.5 * 3.0**0.5)) * K + 2.0 / 3.0**0.5, rel=1e-14)
    rep = evaluate_report(st_, cfg, p3)
    assert rep.G_eta == G and rep.L == L
    assert len(rep.row()) == len(FunctionalReport.columns())


def test_J_eta_nonnegative_at_rest(p3):
    cfg = FunctionalConfig(eta=0.3)
    st_ = state(lambda y: np.cos(2 * y), lambda y: 0.0)
    _, J, _, _ = eval_G_family(st_, cfg, p3)
    assert J > 0


def test_config_validation(p3):
    with pytest.raises(ValueError):
        FunctionalConfig(eta=1.0)
    with pytest.raises(ValueError):
        FunctionalConfig(b=1.0)
    with pytest.raises(ValueError):
        FunctionalConfig(theta=-1.0)
    with pytest.raises(ValueError):
        FunctionalConfig(b=3.5).check_against(p3)


def test_resolve_config_defaults(p3):
    st_ = state(lambda y: 1.5 - 0.3 * y**2, lambda y: 0.05, s=1.0)
    cfg = resolve_config(FunctionalConfig(eta=0.5, b=1.5), st_, p3)
    H = eval_G_family(st_, FunctionalConfig(eta=0.5, theta=0.0), p3)[2]
    assert cfg.theta == pytest.approx(10 * abs(H))
    K = eval_KL_family(st_, FunctionalConfig(b=1.5, sigma=0.0), p3)[2]
    assert cfg.sigma == pytest.approx(10 * abs(K) / 0.5)
    fixed = resolve_config(FunctionalConfig(theta=1.0, sigma=2.0), st_, p3)
    assert (fixed.theta, fixed.sigma) == (1.0, 2.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(0.05, 0.95))
def test_energy_scaling_f_off(lam, c):
    P = ModelParams.conformal(3, a=3.0, perturbation_on=False)
    base = state(lambda y: 0.7 + 0.3 * np.cos(y), lambda y: 0.2 * y**2, n=33)
    scaled = SimilarityState(base.s, lam * base.w, lam * base.ws, base.grid)
    t0, t1 = energy_terms(base, P, c), energy_terms(scaled, P, c)
    for key in ("kinetic", "gradient", "mass"):
        assert t1[key] == pytest.approx(lam**2 * t0[key], rel=1e-12)
    assert t1["potential"] == pytest.approx(lam**4 * t0["potential"], rel=1e-12)
    assert t1["perturbation"] == 0.0


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.floats(-1, 1), st.floats(0.05, 0.95))
def test_sign_symmetry_without_perturbation(a0, a1, eta):
    # F is odd, so only the unperturbed functionals are invariant under (w, v) -> (-w, -v)
    P = ModelParams.conformal(3, a=3.0, perturbation_on=False)
    cfg = FunctionalConfig(eta=eta, b=1.5, theta=1.0, sigma=1.0)
    st_ = state(lambda y: a0 + a1 * y**2, lambda y: a1 - a0 * y**2, n=33)
    neg = SimilarityState(st_.s, -st_.w, -st_.ws, st_.grid)
    r1, r2 = evaluate_report(st_, cfg, P), evaluate_report(neg, cfg, P)
    np.testing.assert_allclose(r1.row(), r2.row(), rtol=1e-12, atol=1e-15)


def _trajectory(n, params, span=0.3, s0=2.0):
    g = RadialGrid.uniform(n)
    y = g.nodes
    st_ = SimilarityState(s0, 1.4 + 0.3 * np.cos(np.pi * y) * np.exp(-y**2),
                          0.2 * np.sin(np.pi * y / 2) ** 2, g)
    states = []
    nsteps = int(round(span / (0.4 / 32))) * (n - 1) // 32
    evolve(st_, params, s0 + span, observer=states.append, nsteps=nsteps)
    return states


def test_identity_residuals_second_order(p3):
    cfg = FunctionalConfig(eta=0.5, b=1.5)
    res = {}
    for n in (33, 65, 129):
        tr = _trajectory(n, p3)
        mid = len(tr) // 2  # same s on every level
        win = tr[mid - 1: mid + 2]
        res[n] = [identity_residual_E_eta(win, cfg, p3),
                  identity_residual_E_phi(win, cfg, p3),
                  identity_residual_pohozaev(win, cfg, p3),
                  identity_residual_E0(win, p3)]
    for a, b in ((33, 65), (65, 129)):
        for ra, rb in zip(res[a], res[b]):
            assert math.log2(ra / rb) > 1.7


def test_identity_series_stencils(p3):
    cfg = FunctionalConfig(eta=0.5, b=1.5)
    tr = _trajectory(65, p3, span=0.1)[:9]
    s3, l3, r3, _ = identity_series(tr, "E_eta", cfg, p3)
    s5, l5, r5, _ = identity_series(tr, "E_eta", cfg, p3, stencil=5)
    assert len(s3) == 7 and len(s5) == 5
    np.testing.assert_allclose(r3[1:-1], r5)
    np.testing.assert_allclose(l3[1:-1], l5, rtol=1e-2)
    with pytest.raises(ValueError):
        identity_series(tr[:2], "E_eta", cfg, p3)
    with pytest.raises(ValueError):
        identity_series(tr, "E_eta", cfg, p3, stencil=4)
    with pytest.raises(ValueError):
        identity_series([tr[0], tr[1], tr[3]], "E_eta", cfg, p3)


def test_steady_state_identities_exact(p3_off):
    cfg = FunctionalConfig(eta=0.5, b=1.5)
    st_ = steady(p3_off, n=129, s=3.0)
    tr = []
    evolve(st_, p3_off, 3.0 + 4 * 0.4 / 128, observer=tr.append, nsteps=4)
    for which in ("E_eta", "N_eta", "E0"):
        assert np.max(np.abs(identity_series(tr, which, cfg, p3_off, stencil=5)[3])) < 1e-12
    assert np.max(np.abs(identity_series(tr, "E_phi", cfg, p3_off, stencil=5)[3])) < 1e-10
