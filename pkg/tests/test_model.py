import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conformal_blowup.model import (F_array, F_eval, ModelParams, QuadratureFailure,
                                    conformal_exponent, f_eval, kappa0, reference_constants,
                                    scaled_F, scaled_f)

# 30-digit mpmath values
F1_P3_A2 = 0.26986900329855422
F1_P3_A3 = 0.28501602425444384
F10_P3_A3 = 40.675459166948268
F05_P5_A15 = 0.0037680756302275142
KAPPA0 = {2: 0.9306048591020996, 3: 1.414213562373095, 4: 2.6947808397231317, 5: 6.0}


def test_conformal_exponent():
    assert conformal_exponent(3) == 3.0
    assert conformal_exponent(2) == 5.0
    assert conformal_exponent(5) == 2.0
    with pytest.raises(ValueError):
        conformal_exponent(1)


@pytest.mark.parametrize("N", [2, 3, 4, 5])
def test_kappa0_oracle(N):
    assert kappa0(ModelParams.conformal(N)) == pytest.approx(KAPPA0[N], rel=1e-14)


def test_kappa0_solves_flat_profile_equation():
    for N in (2, 3, 4, 7):
        P = ModelParams.conformal(N)
        k = kappa0(P)
        assert k ** (P.p - 1) == pytest.approx(2 * (P.p + 1) / (P.p - 1) ** 2, rel=1e-13)


def test_reference_slope_bound():
    rc = reference_constants(ModelParams.conformal(3))
    assert rc.slope_bound(0.5) == pytest.approx(1.5)
    assert rc.kappa0 == pytest.approx(math.sqrt(2))


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(N=3, p=3.0, a=1.0)
    with pytest.raises(ValueError):
        ModelParams(N=3, p=1.0)
    with pytest.raises(ValueError):
        ModelParams(N=1, p=3.0)
    with pytest.raises(ValueError):
        ModelParams(N=3, p=3.0, M=2.0)


def test_f_values():
    P = ModelParams.conformal(3, a=2.0)
    assert f_eval(1.0, P) == pytest.approx(0.82853544969022304, rel=1e-14)
    assert f_eval(0.0, P) == 0.0
    assert f_eval(-2.0, P) == f_eval(2.0, P)


@pytest.mark.parametrize("u,a,N,ref", [
    (1.0, 2.0, 3, F1_P3_A2),
    (1.0, 3.0, 3, F1_P3_A3),
    (10.0, 3.0, 3, F10_P3_A3),
    (0.5, 1.5, 2, F05_P5_A15),
])
def test_F_eval_oracle(u, a, N, ref):
    P = ModelParams.conformal(N, a=a)
    assert F_eval(u, P) == pytest.approx(ref, rel=1e-12)


def test_F_array_matches_scalar():
    P = ModelParams.conformal(3, a=3.0)
    u = np.array([-7.5, -1.0, 0.0, 1e-8, 0.3, 1.0, 2.0, 10.0, 1e3, 1e6])
    ref = np.array([F_eval(x, P) for x in u])
    np.testing.assert_allclose(F_array(u, P), ref, rtol=1e-13, atol=1e-300)


def test_F_is_odd_and_increasing():
    P = ModelParams.conformal(3, a=3.0)
    u = np.linspace(0, 5, 41)
    F = F_array(u, P)
    assert np.all(np.diff(F) > 0)
    np.testing.assert_array_equal(F_array(-u, P), -F)


def test_scaled_functions_consistent_with_unscaled():
    P = ModelParams.conformal(3, a=3.0)
    w = np.array([-2.0, -0.3, 0.0, 0.5, 1.4, 3.0])
    for s in (1.0, 4.0, 9.0):
        lam = math.exp(P.alpha * s)
        np.testing.assert_allclose(scaled_f(w, s, P), lam ** (-P.p) * f_eval(lam * w, P), rtol=1e-13)
        np.testing.assert_allclose(scaled_F(w, s, P), lam ** (-P.p - 1) * F_array(lam * w, P),
                                   rtol=1e-12)


def test_scaled_f_no_overflow_at_large_s():
    P = ModelParams.conformal(3, a=3.0)
    w = np.array([1.0, 2.0])
    out = scaled_f(w, 800.0, P)
    assert np.all(np.isfinite(out)) and np.all(out > 0)
    # scaled perturbation decays like s^-a relative to |w|^p
    assert out[0] < (1.0 / (2 * P.alpha * 800.0)) ** 3 * 1.01
    assert np.all(np.isfinite(scaled_F(w, 800.0, P)))


def test_F_eval_reports_failure():
    P = ModelParams.conformal(3, a=3.0)
    with pytest.raises((QuadratureFailure, ValueError)):
        F_eval(float("nan"), P)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 50.0), st.floats(1.01, 5.0))
def test_F_derivative_is_f(u, a):
    P = ModelParams.conformal(3, a=a)
    h = 1e-4 * max(1.0, u)
    d = (F_array(u + h, P) - F_array(max(u - h, 0.0), P)) / (u + h - max(u - h, 0.0))
    assert d == pytest.approx(f_eval(u, P), rel=1e-6, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.floats(-100.0, 100.0))
def test_f_even_F_odd(u):
    P = ModelParams.conformal(3, a=3.0)
    assert f_eval(u, P) == f_eval(-u, P)
    assert F_array(np.array([u]), P)[0] == -F_array(np.array([-u]), P)[0]
