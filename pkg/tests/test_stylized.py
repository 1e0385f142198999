import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from longevity_mutual.preferences import Preferences
from longevity_mutual.stylized import (
    Status,
    alpha_axis,
    benefit_status,
    figure1_grid,
    finite_fund_coefficient,
    one_fund_coefficient,
    solve_stylized,
    stylized_benefit,
    stylized_insurance_rate,
    stylized_price,
)

lam, a, b = sp.symbols("lam a b", positive=True)


def _finite_residual(g1, g2, a1, r1, r=0, mu=0, sigma=sp.Rational(3, 20)):
    """Literal finite-fund PDE for g1(lam) with the infinite fund g2(lam), time independent."""
    drift, vol2 = a * lam**2, b**2 * lam**3
    g1l, g1ll, g2l = sp.diff(g1, lam), sp.diff(g1, lam, 2), sp.diff(g2, lam)
    cons = (a1 * g1) ** (r1 / (a1 * (r1 - 1)))
    return (
        (a1 - 1) * (2 * drift * g1l + vol2 * g1ll)
        + 2 * a1 * vol2 / g2 * g2l * g1l
        - a1 * vol2 / g1 * g1l**2
        + g1 * (2 * (a1 - 1) * (a1 * (r1 * (r + lam) + (1 - r1) * cons) - lam * r1) / r1
                - a1 * vol2 / g2**2 * g2l**2 - a1 * (r - mu) ** 2 / sigma**2)
    )


def _infinite_residual(g2, a2, r2, r=0, mu=0, sigma=sp.Rational(3, 20)):
    drift, vol2 = a * lam**2, b**2 * lam**3
    cons = (a2 * g2) ** (r2 / ((r2 - 1) * a2))
    bracket = (
        -(mu**2) / (2 * (a2 - 1) * sigma**2)
        + cons * (1 / r2 - 1)
        + lam * (1 - 1 / a2)
        - r**2 / (2 * (a2 - 1) * sigma**2)
        + r * (mu / ((a2 - 1) * sigma**2) + 1)
    )
    return a2 * g2 * bracket + drift * sp.diff(g2, lam) + vol2 / 2 * sp.diff(g2, lam, 2)


CASES = [
    ((-2, -1), (-1, -1)),
    ((-3, -3), (-1, -1)),
    ((sp.Rational(1, 4), sp.Rational(1, 3)), (sp.Rational(3, 20), sp.Rational(1, 3))),
    ((-5, -1), (-10, -1)),
]


@pytest.mark.parametrize("pair", CASES)
def test_closed_forms_solve_the_original_pdes(pair):
    (a1, r1), (a2, r2) = pair
    A_sym, K_sym = sp.symbols("A K", positive=True)
    xi1 = a1 * (r1 - 1) / r1
    xi2 = a2 * (r2 - 1) / r2
    g1 = (A_sym * lam) ** xi1 / a1
    g2 = (K_sym * lam) ** xi2 / a2
    p1, p2 = Preferences(float(a1), float(r1)), Preferences(float(a2), float(r2))
    for av, bv in [(4.0, 1.0), (2.5, 0.7)]:
        K = one_fund_coefficient(av, bv, p2)
        A = finite_fund_coefficient(av, bv, p1, p2)
        if K <= 0 or A <= 0:
            continue
        subs = {a: av, b: bv, A_sym: A, K_sym: K}
        res2 = _infinite_residual(g2, a2, r2)
        res1 = _finite_residual(g1, g2, a1, r1)
        for lv in (0.01, 0.3, 2.0):
            s = {**subs, lam: lv}
            scale2 = abs(float((a2 * g2 * lam).subs(s)))
            scale1 = abs(float((g1 * lam).subs(s)))
            assert abs(float(res2.subs(s))) < 1e-10 * scale2
            assert abs(float(res1.subs(s))) < 1e-10 * scale1


def test_equal_preferences_give_equal_coefficients_and_zero_benefit():
    for al in (-5.0, -2.0, -0.5, 0.3, 0.9):
        p = Preferences.vnm(al)
        sol = solve_stylized(4.0, 1.0, p, p)
        assert sol.A_coef == pytest.approx(sol.K2, rel=1e-12)
        assert stylized_benefit(sol) == pytest.approx(0.0, abs=1e-10)


def test_vnm_one_fund_coefficient_is_linear_in_alpha():
    # (alpha-1)rho/(alpha(rho-1)) = 1 and xi = alpha - 1 under vNM
    for al in (-9.0, -8.0, -1.0, 0.5):
        assert one_fund_coefficient(4.0, 1.0, Preferences.vnm(al)) == pytest.approx(4.0 + al / 2)


def test_price_for_alpha2_minus_one():
    p2 = Preferences.vnm(-1.0)
    sol = solve_stylized(4.0, 1.0, Preferences.vnm(-2.0), p2)
    lam_ = np.array([0.01, 0.5, 3.0])
    assert np.allclose(stylized_price(sol, lam_), 2.0 * lam_**2)


def test_insurance_rate_matches_log_derivative_difference():
    p1, p2 = Preferences(-3.0, -1.0), Preferences(-5.0, -1.0)
    lam_ = np.array([0.02, 0.2, 2.0])
    q = stylized_insurance_rate(1.0, lam_, p1, p2)
    expected = (p2.xi - p1.xi) / (lam_ * (p1.alpha - 1.0))
    assert np.allclose(q, expected)
    with pytest.raises(ValueError):
        stylized_insurance_rate(1.0, np.array([0.0]), p1, p2)


@settings(max_examples=60, deadline=None)
@given(st.floats(-9.9, 0.99), st.floats(-9.9, 0.99))
def test_vnm_direction_of_trade(a1, a2):
    if abs(a1) < 1e-3 or abs(a2) < 1e-3 or abs(a1 - a2) < 1e-6:
        return
    q = float(stylized_insurance_rate(1.0, 0.1, Preferences.vnm(a1), Preferences.vnm(a2)))
    assert np.sign(q) == np.sign(a1 - a2)


def test_ill_posed_reporting():
    # K2 = 4 + alpha/2 < 0 for alpha < -8
    sol = solve_stylized(4.0, 1.0, Preferences.vnm(-2.0), Preferences.vnm(-9.0))
    assert sol.status is Status.ILL_POSED_INFINITE
    assert math.isnan(stylized_benefit(sol))
    assert benefit_status(sol) == "ill-posed-infinite"
    with pytest.raises(ValueError):
        stylized_price(sol, 0.1)


def test_figure1_grid_shape_and_classes():
    alphas = alpha_axis(-10, 1, 45)
    assert 0.0 not in alphas and alphas.min() > -10 and alphas.max() < 1
    g = figure1_grid(4.0, 1.0, alphas)
    assert g.benefit_pct.shape == (alphas.size, alphas.size)
    st_ = g.status
    assert np.any(st_ != "well-posed")
    ok = st_ == "well-posed"
    assert np.all(np.isfinite(g.benefit_pct[ok])) and np.all(np.isnan(g.benefit_pct[~ok]))
    # benefits are never negative where defined
    assert np.nanmin(g.benefit_pct) > -1e-9
    diag_ok = np.diag(ok)
    assert np.allclose(np.diag(g.benefit_pct)[diag_ok], 0.0, atol=1e-9)
