import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hedgelab.market_model import ModelSpec
from hedgelab.pricing import (
    AlphaSpec,
    PayoffSpec,
    bs_closed_form,
    closed_form_surface,
    enlarged_vol,
    eval_surface,
    solve_nonlinear_pde,
)

BS = ModelSpec.black_scholes(100.0, 1.0, 0.2)


def test_enlarged_volatility():
    assert enlarged_vol(0.2, 1.0) == pytest.approx(0.2 * np.sqrt(3.0))
    assert enlarged_vol(0.2, 2.0) == pytest.approx(0.2 * np.sqrt(2.0))
    with pytest.raises(ValueError):
        enlarged_vol(0.2, 0.0)


def test_reference_call_value():
    p, d, g = bs_closed_form(np.array([100.0]), 0.0, PayoffSpec.call(100.0), 0.2, 1.0)
    assert p[0] == pytest.approx(7.965567455405804, rel=1e-12)
    assert d[0] == pytest.approx(0.539827837277029, rel=1e-12)
    assert g[0] == pytest.approx(0.019847627374225, rel=1e-10)


@given(s=st.floats(20, 400), t=st.floats(0, 0.99), v=st.floats(0.05, 1.0), k=st.floats(50, 200))
@settings(max_examples=80, deadline=None)
def test_greeks_are_consistent(s, t, v, k):
    call, put = PayoffSpec.call(k), PayoffSpec.put(k)
    p, d, g = bs_closed_form(np.array([s]), t, call, v, 1.0)
    q, e, h = bs_closed_form(np.array([s]), t, put, v, 1.0)
    assert p[0] - q[0] == pytest.approx(s - k, abs=1e-9 * (s + k))
    assert d[0] - e[0] == pytest.approx(1.0, abs=1e-12)
    assert g[0] == pytest.approx(h[0], rel=1e-12) and g[0] >= 0
    eps = 1e-6 * s
    up = bs_closed_form(np.array([s + eps, s - eps]), t, call, v, 1.0)
    assert d[0] == pytest.approx((up[0][0] - up[0][1]) / (2 * eps), abs=1e-6 * (1.0 + g[0] * s))
    assert g[0] == pytest.approx((up[1][0] - up[1][1]) / (2 * eps), abs=1e-6 * (1.0 + g[0]))
    assert p[0] >= max(s - k, 0.0) - 1e-12


@given(s=st.floats(10, 500), t=st.floats(0, 1))
@settings(max_examples=50, deadline=None)
def test_s_log_s_and_linear_solve_the_pricing_equation(s, t):
    vh, T = 0.3, 1.0
    p, d, g = bs_closed_form(np.array([s]), t, PayoffSpec.s_log_s(), vh, T)
    tau = T - t
    assert p[0] == pytest.approx(s * np.log(s) + 0.5 * vh * vh * tau * s, rel=1e-12, abs=1e-12)
    assert g[0] == pytest.approx(1.0 / s)
    # p_t + vh^2 s^2 p_ss / 2 = 0
    assert -0.5 * vh * vh * s + 0.5 * vh * vh * s * s * g[0] == pytest.approx(0.0, abs=1e-9 * s)
    p, d, g = bs_closed_form(np.array([s]), t, PayoffSpec.linear(), vh, T)
    assert (p[0], d[0], g[0]) == (s, 1.0, 0.0)


def test_terminal_values_and_flags():
    call = PayoffSpec.call(100.0)
    p, d, g, flag = bs_closed_form(np.array([90.0, 100.0, 110.0]), 1.0, call, 0.2, 1.0, with_flag=True)
    assert np.array_equal(p, [0.0, 0.0, 10.0]) and np.array_equal(d, [0.0, 0.5, 1.0])
    assert np.all(g == 0.0) and np.all(flag)


def test_payoff_validation():
    with pytest.raises(ValueError):
        PayoffSpec.call(0.0)
    with pytest.raises(ValueError):
        PayoffSpec("digital")
    with pytest.raises(ValueError):
        PayoffSpec.custom([1, 2], [1, 2])
    with pytest.raises(ValueError):
        AlphaSpec()
    with pytest.raises(ValueError):
        AlphaSpec(value=-1.0)


def test_closed_form_surface_rules():
    with pytest.raises(ValueError):
        closed_form_surface(ModelSpec.cev(100.0, 1.0, 0.2, 0.5), PayoffSpec.call(100.0), 1.0)
    with pytest.raises(ValueError):
        closed_form_surface(BS, PayoffSpec.call(100.0), AlphaSpec(fn=lambda s, t: 1.0 + 0 * s))
    surf = closed_form_surface(BS, PayoffSpec.call(100.0), 1.0)
    p, d, g, nu = eval_surface(surf, np.array([100.0]), 0.0)
    assert nu[0] == pytest.approx(0.2 * 100.0 * g[0])


@pytest.fixture(scope="module")
def coarse_call_grid():
    return solve_nonlinear_pde(BS, PayoffSpec.call(100.0), 2.0, 150, 120)


def test_pde_matches_enlarged_closed_form_on_coarse_grid(coarse_call_grid):
    surf = coarse_call_grid
    exact = closed_form_surface(BS, PayoffSpec.call(100.0), 2.0)
    s = np.linspace(60, 160, 41)
    for t in (0.0, 0.5, 0.9):
        got = eval_surface(surf, s, t)[0]
        ref = eval_surface(exact, s, t)[0]
        assert np.max(np.abs(got - ref)) < 0.02
    assert np.min(surf.gamma) > -1e-8


def test_pde_concave_payoff_uses_the_other_branch():
    # for a short call the pricing volatility shrinks to v sqrt(1 - 2/alpha)
    surf = solve_nonlinear_pde(BS, PayoffSpec.custom(np.linspace(1, 1000, 2000), -np.maximum(np.linspace(1, 1000, 2000) - 100, 0), convex=False), 4.0, 200, 150)
    p = eval_surface(surf, np.array([100.0]), 0.0)[0][0]
    ref = -bs_closed_form(np.array([100.0]), 0.0, PayoffSpec.call(100.0), 0.2 * np.sqrt(0.5), 1.0)[0][0]
    assert p == pytest.approx(ref, abs=0.05)


def test_pde_for_local_volatility_is_convex_and_bounded():
    model = ModelSpec.cev(100.0, 1.0, 0.2, beta=0.5)
    surf = solve_nonlinear_pde(model, PayoffSpec.put(100.0), 1.0, 120, 80)
    assert np.min(surf.gamma) > -1e-8
    p = eval_surface(surf, np.array([100.0]), 0.0)[0][0]
    assert 0.0 < p < 100.0
    assert np.all(np.diff(surf.delta[0]) >= -1e-8)


def test_grid_evaluation_clamps_with_warning(coarse_call_grid):
    with pytest.warns(RuntimeWarning):
        eval_surface(coarse_call_grid, np.array([1e9]), 0.0)


def test_pde_linear_payoff_is_harmonic():
    surf = solve_nonlinear_pde(BS, PayoffSpec.linear(), 1.0, 100, 60)
    assert np.allclose(surf.p, surf.s_nodes[None, :], rtol=1e-12)
    assert np.max(np.abs(surf.gamma)) < 1e-10


def test_pde_s_log_s_has_constant_nu_and_gamma():
    surf = solve_nonlinear_pde(BS, PayoffSpec.s_log_s(), 1.0, 200, 100)
    s = BS.s0 * np.exp(np.linspace(-1.0, 1.0, 21))
    for t in (0.0, 0.5, 0.9):
        _, _, g, nu = eval_surface(surf, s, t)
        gamma = s * g
        assert np.max(np.abs(gamma - 1.0)) <= 0.01
        assert np.max(np.abs(nu - 0.2)) <= 0.01 * 0.2
