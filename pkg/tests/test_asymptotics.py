import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from hedgelab import asymptotics as asy

POS = st.floats(0.05, 8.0)
GAMMAS = st.floats(-3.0, 3.0).filter(lambda g: abs(g) > 1e-3)


def test_closed_form_coefficients():
    assert asy.eta_leland(1.0) == pytest.approx(1.0 / np.pi + 2.0 / np.pi + 1.0 - 2.0 / np.pi)
    assert asy.eta_fukasawa(2.0) == pytest.approx(8.0 / 3.0)
    assert asy.eta_simple(1.0) == pytest.approx(0.75)
    assert asy.eta_leland(0.0) == pytest.approx(1.0 - 2.0 / np.pi)
    with pytest.raises(ValueError):
        asy.eta_leland(-1.0)
    with pytest.raises(ValueError):
        asy.eta_fukasawa(-1.0)
    assert isinstance(asy.eta_leland(np.array([1.0, 2.0])), np.ndarray)


def test_crossover_root():
    root = asy.leland_fukasawa_crossover()
    assert asy.eta_leland(root) == pytest.approx(asy.eta_fukasawa(root), abs=1e-10)
    assert asy.eta_fukasawa(1.0) > asy.eta_leland(1.0) and asy.eta_fukasawa(2.0) < asy.eta_leland(2.0)


@given(x=st.floats(-50.0, 50.0))
@settings(max_examples=200, deadline=None)
def test_eta_dagger_shape(x):
    val = asy.eta_dagger(x)
    assert val >= 0.0
    if -2.0 < x <= 1.0:
        assert val == 0.0
    if x >= 2.0 or x <= -2.0:
        assert val == pytest.approx((x + 2.0) ** 2 / 12.0)
    if x > 0:
        assert val <= 0.5 * asy.eta_leland(x) + 1e-12
        assert val <= asy.eta_simple(x) + 1e-12


def test_eta_dagger_rejects_nonfinite():
    with pytest.raises(ValueError):
        asy.eta_dagger(np.nan)


@given(a=POS, gamma=GAMMAS)
@settings(max_examples=100, deadline=None)
def test_eta_star_scaling(a, gamma):
    # gamma^2 eta_dagger(a / gamma) is homogeneous of degree two in (a, gamma)
    assert asy.eta_star(2.0 * a, 2.0 * gamma) == pytest.approx(4.0 * asy.eta_star(a, gamma), rel=1e-12, abs=1e-14)
    assert asy.eta_star(a, 0.0) == pytest.approx(a * a / 12.0)


@given(alpha=POS, lam=st.floats(0.1, 200.0), curv=st.floats(1e-4, 1.0))
@settings(max_examples=80, deadline=None)
def test_pure_band_has_zero_drift(alpha, lam, curv):
    b = asy.pures_bandwidth(alpha, lam, curv)
    assert asy.drift_delta(lam * curv, curv, lam, 2.0 * b, alpha) == pytest.approx(0.0, abs=1e-10 * curv / alpha)
    # a wider band over-replicates: delta < 0
    assert asy.drift_delta(lam * curv, curv, lam, 4.0 * b, alpha) < 0.0


def test_parameter_validation():
    with pytest.raises(ValueError):
        asy.drift_delta(1.0, 1.0, 1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        asy.pures_bandwidth(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        asy.eta_star(0.0, 1.0)
    with pytest.raises(ValueError):
        asy.a_star(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        asy.optimal_family_params(1.0, 1.0, 1)
    with pytest.raises(ValueError):
        asy.ControlFunctions(b=lambda s, t: 0.0).at(1.0, 0.0)


@given(b=st.floats(0.01, 20.0), gamma=st.floats(-5.0, 5.0))
@settings(max_examples=80, deadline=None)
def test_pure_reflection_densities(b, gamma):
    dens = asy.derived_densities(asy.PointControl(b=b))
    assert dens.a == pytest.approx(2.0 * b, rel=1e-12)
    x = np.linspace(-b, b, 9)
    assert np.allclose(dens.g(x), 1.0)
    assert np.allclose(dens.h(x), -x / b, atol=1e-10)
    assert dens.eta(gamma) == pytest.approx((b + gamma) ** 2 / 3.0, rel=1e-10, abs=1e-12)


@given(b=st.floats(0.05, 5.0), c=st.floats(0.01, 5.0), gamma=st.floats(-2.0, 2.0))
@settings(max_examples=60, deadline=None)
def test_constant_regular_control(b, c, gamma):
    ctrl = asy.PointControl(b=b, c=lambda x, _c=c: _c * np.ones_like(x), scale=b)
    dens = asy.derived_densities(ctrl)
    mass = (1.0 - np.exp(-2.0 * c * b)) / c
    assert dens.a == pytest.approx(mass, rel=1e-10)
    x = np.linspace(0, b, 7)
    assert np.allclose(dens.g(x), np.exp(-2.0 * c * x), rtol=1e-10)
    # h(x) = (2 / (a g(x))) int_x^b g - 1
    tail = (1.0 - np.exp(-2.0 * c * (b - x))) / (2.0 * c)
    assert np.allclose(dens.h(x), 2.0 / mass * tail - 1.0, atol=1e-9)
    xs = np.linspace(0, b, 20001)
    h = 2.0 / mass * (1.0 - np.exp(-2.0 * c * (b - xs))) / (2.0 * c) - 1.0
    ref = 2.0 / mass * np.trapezoid((xs - gamma * h) ** 2 * np.exp(-2.0 * c * xs), xs)
    assert dens.eta(gamma) == pytest.approx(ref, rel=1e-6, abs=1e-9)


def test_densities_outside_band_raise():
    dens = asy.derived_densities(asy.PointControl(b=1.0))
    with pytest.raises(ValueError):
        dens.g(np.array([2.0]))
    with pytest.raises(ValueError):
        asy.derived_densities(asy.PointControl(b=1.0, c=lambda x: -np.ones_like(x)))


def test_control_functions_at_a_point():
    ctrl = asy.ControlFunctions(b=lambda s, t: 0.01 * s, c=lambda x, s, t: np.ones_like(x))
    res = asy.eta_bc(ctrl, 0.5, s=100.0, t=0.0)
    assert res.value > 0


BRANCH_POINTS = [(2.0, 0.0), (4.0, -1.0), (0.5, 1.0), (1.0, -1.0), (1.0, 1.0), (1.5, 1.0), (3.0, 1.0), (1.2, 0.7)]


@pytest.mark.parametrize("a,gamma", BRANCH_POINTS)
@pytest.mark.parametrize("n", [2, 4, 16])
def test_optimal_family_mass_and_floor(a, gamma, n):
    d = asy.optimal_eta_details(a, gamma, n)
    assert d["a_quadrature"] == pytest.approx(a, rel=1e-8)
    assert d["eta"] >= d["eta_star"] - 1e-9 * max(1.0, d["eta_star"])


def test_branch_tags():
    tags = [asy.optimal_eta_details(a, g, 4)["case"] for a, g in BRANCH_POINTS[:7]]
    assert tags == ["gamma_zero", "le_minus_two", "below_one", "below_one", "a_equals_gamma", "one_to_two", "ge_two"]


@given(a=st.floats(0.1, 6.0), gamma=GAMMAS, n=st.integers(2, 12))
@settings(max_examples=60, deadline=None)
def test_optimal_family_mass_property(a, gamma, n):
    assume(abs(a / gamma - 1.0) > 1e-3 and abs(a / gamma - 2.0) > 1e-3)
    d = asy.optimal_eta_details(a, gamma, n)
    assert d["a_quadrature"] == pytest.approx(a, rel=1e-8)
    assert d["eta"] >= d["eta_star"] - 1e-8 * max(1.0, d["eta_star"])


def test_log_g_closed_form_matches_quadrature():
    case, l, r, psi, K, b = (float(v) for v in asy.optimal_family_params(1.5, 1.0, 6))
    dens = asy.derived_densities(asy.optimal_controls(1.5, 1.0, 6))
    x = np.linspace(0, min(b, 3.0), 25)
    assert np.allclose(np.log(dens.g(x)), asy.log_g_optimal(x, l, r, psi, K, 1.0), atol=1e-9)


@given(gamma=GAMMAS, lam=st.floats(0.05, 5.0), A=st.floats(0.05, 5.0))
@settings(max_examples=60, deadline=None)
def test_a_star_minimizes_objective(gamma, lam, A):
    a, kind = asy.a_star(gamma, lam, A, return_info=True)
    edge = max(gamma, -2.0 * gamma)
    assert a >= edge
    if kind == "interior":
        assert a > edge

    def F(x):
        return abs(gamma) / x + A * lam * abs(gamma) * asy.eta_dagger(x / gamma)

    grid = edge * np.linspace(1.0, 30.0, 3000)
    assert F(a) <= np.min([F(x) for x in grid]) + 1e-9 * abs(F(a))


def test_a_star_kink_is_exact():
    # 4 A lambda gamma >= 1 puts the minimizer on the kink a = gamma
    assert asy.a_star(1.0, 1.0, 1.0, return_info=True) == (1.0, "kink")
    a, kind = asy.a_star(0.1, 1.0, 1.0, return_info=True)
    assert kind == "interior" and a > 0.1
