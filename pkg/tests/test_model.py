import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cablemf import kernel, model
from conftest import brownian_coefficients

PROBES = np.linspace(-5, 5, 41)


def cable_cs(sigma=None, b=None):
    G = kernel.cable_kernel_function(kernel.hex_gauss(), 1.0)
    return model.CoefficientSet(b or model.linear(0.0, -1.0), sigma or model.constant(1.0),
                                model.zero_function(), G, 1.0, 1.0)


def test_admissible_set_passes():
    rep = model.validate_coefficients(cable_cs(), PROBES, 1e-8)
    assert rep.passed, rep.lines()
    assert rep.lines()[-1] == "OVERALL PASS"


def test_vanishing_sigma_fails_ellipticity():
    rep = model.validate_coefficients(cable_cs(sigma=model.linear(0.0, 1.0)), PROBES)
    assert not rep.passed
    assert "ellipticity" in rep.failed()
    assert rep["ellipticity"].worst_point != 0.0 or rep["ellipticity"].worst_value > 0


def test_kernel_with_unit_slope_fails_origin():
    cs = model.CoefficientSet(model.zero_function(), model.constant(1.0), model.zero_function(),
                              model.linear(0.0, 1.0), 1.0, 1.0)
    rep = model.validate_coefficients(cs, PROBES)
    assert "kernel origin" in rep.failed()


def test_validation_needs_probes():
    with pytest.raises(model.ModelError):
        model.validate_coefficients(cable_cs(), [])


def test_validation_is_sound_on_reported_points():
    # a passing report means every checked inequality holds at every probe
    cs = cable_cs(sigma=model.sigmoid(0.7, 1.2), b=model.linear(1.2, -1.0))
    cs = model.CoefficientSet(cs.b, cs.sigma, cs.H, cs.G, 1.2, 1.5)
    assert model.validate_coefficients(cs, PROBES).passed
    x = PROBES
    assert np.all(np.abs(cs.b.d(1)(x)) <= 1.2)
    assert np.all(np.abs(cs.b(x)) <= 1.2 * (1 + np.abs(x)))
    s = cs.sigma(x)
    assert np.all((s >= 1 / 1.5) & (s <= 1.5))


def test_j_condition_uniform_is_exactly_one_over_n():
    prof = model.j_condition_profile(model.scheme_family("uniform"), [10, 100, 1000])
    assert prof == [(10, 0.1), (100, 0.01), (1000, 0.001)]


def test_j_condition_inverse_distance_matches_brute_force():
    for N in (10, 100):
        J = np.array([[0.0 if i == j else 1 / abs(i - j) for j in range(N)] for i in range(N)])
        direct = np.max((J**2).sum(1) / J.sum(1) ** 2)
        assert model.inverse_distance_weights(N).j_condition() == pytest.approx(direct, rel=1e-12)
    prof = model.j_condition_profile(model.scheme_family("inverse-distance"), [10, 100])
    assert prof[1][1] < prof[0][1]


def test_zero_row_is_degenerate():
    m = np.ones((3, 3))
    m[1] = 0.0
    w = model.explicit_weights(m)
    with pytest.raises(model.ModelError, match="degenerate"):
        w.j_condition()
    with pytest.raises(model.ModelError):
        model.j_condition_profile(lambda N: w, [3])


def test_weights_reject_negative_entries():
    with pytest.raises(model.ModelError):
        model.explicit_weights([[0.0, -1.0], [1.0, 0.0]])


def test_sample_point_mass():
    assert list(model.sample_initial(model.point_mass(0.0), 3, 1)) == [0.0, 0.0, 0.0]


def test_sample_uniform_mean():
    x = model.sample_initial(model.uniform_law(-1.0, 0.5), 10_000, 5)
    se = x.std(ddof=1) / np.sqrt(x.size)
    assert abs(x.mean() + 0.25) < 3 * se
    assert np.all((x > -1.0) & (x < 0.5))


@given(st.integers(0, 2**32), st.integers(1, 200))
@settings(max_examples=25, deadline=None)
def test_sampling_is_reproducible(seed, n):
    law = model.uniform_law(-0.8, 0.9)
    a = model.sample_initial(law, n, seed)
    b = model.sample_initial(law, n, seed)
    assert np.array_equal(a, b)
    assert np.all((a > -law.R) & (a < 1))


def test_initial_law_checks():
    assert model.check_initial_law(model.uniform_law(-0.5, 0.5)).passed
    assert model.check_initial_law(model.point_mass(0.3)).passed
    # flat density up to the threshold violates the decay condition
    assert not model.check_initial_law(model.uniform_law(0.0, 1.0)).passed


def test_point_mass_outside_support():
    with pytest.raises(model.ModelError):
        model.point_mass(1.0)


def test_sigmoid_derivatives_match_finite_differences():
    f = model.sigmoid(0.7, 1.2, 1.0, 0.0)
    x = np.linspace(-3, 3, 13)
    h = 1e-5
    for k in (1, 2):
        fd = (f.d(k - 1)(x + h) - f.d(k - 1)(x - h)) / (2 * h)
        assert np.allclose(f.d(k)(x), fd, atol=1e-7)
    assert np.all(f(x) > 0.7) and np.all(f(x) < 1.2)


def test_tabulated_reproduces_cubic():
    g = np.linspace(-2, 2, 41)
    f = model.tabulated(g, g**2)
    assert f(0.55) == pytest.approx(0.3025, abs=1e-3)
    assert f.d(1)(0.5) == pytest.approx(1.0, abs=1e-2)


def test_brownian_set_validates():
    assert model.validate_coefficients(brownian_coefficients(), PROBES).passed
