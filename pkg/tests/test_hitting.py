import math

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.stats import norm

from cablemf import hitting, model
from cablemf.hitting import ForcedDiffusion

ZERO = model.zero_function()
ONE = model.constant(1.0)
OU = model.linear(0.0, -1.0)


def fd(b=ZERO, sigma=ONE, alpha=ZERO, x=0.0, T=2.0):
    return ForcedDiffusion(b, sigma, alpha, x, T)


def brownian_cdf(x, t):
    return 2 * norm.sf((1 - x) / math.sqrt(t))


# ---------------------------------------------------------------------------
# Lamperti map


def test_lamperti_identity_and_scaling():
    L1 = hitting.lamperti(ONE, (-5, 2))
    z = np.linspace(-5, 2, 15)
    assert np.array_equal(L1.S(z), z)
    L2 = hitting.lamperti(model.constant(2.0), (-5, 2))
    assert np.allclose(L2.S(z), z / 2) and np.allclose(L2.inverse(z / 2), z)


def test_lamperti_against_quadrature():
    sig = model.SmoothFunction(lambda z: 1 + 0.5 * np.asarray(z) ** 2 / (1 + np.asarray(z) ** 2))
    L = hitting.lamperti(sig, (-4, 2))
    z = np.linspace(-4, 2, 37)
    oracle = np.array([integrate.quad(lambda y: 1 / sig(y), 0, zz, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
                       for zz in z])
    assert np.max(np.abs(L.S(z) - oracle)) < 1e-9
    assert np.max(np.abs(L.inverse(L.S(z)) - z)) < 1e-10
    assert L.S(0.0) == 0.0


def test_lamperti_slope_bounds(bench_cs):
    L = hitting.lamperti(bench_cs, (-6, 1.5))
    z = np.linspace(-6, 1.5, 400)
    slope = np.diff(L.S(z)) / np.diff(z)
    lam = bench_cs.lambda_sigma
    assert np.all(slope >= 1 / lam) and np.all(slope <= lam)


def test_lamperti_out_of_range():
    L = hitting.lamperti(model.sigmoid(0.7, 1.2), (-1, 1))
    with pytest.raises(hitting.HittingError):
        L.S(3.0)


# ---------------------------------------------------------------------------
# Bessel bridge


def test_bridge_endpoints_pinned():
    u, r = hitting.bessel_bridge_path(0.3, 1.7, 2.0, 65, seed=4, n_paths=200)
    assert u[0] == 0 and u[-1] == 2.0
    assert np.all(r[:, 0] == 0.3) and np.all(r[:, -1] == 1.7)
    assert np.all(np.isfinite(r))


def test_bridge_equal_endpoints_is_finite():
    _, r = hitting.bessel_bridge_path(1.0, 1.0, 1.0, 33, seed=1, n_paths=10_000)
    assert np.isfinite(r[:, 16].mean())


def test_bridge_midpoint_law():
    n = 4000
    _, r = hitting.bessel_bridge_path(0.0, 1.0, 1.0, 3, seed=8, n_paths=n)
    g = np.random.default_rng(123).standard_normal((n, 3))
    oracle = 1 - 0.5 * np.sqrt((1 + g[:, 0]) ** 2 + g[:, 1] ** 2 + g[:, 2] ** 2)
    assert stats.ks_2samp(r[:, 1], oracle).pvalue > 0.01


def test_bridge_rejects_bad_length():
    with pytest.raises(hitting.HittingError):
        hitting.bessel_bridge_path(0.0, 1.0, 0.0, 10, seed=0)


# ---------------------------------------------------------------------------
# density estimator


@pytest.mark.parametrize("x", [-2.0, -1.0, 0.0, 0.5])
def test_collapse_to_brownian_density(x):
    ts = np.array([0.1, 0.5, 1.0, 2.0])
    est = hitting.hitting_density_bridge(fd(x=x), ts, n_mc=50, n_times=32)
    for e, t in zip(est, ts):
        exact = float(hitting.brownian_density(x, t))
        assert abs(e.value - exact) <= 1e-10 * exact
        assert e.std_error <= 1e-14 * exact


def test_collapse_value_at_unit_time():
    e = hitting.hitting_density_bridge(fd(), 1.0, n_mc=10)
    assert e.value == pytest.approx(math.exp(-0.5) / math.sqrt(2 * math.pi), rel=1e-12)


@pytest.mark.parametrize("c", [-0.7, 0.4])
def test_constant_forcing_matches_drifted_density(c):
    ts = np.array([0.3, 1.0, 1.7])
    est = hitting.hitting_density_bridge(fd(alpha=model.constant(c), x=-0.5), ts, n_mc=20,
                                         n_times=64)
    exact = hitting.brownian_density(-0.5, ts, drift=c)
    assert np.allclose([e.value for e in est], exact, rtol=1e-10)


def test_start_above_threshold():
    with pytest.raises(hitting.HittingError, match="threshold"):
        hitting.hitting_density_bridge(fd(x=1.0), 1.0)
    with pytest.raises(hitting.HittingError):
        hitting.hitting_cdf_mc(fd(x=1.2), [1.0])


@pytest.mark.parametrize("t", [0.5, 1.0])
def test_ou_density_matches_cdf_difference(t):
    f = fd(b=OU)
    d = 0.1
    lo = hitting.hitting_cdf_mc(f, [t - d], 100_000, seed=1, dt=1e-3)
    hi = hitting.hitting_cdf_mc(f, [t + d], 100_000, seed=2, dt=1e-3)
    fdiff = (hi.cdf[0] - lo.cdf[0]) / (2 * d)
    fdiff_se = math.hypot(hi.std_error[0], lo.std_error[0]) / (2 * d)
    est = hitting.hitting_density_bridge(f, t, n_mc=20_000, n_times=128, seed=3)
    assert abs(est.value - fdiff) < 3 * math.hypot(est.std_error, fdiff_se)


def test_nonconstant_sigma_density_matches_cdf(bench_cs):
    f = ForcedDiffusion.from_coefficients(bench_cs, x=0.0, T=1.0)
    b = hitting.bridge_cdf(f, 1.0, n_mc=20_000, n_times=64, seed=5, n_nodes=20)
    e = hitting.hitting_cdf_mc(f, [1.0], 40_000, seed=6, dt=1e-3)
    assert abs(b.value - e.cdf[0]) < 3 * math.hypot(b.std_error, e.std_error[0])


def test_density_nonnegative_and_error_scaling():
    f = fd(b=OU, alpha=model.sine(), x=-1.0)
    small = hitting.hitting_density_bridge(f, 1.0, n_mc=4000, n_times=64, seed=7)
    large = hitting.hitting_density_bridge(f, 1.0, n_mc=16_000, n_times=64, seed=8)
    for e in (small, large):
        assert e.value >= -3 * e.std_error
    assert 1.6 < small.std_error / large.std_error < 2.5


def test_bridge_cdf_collapse():
    for x, t in [(0.0, 1.0), (-1.0, 0.5), (0.5, 2.0), (0.9, 2.0), (0.99, 1.0)]:
        b = hitting.bridge_cdf(fd(x=x), t, n_mc=10, n_times=16, n_nodes=24)
        assert b.value == pytest.approx(brownian_cdf(x, t), rel=1e-6)


def test_bridge_cdf_constant_forcing():
    # first passage of Brownian motion with drift c over distance 1 - x
    c, x, t = 0.8, 0.2, 1.5
    d = 1 - x
    exact = norm.sf((d - c * t) / math.sqrt(t)) + math.exp(2 * c * d) * norm.sf((d + c * t) / math.sqrt(t))
    b = hitting.bridge_cdf(fd(alpha=model.constant(c), x=x), t, n_mc=10, n_times=64, n_nodes=24)
    assert b.value == pytest.approx(exact, rel=1e-6)


# ---------------------------------------------------------------------------
# crossing-probability oracle


def test_cdf_reflection_principle():
    est = hitting.hitting_cdf_mc(fd(), [1.0], 20_000, seed=11, dt=1e-3)
    assert abs(est.cdf[0] - 2 * norm.sf(1.0)) < 3 * est.std_error[0]


def test_cdf_small_time_vanishes():
    est = hitting.hitting_cdf_mc(fd(), [1e-3, 1e-2], 5000, seed=1, dt=1e-4)
    assert est.cdf[0] < 1e-6 and est.cdf[1] < 1e-3
    assert np.all(np.diff(est.cdf) >= 0)


def test_cdf_is_deterministic():
    a = hitting.hitting_cdf_mc(fd(b=OU), [0.5, 1.0], 2000, seed=3)
    b = hitting.hitting_cdf_mc(fd(b=OU), [0.5, 1.0], 2000, seed=3)
    assert np.array_equal(a.cdf, b.cdf)


# ---------------------------------------------------------------------------
# envelope


def test_envelope_shape(bench_cs):
    cs = model.CoefficientSet(ZERO, ONE, ZERO, ZERO, 1.0, 1.0)
    small = hitting.density_envelope(cs, (0, 0), 0.0, np.array([1e-3, 1e-2]), 1.0)
    assert small[0] < small[1] and small[0] < 1e-100
    assert hitting.density_envelope(cs, (0, 0), 0.0, 1.0, 2.0) > hitting.density_envelope(
        cs, (0, 0), 0.0, 1.0, 1.0)


def test_envelope_dominates_brownian_density():
    cs = model.CoefficientSet(ZERO, ONE, ZERO, ZERO, 1.0, 1.0)
    x, t = np.meshgrid(np.linspace(-3, 0.9, 40), np.linspace(1e-3, 1.0, 60))
    env = hitting.density_envelope(cs, (0, 0), x, t, 1.0)
    assert np.all(hitting.brownian_density(x, t) <= env)


def test_density_curve_csv(tmp_path):
    ts = [0.5, 1.0]
    est = hitting.hitting_density_bridge(fd(), np.array(ts), n_mc=10)
    p = tmp_path / "d.csv"
    hitting.density_curve_to_csv(p, ts, est)
    assert p.read_text().splitlines()[0] == "t,estimate,std_error"
