import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cablemf import diagnostics, kernel, model, particle, solver
from cablemf.particle import Grid, SpikeRecord, TrajectorySet
from conftest import brownian_coefficients


# ---------------------------------------------------------------------------
# empirical rate


def test_rate_without_spikes():
    grid = Grid(1.0, 10)
    rec = SpikeRecord(tuple(np.array([]) for _ in range(3)))
    assert not diagnostics.empirical_rate(rec, model.uniform_weights(3), 0, grid).any()


def test_rate_all_spike_once():
    grid = Grid(1.0, 10)
    rec = SpikeRecord(tuple(np.array([0.3]) for _ in range(4)))
    r = diagnostics.empirical_rate(rec, model.uniform_weights(4), 0, grid)
    assert np.array_equal(r, (grid.t >= 0.3 - 1e-12).astype(float))


@given(st.integers(0, 10_000), st.sampled_from(["uniform", "inverse-distance"]))
@settings(max_examples=25, deadline=None)
def test_rate_matches_brute_force(seed, scheme):
    gen = np.random.default_rng(seed)
    grid = Grid(1.0, 20)
    N = 5
    rec = SpikeRecord(tuple(np.sort(gen.choice(grid.t[1:], gen.integers(0, 6))) for _ in range(N)))
    w = model.scheme_family(scheme)(N)
    i = int(gen.integers(0, N))
    brute = np.zeros(grid.n_steps + 1)
    S = sum(w.J(i, j) for j in range(N))
    for m, t in enumerate(grid.t):
        for j in range(N):
            brute[m] += w.J(i, j) * sum(1 for tau in rec.times[j] if tau <= t) / S
    r = diagnostics.empirical_rate(rec, w, i, grid)
    assert np.allclose(r, brute, rtol=1e-12, atol=0)
    assert np.all(np.diff(r) >= 0)


def test_rate_invariant_under_relabeling():
    grid = Grid(1.0, 20)
    gen = np.random.default_rng(0)
    times = [np.sort(gen.choice(grid.t[1:], 3)) for _ in range(6)]
    w = model.uniform_weights(6)
    a = diagnostics.empirical_rate(SpikeRecord(tuple(times)), w, 0, grid)
    b = diagnostics.empirical_rate(SpikeRecord(tuple(times[::-1])), w, 0, grid)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# Wasserstein distance


def test_w1_examples():
    assert diagnostics.wasserstein1([3, 1, 2], [2, 3, 1]) == 0
    assert diagnostics.wasserstein1([0, 0], [1, 1]) == 1
    assert diagnostics.wasserstein1([0, 1], [0, 2]) == 0.5
    assert diagnostics.wasserstein1([0, 1], [0, 0.5, 1, 2]) == pytest.approx(0.375)
    with pytest.raises(ValueError):
        diagnostics.wasserstein1([], [1.0])


samples = st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=30)


@given(samples, samples, samples)
@settings(max_examples=60, deadline=None)
def test_w1_is_a_metric(a, b, c):
    w = diagnostics.wasserstein1
    assert w(a, b) == pytest.approx(w(b, a), abs=1e-9)
    assert w(a, a) == 0
    assert w(a, c) <= w(a, b) + w(b, c) + 1e-9


# ---------------------------------------------------------------------------
# chaos


def test_pooled_covariance_detects_shared_component():
    gen = np.random.default_rng(1)
    common = gen.standard_normal((200, 1))
    x = 0.5 * common + gen.standard_normal((200, 40))
    c, se = diagnostics.pooled_covariance(x)
    assert abs(c - 0.25) < 3 * se


def test_pooled_covariance_error_scaling():
    gen = np.random.default_rng(2)
    se = [diagnostics.pooled_covariance(gen.standard_normal((r, 30)))[1] for r in (100, 400)]
    assert 1.5 < se[0] / se[1] < 2.7


def test_pooled_covariance_needs_replications():
    with pytest.raises(ValueError):
        diagnostics.pooled_covariance(np.zeros((2, 10)))


def test_chaos_vanishes_without_coupling():
    grid = Grid(1.0, 50)
    cs = brownian_coefficients(b=model.linear(0.5, -1.0))
    kt = kernel.tabulate_kernel(model.zero_function(), grid.T, grid.n_steps)
    w = model.uniform_weights(200)
    law = model.uniform_law(-0.5, 0.5)
    trajs = [particle.simulate_network(cs, kt, w, law, grid, s)[0] for s in range(20)]
    for e in diagnostics.chaos_correlation(trajs, [0.5, 1.0], "tanh"):
        assert abs(e.cov) < 3 * e.std_error
    # exactly N/2 indicators are on in every network, which pins the pair
    # covariance of the median functional at -1 / (4 (N - 1))
    for e in diagnostics.chaos_correlation(trajs, [0.5, 1.0], "median"):
        assert e.cov == pytest.approx(-1 / (4 * 199), rel=1e-9)


# ---------------------------------------------------------------------------
# crossing property


def synthetic(z):
    z = np.asarray([z], dtype=float)
    M = np.floor(np.maximum(np.maximum.accumulate(z, axis=1), 0)).astype(np.int64)
    grid = Grid(0.1 * (z.shape[1] - 1), z.shape[1] - 1)
    return TrajectorySet(z, M, grid, 0)


def test_strict_crossing_has_no_events():
    assert diagnostics.crossing_diagnostic(synthetic([0, 0.5, 1.2, 1.5, 1.4, 1.6]), epsilon=0.3) == 0


def test_touch_without_cross_is_flagged():
    traj = synthetic([0, 0.5, 1.0, 0.8, 0.6, 0.7])
    assert diagnostics.crossing_diagnostic(traj, epsilon=0.3) == 1


def test_crossing_epsilon_must_exceed_step():
    with pytest.raises(ValueError):
        diagnostics.crossing_diagnostic(synthetic([0, 0.5, 1.2]), epsilon=0.05)


def test_crossing_events_thin_out_under_refinement(bench, bench_cs):
    rates = []
    for n in (100, 400):
        grid = Grid(2.0, n)
        kt = bench.kernel_table(bench_cs, grid)
        traj, spikes = particle.simulate_network(bench_cs, kt, model.uniform_weights(400),
                                                 bench.initial_law(), grid, 5)
        rates.append(diagnostics.crossing_diagnostic(traj, spikes, 0.1) / spikes.total())
    assert rates[1] < rates[0]


# ---------------------------------------------------------------------------
# limit samples and convergence study


@pytest.fixture(scope="module")
def decoupled():
    grid = Grid(1.0, 50)
    cs = brownian_coefficients(b=model.linear(0.5, -1.0))
    law = model.uniform_law(-0.5, 0.5)
    h = solver.phi_mc(solver.RateFunction.zero(grid), cs, law, grid, 40_000, 9, crossing="bridge")
    return grid, cs, law, h


def test_generator_residual_vanishes(decoupled):
    grid, cs, law, h = decoupled
    Z, M = diagnostics.limit_samples(cs, law, grid, h, 20_000, 3, crossing="grid")
    res = diagnostics.generator_residual(cs, h, Z, M, grid)
    for mean, se in res.values():
        assert abs(mean) < 3 * se


def test_decoupled_deviation_is_monte_carlo_error(decoupled):
    grid, cs, law, h = decoupled
    kt = kernel.tabulate_kernel(model.zero_function(), grid.T, grid.n_steps)
    N = 500
    traj, spikes = particle.simulate_network(cs, kt, model.uniform_weights(N), law, grid, 17,
                                             crossing="bridge")
    rate = diagnostics.empirical_rate(spikes, model.uniform_weights(N), 0, grid)
    MT = traj.M[:, -1]
    se = np.hypot(MT.std(ddof=1) / np.sqrt(N), h.se_values[-1])
    assert abs(rate[-1] - h.values[-1]) < 3 * se


def test_study_reproducible_with_exact_j_column(tmp_path, decoupled):
    grid, cs, law, h = decoupled
    kt = kernel.tabulate_kernel(model.zero_function(), grid.T, grid.n_steps)
    fam = model.scheme_family("uniform")
    args = (cs, kt, law, fam, [20, 40], grid, 4, 3, h)
    a = diagnostics.convergence_study(*args, n_limit=2000)
    b = diagnostics.convergence_study(*args, n_limit=2000, workers=4)
    a.to_long_csv(tmp_path / "a.csv")
    b.to_long_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    prof = dict(model.j_condition_profile(fam, [20, 40]))
    assert [r.j_condition for r in a.rows] == [prof[20], prof[40]]
    assert all(r.sup_dev >= 0 and r.sup_dev_se >= 0 for r in a.rows)
    assert set(a.chaos) == {20, 40}
    assert all(r.other == {} for r in a.rows)
    a.to_csv(tmp_path / "wide.csv")
    head = (tmp_path / "wide.csv").read_text().splitlines()[0]
    assert head.startswith("N,n_reps,j_condition,sup_dev,sup_dev_se")


def test_study_with_inverse_distance_weights(decoupled):
    grid, cs, law, h = decoupled
    kt = kernel.tabulate_kernel(model.zero_function(), grid.T, grid.n_steps)
    table = diagnostics.convergence_study(cs, kt, law, model.scheme_family("inverse-distance"),
                                          [10, 30], grid, 3, 1, h, n_limit=1000)
    assert table.chaos == {}
    assert table.rows[1].j_condition < table.rows[0].j_condition
    assert [list(r.other) for r in table.rows] == [[5], [15]]
    names = {name for _, name, _, _ in table.long_rows()}
    assert {"sup_dev_i5", "sup_dev_i15"} <= names
