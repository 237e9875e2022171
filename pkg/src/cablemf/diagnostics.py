"""Statistical checks of the particle system against its mean-field limit."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import rng
from .particle import simulate_network
from .solver import forcing_from_rate, simulate_forced


def empirical_rate(spikes, w, i, grid):
    """``(1 / S_i) sum_j J_ij M^j(t)`` at the grid nodes."""
    counts = spikes.counts(grid.t).astype(float)
    if w.is_uniform:
        return counts.mean(axis=0)
    row = np.array([w.J(i, j) for j in range(w.N)])
    return row @ counts / row.sum()


def wasserstein1(a, b, wa=None, wb=None):
    """W1 distance between two (optionally weighted) empirical laws on the line."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be non-empty")
    if wa is None and wb is None and a.size == b.size:
        return float(np.mean(np.abs(np.sort(a) - np.sort(b))))
    return float(stats.wasserstein_distance(a, b, wa, wb))


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    se = x.std(ddof=1) / math.sqrt(x.size) if x.size > 1 else 0.0
    return float(x.mean()), float(se)


# ---------------------------------------------------------------------------
# propagation of chaos


@dataclass(frozen=True)
class CovEstimate:
    t: float
    cov: float
    std_error: float


def pooled_covariance(samples):
    """Pair covariance of an exchangeable population from replicated samples.

    ``samples`` has shape ``(n_reps, N)``. The estimator is
    ``Var_r(mean_i x) - mean_r(within-replication variance) / N``, which is
    unbiased for ``cov(x_1, x_2)`` under exchangeability; the standard error
    is the jackknife over replications.
    """
    x = np.asarray(samples, dtype=float)
    R, N = x.shape
    if R < 3 or N < 2:
        raise ValueError("need at least 3 replications of at least 2 neurons")
    means = x.mean(axis=1)
    within = x.var(axis=1, ddof=1)

    def est(idx):
        return float(means[idx].var(ddof=1) - within[idx].mean() / N)

    full = est(np.arange(R))
    jack = np.array([est(np.delete(np.arange(R), r)) for r in range(R)])
    se = math.sqrt((R - 1) / R * np.sum((jack - jack.mean()) ** 2))
    return full, se


_FUNCTIONALS = {
    "tanh": np.tanh,
}


def _apply(functional, U):
    if functional == "median":
        return (U > np.median(U, axis=-1, keepdims=True)).astype(float)
    if callable(functional):
        return functional(U)
    return _FUNCTIONALS[functional](U)


def chaos_correlation(trajs, t_nodes, functional="tanh"):
    """Covariance of ``phi(U^1_t)`` and ``phi(U^2_t)`` across replicated networks.

    ``trajs`` is a sequence of :class:`TrajectorySet` from independent runs of
    one exchangeable network; all neuron pairs are pooled. ``functional`` is
    ``"tanh"``, ``"median"`` (indicator above the population median) or a
    callable.
    """
    out = []
    grid = trajs[0].grid
    for t in t_nodes:
        m = int(round(t / grid.dt))
        U = np.stack([tr.Z[:, m] - tr.M[:, m] for tr in trajs])
        c, se = pooled_covariance(_apply(functional, U))
        out.append(CovEstimate(float(t), c, se))
    return out


# ---------------------------------------------------------------------------
# crossing property


def crossing_diagnostic(traj, spikes=None, epsilon=0.1, resolution=None):
    """Count spikes after which ``Z - k`` stays within ``resolution`` of 0.

    For each spike ``k`` of each neuron, the window of nodes in
    ``[tau_k, tau_k + epsilon)`` is scanned; the spike is a touch-without-cross
    event if ``max (Z - k)`` over the window does not exceed ``resolution``
    (default ``dt``, the grid resolution of the level).
    """
    grid = traj.grid
    if epsilon <= grid.dt:
        raise ValueError("epsilon must exceed the grid step")
    res = grid.dt if resolution is None else resolution
    width = int(math.ceil(epsilon / grid.dt - 1e-12))
    events = 0
    for Zi, Mi in zip(traj.Z, traj.M):
        jumps = np.nonzero(np.diff(Mi))[0] + 1
        for m in jumps:
            top = Zi[m:m + width]
            for k in range(Mi[m - 1] + 1, Mi[m] + 1):
                if np.max(top - k) <= res:
                    events += 1
    return events


# ---------------------------------------------------------------------------
# limit samples and generator residual


def limit_samples(cs, law, grid, h, n, seed, *, kt=None, crossing="grid", workers=1):
    """Paths of the single neuron driven by the fixed-point forcing.

    Returns ``(Z, M)`` arrays of shape ``(n, n_steps + 1)``.
    """
    _, df = forcing_from_rate(h, cs, kt, "spike")
    M, Z = simulate_forced(cs, law, grid, df, n, rng.child_seed(seed, rng.LIMIT, 0),
                           crossing=crossing, workers=workers, keep_paths=True)
    return Z, M


def generator_residual(cs, h, Z, M, grid, kt=None):
    """Weak-form residual ``phi(Z_t) - phi(Z_0) - int_0^t L phi ds``.

    Uses ``phi(z) = z`` and ``phi(z) = z^2`` on the limit paths, with a left
    Riemann sum in time (the form under which the Euler scheme is a
    martingale). Returns ``{name: (mean, std_error)}`` at the final node.
    """
    _, df = forcing_from_rate(h, cs, kt, "spike")
    dt = grid.dt
    U = Z[:, :-1] - M[:, :-1]
    drift = cs.b(U) + df[:-1]
    sig2 = cs.sigma(U) ** 2
    z = Z[:, :-1]
    out = {}
    r1 = Z[:, -1] - Z[:, 0] - dt * drift.sum(axis=1)
    r2 = Z[:, -1] ** 2 - Z[:, 0] ** 2 - dt * (2 * z * drift + sig2).sum(axis=1)
    out["z"] = _mean_se(r1)
    out["z^2"] = _mean_se(r2)
    return out


# ---------------------------------------------------------------------------
# convergence study


@dataclass
class ConvergenceRow:
    N: int
    sup_dev: float
    sup_dev_se: float
    w1: dict
    w1_se: dict
    j_condition: float
    n_reps: int
    other: dict = field(default_factory=dict)  # neuron -> (sup_dev, se), non-uniform weights only


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)
    t_nodes: tuple = ()
    chaos: dict = field(default_factory=dict)

    def row(self, N):
        for r in self.rows:
            if r.N == N:
                return r
        raise KeyError(N)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["N", "n_reps", "j_condition", "sup_dev", "sup_dev_se"]
            for t in self.t_nodes:
                head += [f"w1_t{t:g}", f"w1_se_t{t:g}"]
            w.writerow(head)
            for r in self.rows:
                line = [r.N, r.n_reps, repr(r.j_condition), repr(r.sup_dev), repr(r.sup_dev_se)]
                for t in self.t_nodes:
                    line += [repr(r.w1[t]), repr(r.w1_se[t])]
                w.writerow(line)

    def long_rows(self):
        for r in self.rows:
            yield r.N, "sup_dev", r.sup_dev, r.sup_dev_se
            for i, (v, se) in r.other.items():
                yield r.N, f"sup_dev_i{i}", v, se
            for t in self.t_nodes:
                yield r.N, f"w1_t{t:g}", r.w1[t], r.w1_se[t]
            for est in self.chaos.get(r.N, []):
                yield r.N, f"cov_tanh_t{est.t:g}", est.cov, est.std_error

    def to_long_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "metric", "value", "se"])
            for N, name, v, se in self.long_rows():
                w.writerow([N, name, repr(float(v)), repr(float(se))])


def convergence_study(cs, kt, law, scheme_family, N_list, grid, n_reps, seed, h, *,
                      t_fracs=(0.25, 0.5, 1.0), crossing="grid", n_limit=20_000,
                      target=0, chaos_functional="tanh", workers=1):
    """Compare networks of growing size with the mean-field limit ``h``.

    For every ``N`` in ``N_list``, ``n_reps`` networks are simulated. Each
    contributes the sup-deviation of neuron ``target``'s empirical rate from
    ``h`` and the W1 distance between the weighted marginal of ``U_t`` and a
    limit sample of ``n_limit`` paths, at ``t = frac * T``. Pooled pair
    covariances of ``phi(U_t)`` are stored in ``table.chaos``. For
    non-uniform weights the sup-deviation of neuron ``N // 2`` is recorded
    too, so target dependence is visible rather than assumed away.
    """
    t_nodes = tuple(float(f * grid.T) for f in t_fracs)
    idx = [int(round(t / grid.dt)) for t in t_nodes]
    Zl, Ml = limit_samples(cs, law, grid, h, n_limit, seed, kt=kt, crossing=crossing,
                           workers=workers)
    Ul = {t: Zl[:, m] - Ml[:, m] for t, m in zip(t_nodes, idx)}
    table = ConvergenceTable(t_nodes=t_nodes)
    for N in N_list:
        if N < 2:
            raise ValueError("each N must be >= 2")
        w = scheme_family(N)
        weights, others = None, []
        if not w.is_uniform:
            weights = np.array([w.J(target, j) for j in range(N)])
            others = [i for i in (N // 2,) if i != target]
        sup_devs, w1s, snaps = [], {t: [] for t in t_nodes}, []
        other_devs = {i: [] for i in others}
        for r in range(n_reps):
            s = rng.child_seed(seed, rng.REPS, (N << 20) + r)
            traj, spikes = simulate_network(cs, kt, w, law, grid, s, crossing=crossing,
                                            workers=workers)
            rate = empirical_rate(spikes, w, target, grid)
            sup_devs.append(float(np.max(np.abs(rate - h.values))))
            for i in others:
                ri = empirical_rate(spikes, w, i, grid)
                other_devs[i].append(float(np.max(np.abs(ri - h.values))))
            for t, m in zip(t_nodes, idx):
                U = traj.Z[:, m] - traj.M[:, m]
                w1s[t].append(wasserstein1(U, Ul[t], weights, None))
            if w.is_uniform:
                snaps.append(traj.Z[:, idx] - traj.M[:, idx])
        sd, sd_se = _mean_se(sup_devs)
        w1, w1_se = {}, {}
        for t in t_nodes:
            w1[t], w1_se[t] = _mean_se(w1s[t])
        table.rows.append(ConvergenceRow(N, sd, sd_se, w1, w1_se, float(w.j_condition()), n_reps,
                                         {i: _mean_se(v) for i, v in other_devs.items()}))
        if snaps and n_reps >= 3:
            arr = np.stack(snaps)  # (reps, N, nodes)
            table.chaos[N] = [CovEstimate(t, *pooled_covariance(_apply(chaos_functional, arr[:, :, k])))
                              for k, t in enumerate(t_nodes)]
    return table
