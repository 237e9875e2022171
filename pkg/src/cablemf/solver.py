"""Fixed-point solver for the mean-field rate ``h(t) = E[M_t]``.

Given a candidate rate ``h`` the forcing ``f_h(t) = H(t) + int_0^t G(t - s) h(s) ds``
drives a single neuron in Z-form; ``Phi(h)(t)`` is its expected spike count.
The limit rate is the fixed point of ``Phi``, reached by Picard iteration
from ``h_0``. Two evaluators of ``Phi`` are available: direct Monte Carlo of
the forced neuron, and a renewal (Volterra) equation whose kernel is the
first-passage CDF after a reset.
"""

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.interpolate import CubicSpline

from . import rng
from .hitting import ForcedDiffusion, hitting_cdf_mc
from .kernel import tabulate_kernel
from .model import SmoothFunction, sample_initial
from .particle import NumericalBlowUp, euler_step


@dataclass(frozen=True)
class RateFunction:
    """Values and derivative of a rate on the grid nodes, with MC errors."""

    grid: object
    values: np.ndarray
    derivs: np.ndarray
    se_values: np.ndarray = None
    se_derivs: np.ndarray = None

    def __post_init__(self):
        n = self.grid.n_steps + 1
        for name in ("values", "derivs", "se_values", "se_derivs"):
            a = getattr(self, name)
            a = np.zeros(n) if a is None else np.array(a, dtype=float)
            if a.shape != (n,):
                raise ValueError(f"{name} must have one entry per grid node")
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def zero(cls, grid):
        return cls(grid, np.zeros(grid.n_steps + 1), np.zeros(grid.n_steps + 1))

    @property
    def t(self):
        return self.grid.t

    @property
    def noise_floor(self):
        """C1-norm of the Monte Carlo standard errors."""
        return float(np.max(self.se_values) + np.max(self.se_derivs))

    def check(self, tol=1e-12):
        """Problems with the rate-function invariants, as a list of strings."""
        out = []
        if abs(self.values[0]) > tol:
            out.append(f"h(0) = {self.values[0]:.3g}")
        if np.any(np.diff(self.values) < -tol):
            out.append("h decreases")
        if np.any(self.derivs < -tol):
            out.append("h' negative")
        return out

    def consistency(self):
        """Max gap between ``h`` and the trapezoid integral of ``h'``."""
        dt = self.grid.dt
        integ = np.concatenate([[0.0], np.cumsum(0.5 * dt * (self.derivs[1:] + self.derivs[:-1]))])
        return float(np.max(np.abs(integ + self.values[0] - self.values)))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "h", "dh", "se_h", "se_dh"])
            for row in zip(self.t, self.values, self.derivs, self.se_values, self.se_derivs):
                w.writerow([repr(float(v)) for v in row])


def c1_distance(a, b):
    """``sup |a - b| + sup |a' - b'|`` on the shared grid."""
    return float(np.max(np.abs(a.values - b.values)) + np.max(np.abs(a.derivs - b.derivs)))


def _table(cs, grid, kt):
    if kt is None:
        kt = tabulate_kernel(cs.G, grid.T, grid.n_steps)
    if not kt.compatible(grid.dt, grid.T):
        raise ValueError("kernel table grid does not match the solver grid")
    return kt


def forcing_from_rate(h, cs, kt=None, method="trapezoid"):
    """Return ``(f_h, f_h')`` on the grid nodes.

    ``method="trapezoid"`` integrates ``G(t - s) h(s)`` and ``G'(t - s) h(s)``
    with the trapezoid rule. ``method="spike"`` evaluates the derivative as
    ``G(t_m) h(0) + sum_l G(t_m - t_l) (h_l - h_{l-1})``, the expectation of
    the grid interaction used by the network simulator; ``f_h`` itself is the
    matching sum of ``Ghat``.
    """
    grid = h.grid
    kt = _table(cs, grid, kt)
    n, dt, t = grid.n_steps, grid.dt, grid.t
    G, dG, Gh = kt.G[: n + 1], kt.dG[: n + 1], kt.Ghat[: n + 1]
    H = np.asarray(cs.H(t), dtype=float) * np.ones(n + 1)
    dH = np.asarray(cs.H.d(1)(t), dtype=float) * np.ones(n + 1)
    hv = h.values
    if method == "trapezoid":
        def trap(K):
            full = np.convolve(K, hv)[: n + 1]
            return dt * (full - 0.5 * (K * hv[0] + K[0] * hv))
        return H + trap(G), dH + trap(dG)
    if method == "spike":
        jumps = np.concatenate([[hv[0]], np.diff(hv)])
        return H + np.convolve(Gh, jumps)[: n + 1], dH + np.convolve(G, jumps)[: n + 1]
    raise ValueError(f"unknown forcing method {method!r}")


def _smoother(n, dt, bandwidth):
    """Row-normalised Gaussian weights mapping cell rates to node values."""
    nodes = np.arange(n + 1) * dt
    mids = (np.arange(n) + 0.5) * dt
    W = np.exp(-0.5 * ((nodes[:, None] - mids[None, :]) / bandwidth) ** 2)
    W[W < 1e-16] = 0.0
    return W / W.sum(axis=1, keepdims=True)


def _initial_states(law, n_mc, seed, u0):
    if u0 is not None:
        return np.asarray(u0, dtype=float)
    return sample_initial(law, n_mc, seed)


def simulate_forced(cs, law, grid, dforcing, n_mc, seed, *, crossing="grid", u0=None,
                    H0=None, workers=1, keep_paths=False):
    """Simulate ``n_mc`` independent Z-form neurons with drift ``b + dforcing``.

    Returns ``(M, Z)`` where ``M`` is the integer count array of shape
    ``(n_mc, n_steps + 1)`` and ``Z`` is the final state (or all states when
    ``keep_paths``).
    """
    n, dt = grid.n_steps, grid.dt
    u0 = _initial_states(law, n_mc, seed, u0)
    H0 = float(cs.H(0.0)) if H0 is None else H0
    ids = np.arange(n_mc)
    xi = rng.block(seed, rng.NOISE, ids, n, "normal", workers)
    v = rng.block(seed, rng.CROSS, ids, n, "uniform", workers) if crossing == "bridge" else None
    Z = u0 + H0
    zmax = Z.copy()
    M = np.zeros((n_mc, n + 1), dtype=np.int64)
    M[:, 0] = np.floor(np.maximum(zmax, 0.0)).astype(np.int64)
    paths = np.empty((n_mc, n + 1)) if keep_paths else None
    if keep_paths:
        paths[:, 0] = Z
    for m in range(n):
        Z, M[:, m + 1], zmax = euler_step(cs, Z, M[:, m], zmax, dforcing[m], dt, xi[:, m],
                                          None if v is None else v[:, m])
        if not np.all(np.isfinite(Z)):
            raise NumericalBlowUp(m + 1)
        if keep_paths:
            paths[:, m + 1] = Z
    return M, (paths if keep_paths else Z)


def phi_mc(h, cs, law, grid, n_mc, seed, *, kt=None, crossing="grid", bandwidth=None,
           forcing="spike", workers=1):
    """Monte Carlo evaluation of ``Phi(h)``.

    The same ``seed`` reproduces the same initial states and noise, so
    successive Picard iterates differ only through ``h``. The derivative is
    a Gaussian-kernel smoothing (default bandwidth ``4 dt``) of the per-cell
    spike rate.
    """
    _, df = forcing_from_rate(h, cs, kt, forcing)
    M, _ = simulate_forced(cs, law, grid, df, n_mc, seed, crossing=crossing, workers=workers)
    n, dt = grid.n_steps, grid.dt
    M = M - M[:, :1]
    values = M.mean(axis=0)
    se_values = M.std(axis=0, ddof=1) / math.sqrt(n_mc)
    W = _smoother(n, dt, bandwidth or 4 * dt)
    inc = sparse.csr_matrix(np.diff(M, axis=1).astype(float) / dt)
    per_path = (inc @ W.T)
    if sparse.issparse(per_path):
        per_path = per_path.toarray()
    derivs = per_path.mean(axis=0)
    se_derivs = per_path.std(axis=0, ddof=1) / math.sqrt(n_mc)
    return RateFunction(grid, values, derivs, se_values, se_derivs)


# ---------------------------------------------------------------------------
# renewal evaluator


def _shifted(spline, s):
    f = lambda r: spline(s + np.asarray(r, dtype=float))
    return SmoothFunction(f, (lambda r: spline(s + np.asarray(r, dtype=float), 1),), "shifted")


def phi_renewal(h, cs, law, grid, n_mc=10_000, seed=0, *, kt=None, n_mix=512, substeps=4,
                forcing="spike", workers=1):
    """Evaluate ``Phi(h)`` through the renewal equation.

    ``Phi(t) = P(tau_1 <= t) + int_0^t K(s, t) Phi'(s) ds`` with
    ``K(s, t) = P_0(tau_1 <= t - s)`` for the neuron restarted at 0 at time
    ``s`` under the forcing derivative ``f_h'(s + .)``. The equation is solved
    for the cell rates of ``Phi`` by forward substitution (left rectangle
    in ``s``). Rows of ``K`` come from :func:`hitting_cdf_mc` with per-row
    seeds; the first term mixes over ``n_mix`` quantiles of the initial law.
    """
    _, df = forcing_from_rate(h, cs, kt, forcing)
    n, dt, t = grid.n_steps, grid.dt, grid.t
    spline = CubicSpline(t, df)
    step = dt / substeps
    H0 = float(cs.H(0.0))
    x0 = law.quantiles(n_mix) + H0
    fd0 = ForcedDiffusion(cs.b, cs.sigma, _shifted(spline, 0.0), 0.0, grid.T)
    first = hitting_cdf_mc(fd0, t, n_mc, rng.child_seed(seed, rng.ROWS, 0), step, x0=x0)

    const = bool(np.all(df == df[0]))

    def row(l):
        fd = ForcedDiffusion(cs.b, cs.sigma, _shifted(spline, t[l]), 0.0, grid.T - t[l])
        est = hitting_cdf_mc(fd, t[: n - l + 1], n_mc, rng.child_seed(seed, rng.ROWS, l + 1), step)
        return est.cdf, est.std_error

    K = np.zeros((n + 1, n + 1))
    Kse = np.zeros((n + 1, n + 1))
    rows = [0] if const else list(range(n))
    if workers > 1 and len(rows) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(row, rows))
    else:
        results = [row(l) for l in rows]
    if const:
        cdf0, se0 = results[0]
        for l in range(n):
            K[l, l:] = cdf0[: n - l + 1]
            Kse[l, l:] = se0[: n - l + 1]
    else:
        for l, (c, s) in zip(rows, results):
            K[l, l:] = c
            Kse[l, l:] = s
    F1 = first.cdf
    mass = np.zeros(n)  # q_l dt, mass of Phi' on cell l
    for m in range(n):
        rhs = F1[m + 1] - np.sum(mass[:m] * (1.0 - K[:m, m + 1]))
        mass[m] = rhs / (1.0 - K[m, m + 1])
    values = np.concatenate([[0.0], np.cumsum(mass)])
    q = mass / dt
    derivs = np.empty(n + 1)
    derivs[0], derivs[-1] = q[0], q[-1]
    derivs[1:-1] = 0.5 * (q[1:] + q[:-1])
    # first-order error propagation, ignoring feedback through Phi'
    se_values = np.sqrt(first.std_error**2 + np.array(
        [np.sum((mass[:m] * Kse[:m, m]) ** 2) for m in range(n + 1)]))
    se_derivs = np.concatenate([[0.0], np.diff(se_values)]) / dt
    se_derivs = np.abs(se_derivs)
    return RateFunction(grid, np.maximum.accumulate(values), np.maximum(derivs, 0.0),
                        se_values, se_derivs)


# ---------------------------------------------------------------------------
# Picard iteration


@dataclass
class PicardDiagnostics:
    distances: list = field(default_factory=list)
    noise_floors: list = field(default_factory=list)
    residual: float = float("nan")
    converged: bool = False
    iterations: int = 0
    tol: float = float("nan")

    @property
    def status(self):
        return "converged" if self.converged else "not converged"

    def lines(self):
        out = [f"status: {self.status}", f"iterations: {self.iterations}",
               f"tol: {self.tol!r}", f"residual: {self.residual!r}"]
        for k, (d, f) in enumerate(zip(self.distances, self.noise_floors), start=1):
            out.append(f"iteration {k}: distance {d!r} noise_floor {f!r}")
        return out


def picard_solve(cs, law, grid, tol=None, max_iter=12, evaluator="mc", n_mc=20_000, seed=0,
                 *, h0=None, kt=None, crossing="grid", bandwidth=None, workers=1, **renewal):
    """Iterate ``h_{n+1} = Phi(h_n)`` from ``h0`` (default zero).

    Stops when the C1 distance between successive iterates falls below
    ``tol``; ``tol=None`` uses the Monte Carlo noise floor of the latest
    iterate. Every iteration uses the same seed.
    """
    kt = _table(cs, grid, kt)
    if evaluator == "mc":
        evaluate = lambda h: phi_mc(h, cs, law, grid, n_mc, seed, kt=kt, crossing=crossing,
                                    bandwidth=bandwidth, workers=workers)
    elif evaluator == "renewal":
        evaluate = lambda h: phi_renewal(h, cs, law, grid, n_mc, seed, kt=kt, workers=workers,
                                         **renewal)
    else:
        raise ValueError(f"unknown evaluator {evaluator!r}")
    h = RateFunction.zero(grid) if h0 is None else h0
    diag = PicardDiagnostics()
    for k in range(1, max_iter + 1):
        nxt = evaluate(h)
        d = c1_distance(nxt, h)
        floor = nxt.noise_floor
        diag.distances.append(d)
        diag.noise_floors.append(floor)
        diag.iterations = k
        h = nxt
        limit = floor if tol is None else tol
        if d < limit:
            diag.converged = True
            break
    diag.tol = floor if tol is None else tol
    diag.residual = diag.distances[-1]
    return h, diag


# ---------------------------------------------------------------------------
# stability envelope


@dataclass(frozen=True)
class StabilityEnvelope:
    """Piecewise a-priori bound ``g`` on the expected spike count."""

    R: float
    lambda_b: float
    lambda_sigma: float
    H_sup: float
    G_sup: float
    c: float = 2.0

    @property
    def T0(self):
        return math.inf if self.G_sup == 0 else 1.0 / (2.0 * self.G_sup)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.vectorize(self._scalar, otypes=[float])(t)
        return out if out.ndim else float(out)

    def _scalar(self, t):
        lb, ls, c, H = self.lambda_b, self.lambda_sigma, self.c, self.H_sup
        T0 = self.T0
        if t <= T0:
            return 2.0 * (self.R + lb * t + c * ls * math.sqrt(t) + H) * math.exp(4 * lb * t)
        k = int(math.ceil(t / T0)) - 1
        Tbar = k * T0
        gbar = self._scalar(Tbar)
        s = t - Tbar
        return 2.0 * (gbar + lb * s + c * ls * math.sqrt(s) + 2 * H) * math.exp(4 * lb * s)

    def to_csv(self, path, t):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "g"])
            for tt, g in zip(t, self(t)):
                w.writerow([repr(float(tt)), repr(float(g))])


def stability_envelope(cs, R, T, c=2.0, kt=None, n_probe=2001):
    """Envelope built from ``cs``; sup norms of ``H`` and ``G`` are taken on ``[0, T]``."""
    t = np.linspace(0.0, T, n_probe)
    H_sup = float(np.max(np.abs(np.asarray(cs.H(t), dtype=float) * np.ones_like(t))))
    if kt is not None:
        G_sup = kt.sup_norm
    else:
        G_sup = float(np.max(np.abs(np.asarray(cs.G(t), dtype=float) * np.ones_like(t))))
    return StabilityEnvelope(float(R), cs.lambda_b, cs.lambda_sigma, H_sup, G_sup, c)


def envelope_start(env, grid):
    """Warm start ``h_0 = g / 2`` with a finite-difference derivative."""
    g = env(grid.t)
    return RateFunction(grid, g / 2, np.gradient(g / 2, grid.dt))
