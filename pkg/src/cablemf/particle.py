"""Finite network simulation in the continuous ``Z = U + M`` form.

Each neuron's ``Z`` path is continuous; its spike count is recovered as
``M = floor((running max of Z)_+)`` and the potential as ``U = Z - M``. The
interaction enters the drift through the time derivative of
``sum_j J_ij / S_i int_0^t G(t - s) M^j_s ds``, which for spike trains equals
``sum_j J_ij / S_i sum_k G(t - tau_k^j)``.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .kernel import tabulate_kernel
from .model import sample_initial


class NumericalBlowUp(RuntimeError):
    def __init__(self, step):
        super().__init__(f"numerical blow-up: non-finite state at step {step}")
        self.step = step


@dataclass(frozen=True)
class Grid:
    T: float
    n_steps: int

    def __post_init__(self):
        if self.T <= 0 or self.n_steps < 1:
            raise ValueError("grid needs T > 0 and n_steps >= 1")

    @property
    def dt(self):
        return self.T / self.n_steps

    @property
    def t(self):
        return np.arange(self.n_steps + 1) * self.dt

    def refined(self, factor=2):
        return Grid(self.T, self.n_steps * factor)


@dataclass(frozen=True)
class SpikeRecord:
    """Per-neuron spike times, sorted.

    Ties occur only when a path passes two integer levels within one step.
    """

    times: tuple

    @property
    def N(self):
        return len(self.times)

    def counts(self, t):
        """Spike counts ``M^j(t)`` for every neuron at each time in ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.stack([np.searchsorted(tj, t, side="right") for tj in self.times])

    def total(self):
        return int(sum(len(tj) for tj in self.times))

    @classmethod
    def from_counts(cls, M, t):
        """Rebuild spike times from integer count paths on grid nodes ``t``."""
        out = []
        for row in np.asarray(M):
            inc = np.diff(row)
            out.append(np.repeat(t[1:], inc).astype(float))
        return cls(tuple(out))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["neuron", "k", "tau"])
            for i, tj in enumerate(self.times):
                for k, tau in enumerate(tj, start=1):
                    w.writerow([i, k, repr(float(tau))])


@dataclass(frozen=True)
class TrajectorySet:
    Z: np.ndarray
    M: np.ndarray
    grid: Grid
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def U(self):
        return reconstruct_U(self)

    def to_csv(self, path):
        U = self.U
        t = self.grid.t
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["neuron", "t", "Z", "M", "U"])
            for i in range(self.Z.shape[0]):
                for m in range(len(t)):
                    w.writerow([i, repr(float(t[m])), repr(float(self.Z[i, m])),
                                int(self.M[i, m]), repr(float(U[i, m]))])


def reconstruct_U(traj):
    """Potential ``U = Z - M`` per neuron and node."""
    return traj.Z - traj.M


def bridge_max(a, b, var, v):
    """Maximum of a Brownian bridge from ``a`` to ``b`` with variance ``var``.

    ``v`` is uniform on (0, 1); the result is an exact draw for a bridge with
    constant diffusion over the step.
    """
    v = np.maximum(v, np.finfo(float).tiny)
    return 0.5 * (a + b + np.sqrt((b - a) ** 2 - 2.0 * var * np.log(v)))


def euler_step(cs, Z, M, zmax, extra, dt, xi, v=None):
    """One Euler-Maruyama step of the Z-form for all paths at once.

    ``extra`` is the non-local part of the drift (``H'`` plus interaction).
    ``v`` switches on the Brownian-bridge maximum within the step. Returns the
    new ``(Z, M, zmax)``.
    """
    U = Z - M
    sig = cs.sigma(U)
    Zn = Z + (extra + cs.b(U)) * dt + sig * np.sqrt(dt) * xi
    if v is None:
        top = Zn
    else:
        top = bridge_max(Z, Zn, sig * sig * dt, v)
    zmax = np.maximum(zmax, top)
    with np.errstate(invalid="ignore"):  # non-finite states are caught by the caller
        Mn = np.maximum(M, np.floor(np.maximum(zmax, 0.0)).astype(np.int64))
    return Zn, Mn, zmax


def _noise(seed, ids, n, crossing, workers):
    xi = rng.block(seed, rng.NOISE, ids, n, "normal", workers)
    v = rng.block(seed, rng.CROSS, ids, n, "uniform", workers) if crossing == "bridge" else None
    return xi, v


def _prepare(cs, kt, w, law, grid, seed, u0, stream_ids, crossing, workers):
    if crossing not in ("grid", "bridge"):
        raise ValueError(f"unknown crossing mode {crossing!r}")
    if kt is None:
        kt = tabulate_kernel(cs.G, grid.T, grid.n_steps)
    if not kt.compatible(grid.dt, grid.T):
        raise ValueError("kernel table grid does not match the simulation grid")
    N = w.N
    u0 = sample_initial(law, N, seed) if u0 is None else np.asarray(u0, dtype=float)
    if u0.shape != (N,):
        raise ValueError("u0 must have one entry per neuron")
    ids = np.arange(N) if stream_ids is None else np.asarray(stream_ids)
    xi, v = _noise(seed, ids, grid.n_steps, crossing, workers)
    t = grid.t
    dH = np.asarray(cs.H.d(1)(t[:-1]), dtype=float)
    H0 = float(cs.H(0.0))
    Gn = kt.G[: grid.n_steps + 1]
    Wn = None if w.is_uniform else w.normalized()
    return kt, u0, xi, v, dH, H0, Gn, Wn


class _Interaction:
    """Running interaction drift ``sum_l G(t_m - t_l) (W dM_l)``."""

    def __init__(self, N, n_steps, G, W):
        self.G = G
        self.W = W
        if W is None:
            self.tot = np.zeros(n_steps + 1)
        else:
            self.A = np.zeros((N, n_steps + 1))
        self.N = N

    def add(self, m, dM):
        if not np.any(dM):
            return
        if self.W is None:
            self.tot[m] = float(dM.sum())
        else:
            idx = np.nonzero(dM)[0]
            self.A[:, m] = self.W[:, idx] @ dM[idx].astype(float)

    def drift(self, m):
        g = self.G[m::-1]
        if self.W is None:
            return float(self.tot[: m + 1] @ g) / self.N
        return self.A[:, : m + 1] @ g


def simulate_network(cs, kt, w, law, grid, seed, *, crossing="grid", u0=None,
                     stream_ids=None, workers=1):
    """Simulate the N-neuron network on ``grid``.

    Spikes are detected at grid nodes (``crossing="grid"``) or, with
    ``crossing="bridge"``, from the exact maximum of the Brownian bridge within
    each step; either way a spike is dated at the end node of its step.
    Neuron ``i`` uses noise stream ``stream_ids[i]`` (default ``i``).
    """
    kt, u0, xi, v, dH, H0, Gn, Wn = _prepare(cs, kt, w, law, grid, seed, u0, stream_ids,
                                           crossing, workers)
    N, n, dt = w.N, grid.n_steps, grid.dt
    Z = np.empty((N, n + 1))
    M = np.zeros((N, n + 1), dtype=np.int64)
    Z[:, 0] = u0 + H0
    zmax = Z[:, 0].copy()
    M[:, 0] = np.floor(np.maximum(zmax, 0.0)).astype(np.int64)
    inter = _Interaction(N, n, Gn, Wn)
    for m in range(n):
        extra = dH[m] + inter.drift(m)
        z, mm, zmax = euler_step(cs, Z[:, m], M[:, m], zmax, extra, dt, xi[:, m],
                                 None if v is None else v[:, m])
        if not np.all(np.isfinite(z)):
            raise NumericalBlowUp(m + 1)
        Z[:, m + 1], M[:, m + 1] = z, mm
        inter.add(m + 1, mm - M[:, m])
    meta = {"crossing": crossing, "scheme": "euler-maruyama/z-form", "N": N}
    traj = TrajectorySet(Z, M, grid, seed, meta)
    return traj, SpikeRecord.from_counts(M, grid.t)


def event_based_reference(cs, w, law, grid, seed, *, kt=None, crossing="grid", u0=None,
                          stream_ids=None):
    """Direct simulation of the potentials with explicit resets.

    Uses the same noise streams as :func:`simulate_network`; a neuron whose
    potential reaches the threshold is reset by the number of levels passed.
    Intended for small networks (``N <= 16``) as a cross-check.
    """
    if w.N > 16:
        raise ValueError("event_based_reference is limited to N <= 16")
    kt, u0, xi, v, dH, H0, Gn, Wn = _prepare(cs, kt, w, law, grid, seed, u0, stream_ids,
                                           crossing, 1)
    N, n, dt = w.N, grid.n_steps, grid.dt
    U = np.empty((N, n + 1))
    M = np.zeros((N, n + 1), dtype=np.int64)
    U[:, 0] = u0 + H0
    count = np.zeros(N, dtype=np.int64)
    # excess of the running maximum over the last level passed
    peak = U[:, 0].copy()
    inter = _Interaction(N, n, Gn, Wn)
    for m in range(n):
        u = U[:, m]
        sig = cs.sigma(u)
        extra = dH[m] + inter.drift(m)
        un = u + (extra + cs.b(u)) * dt + sig * np.sqrt(dt) * xi[:, m]
        top = un if v is None else bridge_max(u, un, sig * sig * dt, v[:, m])
        peak = np.maximum(peak, top)
        fired = np.floor(np.maximum(peak, 0.0)).astype(np.int64)
        if not np.all(np.isfinite(un)):
            raise NumericalBlowUp(m + 1)
        un = un - fired
        peak = peak - fired
        count = count + fired
        U[:, m + 1], M[:, m + 1] = un, count
        inter.add(m + 1, fired)
    Z = U + M
    meta = {"crossing": crossing, "scheme": "euler-maruyama/reset-form", "N": N}
    return TrajectorySet(Z, M, grid, seed, meta), SpikeRecord.from_counts(M, grid.t)


def interaction_term(spikes, w, kt, i, t):
    """``sum_j J_ij / S_i sum_{tau_k^j <= t} Ghat(t - tau_k^j)`` for neuron ``i``."""
    S = w.row_sums()[i]
    total = 0.0
    for j, tj in enumerate(spikes.times):
        Jij = w.J(i, j)
        if Jij == 0.0 or len(tj) == 0:
            continue
        past = tj[tj <= t]
        if past.size:
            total += Jij / S * float(np.sum(kt.ghat(t - past)))
    return total
