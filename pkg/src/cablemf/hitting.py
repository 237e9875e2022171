"""First-passage densities of a forced one-dimensional diffusion.

The diffusion is ``dX = (b(X) + alpha(t)) dt + sigma(X) dW`` started at
``x < 1``; the quantity of interest is the density of the first time it
reaches 1. Two estimators are provided:

* an exact representation through the Lamperti map ``S(z) = int_0^z 1/sigma``,
  a Girsanov weight and a Bessel(3) bridge, estimated by Monte Carlo over
  bridge paths (:func:`hitting_density_bridge`);
* a plain Euler scheme with a Brownian-bridge survival weight for the CDF
  (:func:`hitting_cdf_mc`), used as an independent check.
"""

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate

from . import rng
from .kernel import _hermite_interp
from .model import SmoothFunction, constant

_GL_X, _GL_W = leggauss(8)


class HittingError(ValueError):
    pass


@dataclass(frozen=True)
class ForcedDiffusion:
    b: SmoothFunction
    sigma: SmoothFunction
    alpha: SmoothFunction
    x: float
    T: float

    @classmethod
    def from_coefficients(cls, cs, alpha=None, x=0.0, T=1.0):
        alpha = constant(0.0) if alpha is None else alpha
        return cls(cs.b, cs.sigma, alpha, float(x), float(T))

    def with_start(self, x):
        return ForcedDiffusion(self.b, self.sigma, self.alpha, float(x), self.T)


@dataclass(frozen=True)
class DensityEstimate:
    value: float
    std_error: float
    n_samples: int
    ess: float = 1.0


class _Cumulative:
    """``F(w) = int_0^w f`` tabulated on a uniform grid.

    Node values come from 8-point Gauss-Legendre per cell; between nodes the
    cubic Hermite interpolant with slopes ``f`` is used.
    """

    def __init__(self, f, lo, hi, n):
        self.f, self.lo, self.hi = f, float(lo), float(hi)
        self.w = np.linspace(lo, hi, n + 1)
        self.h = (hi - lo) / n
        mid = 0.5 * (self.w[:-1] + self.w[1:])
        cells = 0.5 * self.h * (f(mid[:, None] + 0.5 * self.h * _GL_X) @ _GL_W)
        self.dF = np.asarray(f(self.w), dtype=float)
        # extended precision keeps long cumulative sums exact to rounding
        self.F = np.concatenate([[0.0], np.cumsum(cells.astype(np.longdouble)).astype(float)])
        self.F = self.F - self(0.0)

    def __call__(self, w):
        return _hermite_interp(None, self.h, self.F, self.dF, np.asarray(w, dtype=float) - self.lo)


class LampertiMap:
    """Tabulated ``S(z) = int_0^z 1/sigma`` and its inverse on ``[lo, hi]``."""

    def __init__(self, sigma, lo, hi, tol=1e-10, n=None, probes=None):
        if not lo < 0.0 < hi:
            lo, hi = min(lo, -1.0), max(hi, 1.0)
        self.sigma, self.lo, self.hi, self.tol = sigma, float(lo), float(hi), tol
        n = n or max(256, int(math.ceil((hi - lo) / 2e-3)))
        if probes is None:
            probes = np.linspace(lo, hi, 1001)
        sp = np.asarray(sigma(probes), dtype=float) * np.ones_like(probes)
        # constant diffusion: the map is linear and needs no table
        self.scale = float(sp[0]) if np.all(sp == sp[0]) else None
        if self.scale is not None:
            self.ylo, self.yhi = self.lo / self.scale, self.hi / self.scale
            self.round_trip_error = float(np.max(np.abs(self.inverse(self.S(probes)) - probes)))
            return
        for _ in range(6):
            self._build(n)
            err = float(np.max(np.abs(self.inverse(self.S(probes)) - probes)))
            if err < tol:
                break
            n *= 2
        else:
            raise HittingError(f"Lamperti round trip error {err:.2e} above {tol:.0e}")
        self.round_trip_error = err

    def _build(self, n):
        sig = self.sigma
        self._S = _Cumulative(lambda w: 1.0 / sig(w), self.lo, self.hi, n)
        self._Q = _Cumulative(lambda w: 1.0 / sig(w) ** 2, self.lo, self.hi, n)
        ylo, yhi = float(self._S(self.lo)), float(self._S(self.hi))
        y = np.linspace(ylo, yhi, n + 1)
        w = np.interp(y, self._S.F, self._S.w)
        for _ in range(4):
            w = np.clip(w - (self._S(w) - y) * sig(w), self.lo, self.hi)
        self._y, self._w, self._dw = y, w, np.asarray(sig(w), dtype=float)
        self._hy = (yhi - ylo) / n
        self.ylo, self.yhi = ylo, yhi

    def S(self, z):
        z = np.asarray(z, dtype=float)
        if np.any(z < self.lo - 1e-12) or np.any(z > self.hi + 1e-12):
            raise HittingError(f"Lamperti map evaluated outside [{self.lo}, {self.hi}]")
        if self.scale is not None:
            return z / self.scale
        return self._S(z)

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y < self.ylo - 1e-12) or np.any(y > self.yhi + 1e-12):
            raise HittingError("Lamperti inverse evaluated outside the tabulated range")
        if self.scale is not None:
            return y * self.scale
        return _hermite_interp(None, self._hy, self._w, self._dw, y - self.ylo)

    def Q(self, w):
        """``int_0^w sigma^-2``, the coefficient of ``alpha`` in ``h``."""
        if self.scale is not None:
            return np.asarray(w, dtype=float) / self.scale**2
        return self._Q(w)


def lamperti(sigma, z_range, tol=1e-10):
    """Build the Lamperti map of ``sigma`` (a function or a coefficient set)."""
    sigma = getattr(sigma, "sigma", sigma)
    return LampertiMap(sigma, z_range[0], z_range[1], tol)


# ---------------------------------------------------------------------------
# Bessel bridge


def _unit_time_nodes(n_times):
    v = np.linspace(0.0, 1.0, n_times)
    gam = v[:-1] / (1.0 - v[:-1])
    return v, gam


def _brownian_at(gam, n_paths, gen):
    """Three independent Brownian paths at times ``gam`` (gam[0] = 0)."""
    inc = np.sqrt(np.diff(gam))
    z = gen.standard_normal((3, n_paths, len(inc))) * inc
    out = np.zeros((3, n_paths, len(gam)))
    np.cumsum(z, axis=2, out=out[:, :, 1:])
    return out


def _bridge_from_unit(B, v, y0, y1, t):
    """Bridge values at ``u = v t`` from unit-time Brownian coordinates.

    Brownian scaling gives ``B(gamma t) = sqrt(t) B(gamma)``; the last node
    is pinned to ``y1``.
    """
    d = y1 - y0
    st = math.sqrt(t)
    R = np.sqrt((d + st * B[0]) ** 2 + (st * B[1]) ** 2 + (st * B[2]) ** 2)
    r = np.empty((B.shape[1], len(v)))
    r[:, :-1] = y1 - (1.0 - v[:-1]) * R
    r[:, 0] = y0
    r[:, -1] = y1
    return r


def bessel_bridge_path(y0, y1, t, n_times, seed, n_paths=1):
    """Sample Bessel(3)-bridge paths from ``(0, y0)`` to ``(t, y1)``.

    Returns ``(u, r)`` with ``r`` of shape ``(n_paths, n_times)``. The path is
    ``y1 - ((t - u) / t) R(u t / (t - u))`` where ``R`` is a three-dimensional
    Bessel process from ``y1 - y0``.
    """
    if t <= 0:
        raise HittingError("bridge length t must be positive")
    if y1 < y0:
        raise HittingError("bridge needs y1 >= y0")
    if n_times < 2:
        raise HittingError("n_times must be >= 2")
    v, gam = _unit_time_nodes(n_times)
    B = _brownian_at(gam, n_paths, rng.stream(seed, rng.BRIDGE, 0))
    return v * t, _bridge_from_unit(B, v, y0, y1, t)


# ---------------------------------------------------------------------------
# density by the bridge representation


class _Girsanov:
    """Ingredients ``h(t, z)`` and ``g(t, z)`` of the density formula."""

    def __init__(self, fd, lmap):
        self.fd, self.lmap = fd, lmap
        self.sig0 = float(fd.sigma(0.0))

    def A(self, w):
        """``int_0^w b / sigma^2 - log(sigma(w) / sigma(0)) / 2``."""
        b, sig = self.fd.b, self.fd.sigma
        val = integrate.quad(lambda v: float(b(v)) / float(sig(v)) ** 2, 0.0, w,
                             epsabs=1e-13, epsrel=1e-13, limit=200)[0]
        return val - 0.5 * math.log(float(sig(w)) / self.sig0)

    def h(self, t, w):
        return self.A(w) + float(self.fd.alpha(t)) * float(self.lmap.Q(w))

    def g(self, u, z):
        fd = self.fd
        w = self.lmap.inverse(z)
        s, ds, d2s = fd.sigma(w), fd.sigma.d(1)(w), fd.sigma.d(2)(w)
        bw, dbw = fd.b(w), fd.b.d(1)(w)
        a, da = fd.alpha(u), fd.alpha.d(1)(u)
        B = bw / s - 0.5 * ds + a / s
        dB = dbw - bw * ds / s - 0.5 * s * d2s - a * ds / s
        return B * B + 2.0 * da * self.lmap.Q(w) + dB


def _lamperti_for(fd, ts, lo=None):
    t_max = float(np.max(ts))
    lam = max(float(np.max(fd.sigma(np.linspace(fd.x - 1, 2, 64)))), 1.0)
    lo = fd.x - 1.0 - 14.0 * lam * lam * math.sqrt(t_max) if lo is None else lo
    return LampertiMap(fd.sigma, lo, 1.0 + 1e-9)


_CHUNK = 4096


def _bridge_samples(fd, ts, n_mc, n_times, seed, lmap=None):
    """Per-path density samples, shape ``(n_mc, len(ts))``.

    All times share the same unit-time Brownian draws, rescaled.
    """
    if fd.x >= 1.0:
        raise HittingError("start at or above threshold")
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if np.any(ts <= 0):
        raise HittingError("t must be positive")
    lmap = lmap or _lamperti_for(fd, ts)
    gir = _Girsanov(fd, lmap)
    y0, y1 = float(lmap.S(fd.x)), float(lmap.S(1.0))
    d = y1 - y0
    A0, A1 = gir.A(fd.x), gir.A(1.0)
    Q0, Q1 = float(lmap.Q(fd.x)), float(lmap.Q(1.0))
    a0 = float(fd.alpha(0.0))
    v, gam = _unit_time_nodes(n_times)
    wts = np.full(n_times, 1.0 / (n_times - 1))
    wts[[0, -1]] *= 0.5
    pre = np.empty(len(ts))
    for j, s in enumerate(ts):
        logp = (A1 + float(fd.alpha(s)) * Q1) - (A0 + a0 * Q0)
        pre[j] = math.exp(logp - d * d / (2 * s)) * d / math.sqrt(2 * math.pi * s**3)
    out = np.empty((n_mc, len(ts)))
    for c, start in enumerate(range(0, n_mc, _CHUNK)):
        m = min(_CHUNK, n_mc - start)
        B = _brownian_at(gam, m, rng.stream(seed, rng.BRIDGE, c))
        for j, s in enumerate(ts):
            r = _bridge_from_unit(B, v, y0, y1, s)
            gv = gir.g(v * s, r)
            out[start:start + m, j] = pre[j] * np.exp(-0.5 * s * (gv @ wts))
    return out


def _summarize(samples, warn=True):
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    sq = (samples**2).sum(axis=0)
    ess = np.where(sq > 0, samples.sum(axis=0) ** 2 / np.where(sq > 0, sq, 1.0) / n, 1.0)
    if warn and np.any(ess < 0.1):
        warnings.warn(f"low effective sample size in bridge estimator "
                      f"(min {float(np.min(ess)):.3f} of n)", RuntimeWarning, stacklevel=3)
    return mean, se, ess


def hitting_density_bridge(fd, t, n_mc=10_000, n_times=256, seed=0):
    """Estimate the first-passage density at ``t`` (scalar or array).

    Returns a :class:`DensityEstimate`, or a list of them for array ``t``.
    """
    scalar = np.ndim(t) == 0
    samples = _bridge_samples(fd, t, n_mc, n_times, seed)
    mean, se, ess = _summarize(samples)
    est = [DensityEstimate(float(m), float(s), n_mc, float(e)) for m, s, e in zip(mean, se, ess)]
    return est[0] if scalar else est


def _cdf_nodes(d, t, n, span=9.0):
    """Quadrature nodes and weights for ``int_0^t p(s) ds``.

    ``p`` behaves like the Brownian passage density over distance ``d``, which
    is a Gaussian in ``y = d / sqrt(s)``. Times up to ``d^2`` use Gauss-Legendre
    in ``y`` (truncated ``span`` units past its lower end); when ``t`` is much
    larger the rest of ``[d^2, t]`` uses Gauss-Legendre in ``log s``.
    """
    def y_panel(s_hi, k):
        xq, wq = leggauss(k)
        a = d / math.sqrt(s_hi)
        y = a + 0.5 * span * (xq + 1.0)
        return d * d / y**2, 2 * d * d / y**3 * 0.5 * span * wq

    if d * d >= t / 8:
        return y_panel(t, n)
    k = n // 2
    s1, w1 = y_panel(d * d, k)
    xq, wq = leggauss(n - k)
    la, lb = 2 * math.log(d), math.log(t)
    s2 = np.exp(la + 0.5 * (lb - la) * (xq + 1.0))
    return np.concatenate([s1, s2]), np.concatenate([w1, 0.5 * (lb - la) * s2 * wq])


def bridge_cdf(fd, t, n_mc=10_000, n_times=256, seed=0, n_nodes=24):
    """``P_x(tau <= t)`` by quadrature of the bridge density over ``(0, t]``.

    Each path contributes its weighted sum over the quadrature nodes, so the
    standard error accounts for the shared randomness.
    """
    if fd.x >= 1.0:
        raise HittingError("start at or above threshold")
    lmap = _lamperti_for(fd, [t])
    d = float(lmap.S(1.0) - lmap.S(fd.x))
    s, w = _cdf_nodes(d, t, n_nodes)
    samples = _bridge_samples(fd, s, n_mc, n_times, seed, lmap) @ w
    mean, se, _ = _summarize(samples[:, None], warn=False)
    return DensityEstimate(float(mean[0]), float(se[0]), n_mc)


# ---------------------------------------------------------------------------
# Euler crossing oracle


@dataclass(frozen=True)
class CDFEstimate:
    t: np.ndarray
    cdf: np.ndarray
    std_error: np.ndarray
    n_samples: int


def _time_grid(t_grid, dt):
    knots = np.concatenate([[0.0], np.asarray(t_grid, dtype=float)])
    if np.any(np.diff(knots) < 0):
        raise HittingError("t_grid must be non-decreasing and non-negative")
    pieces, marks = [np.zeros(1)], []
    for a, b in zip(knots[:-1], knots[1:]):
        k = max(1, int(math.ceil((b - a) / dt - 1e-9))) if b > a else 0
        if k:
            pieces.append(a + (b - a) * np.arange(1, k + 1) / k)
        marks.append(sum(len(p) for p in pieces) - 1)
    return np.concatenate(pieces), np.array(marks)


def hitting_cdf_mc(fd, t_grid, n_mc=10_000, seed=0, dt=1e-3, x0=None):
    """Euler estimate of ``P_x(tau <= t)`` at each node of ``t_grid``.

    Survival through a step is weighted by the Brownian-bridge probability of
    not touching 1, ``1 - exp(-2 (1 - z_m)(1 - z_{m+1}) / (sigma(z_m)^2 dt))``.
    ``x0`` overrides the start point per path (cycled), which mixes the
    estimate over an initial law.
    """
    if x0 is None:
        if fd.x >= 1.0:
            raise HittingError("start at or above threshold")
        z = np.full(n_mc, fd.x)
    else:
        x0 = np.asarray(x0, dtype=float)
        if np.any(x0 >= 1.0):
            raise HittingError("start at or above threshold")
        z = np.resize(x0, n_mc).astype(float)
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    times, marks = _time_grid(t_grid, dt)
    gen = rng.stream(seed, rng.HITTING, 0)
    surv = np.ones(n_mc)
    cdf = np.empty(len(t_grid))
    se = np.empty(len(t_grid))
    alpha = np.asarray(fd.alpha(times), dtype=float) * np.ones_like(times)
    k = 0
    for m in range(len(times)):
        while k < len(marks) and marks[k] == m:
            cdf[k] = 1.0 - surv.mean()
            se[k] = surv.std(ddof=1) / math.sqrt(n_mc) if n_mc > 1 else 0.0
            k += 1
        if m == len(times) - 1:
            break
        h = times[m + 1] - times[m]
        s = fd.sigma(z)
        zn = z + (fd.b(z) + alpha[m]) * h + s * math.sqrt(h) * gen.standard_normal(n_mc)
        # a path at or above 1 gets factor 0 and is frozen at the threshold
        gap = np.maximum(1.0 - zn, 0.0)
        surv *= -np.expm1(-2.0 * (1.0 - z) * gap / (s * s * h))
        z = np.minimum(zn, 1.0)
    return CDFEstimate(t_grid, cdf, se, n_mc)


def brownian_density(x, t, drift=0.0):
    """Closed-form first-passage density of ``x + drift t + W`` to level 1."""
    t = np.asarray(t, dtype=float)
    return (1 - x) / np.sqrt(2 * np.pi * t**3) * np.exp(-(1 - x - drift * t) ** 2 / (2 * t))


def density_envelope(cs, alpha_norms, x, t, C):
    """``C e^{C x^2} (1 - x) t^{-3/2} exp(-(1 - x)^2 / (2 lambda_sigma^2 t))``.

    ``C`` is supplied by the caller; ``alpha_norms`` is accepted for
    bookkeeping of which forcing the constant was chosen for and does not
    enter the formula.
    """
    if C <= 0:
        raise HittingError("C must be positive")
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(x >= 1) or np.any(t <= 0):
        raise HittingError("envelope needs x < 1 and t > 0")
    lam = cs.lambda_sigma
    return C * np.exp(C * x * x) * (1 - x) * t**-1.5 * np.exp(-(1 - x) ** 2 / (2 * lam * lam * t))


def density_curve_to_csv(path, t, estimates):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "estimate", "std_error"])
        for tt, e in zip(t, estimates):
            w.writerow([repr(float(tt)), repr(e.value), repr(e.std_error)])
