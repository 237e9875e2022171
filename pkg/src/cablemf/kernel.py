"""Cable-equation transmission kernel and soma forcing.

For the cable operator ``L = (1/2) d^2/dxi^2 - gamma`` the potential at the
soma produced by a unit spike with synapse profile ``rho`` is
``conv(t) = exp(-gamma t) E[rho(Z sqrt(t))]`` with ``Z`` standard normal, and
the transmission kernel is its time derivative. Because the heat semigroup
satisfies ``d/dt E[f(Z sqrt t)] = E[f''(Z sqrt t)] / 2``, every derivative of
the kernel is again a Gaussian expectation:

    G^(n)(t) = exp(-gamma t) E[(L^(n+1) rho)(Z sqrt t)].

The expectations are computed by Gauss-Hermite quadrature. For densities of
the form ``p(xi) exp(-xi^2 / (2 l^2))`` the Gaussian envelope is folded into
the quadrature weight, which makes the rule exact for polynomial ``p``.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss

from .model import SmoothFunction, ModelError

DEFAULT_ORDER = 64


class KernelError(ValueError):
    pass


def _hermite_rule(order):
    x, w = hermegauss(order)
    return x, w / math.sqrt(2 * math.pi)


class SynapseDensity:
    """Synapse profile along the dendrite with analytic derivatives."""

    name = "density"
    caveat = ""

    def derivative(self, n):
        raise NotImplementedError

    def __call__(self, xi):
        return self.derivative(0)(xi)

    def heat_expectation(self, coeffs, t, order=DEFAULT_ORDER):
        """``E[sum_k coeffs[k] rho^(k)(Z sqrt t)]`` for ``t >= 0``."""
        raise NotImplementedError


class PolyGaussDensity(SynapseDensity):
    """``rho(xi) = p(xi) exp(-xi^2 / (2 l^2))`` with polynomial ``p``."""

    def __init__(self, coeffs, length=1.0, name="poly-gauss"):
        self.poly = Polynomial(coeffs)
        self.length = float(length)
        self.name = name
        self._polys = [self.poly]

    def _q(self, n):
        # rho^(n) = q_n(xi) exp(-xi^2/(2 l^2)),  q_{n+1} = q_n' - xi q_n / l^2
        xi = Polynomial([0.0, 1.0])
        while len(self._polys) <= n:
            q = self._polys[-1]
            self._polys.append(q.deriv() - xi * q / self.length**2)
        return self._polys[n]

    def derivative(self, n):
        q, l2 = self._q(n), self.length**2

        def fn(xi):
            xi = np.asarray(xi, dtype=float)
            return q(xi) * np.exp(-xi * xi / (2 * l2))
        return fn

    def combined_poly(self, coeffs):
        out = Polynomial([0.0])
        for k, c in enumerate(coeffs):
            if c:
                out = out + c * self._q(k)
        return out

    def heat_expectation(self, coeffs, t, order=DEFAULT_ORDER):
        t = np.asarray(t, dtype=float)
        q = self.combined_poly(coeffs)
        x, w = _hermite_rule(order)
        # phi(xi) exp(-xi^2 t / (2 l^2)) = s * phi_s(xi) with s^2 = 1 / (1 + t / l^2)
        s = 1.0 / np.sqrt(1.0 + t / self.length**2)
        arg = (s * np.sqrt(t))[..., None] * x
        return s * (q(arg) @ w)


class CompactPolyDensity(SynapseDensity):
    """``rho(xi) = p(xi)`` on ``[a, b]`` and zero elsewhere.

    Derivatives are the polynomial ones inside the support; jump terms at the
    support edges are not represented, so kernel derivatives for such
    profiles are taken numerically.
    """

    def __init__(self, coeffs, support=(-1.0, 1.0), name="compact-poly", caveat=""):
        self.poly = Polynomial(coeffs)
        self.support = (float(support[0]), float(support[1]))
        self.name = name
        self.caveat = caveat

    def derivative(self, n):
        q = self.poly.deriv(n) if n else self.poly
        a, b = self.support

        def fn(xi):
            xi = np.asarray(xi, dtype=float)
            return np.where((xi >= a) & (xi <= b), q(xi), 0.0)
        return fn

    def heat_expectation(self, coeffs, t, order=DEFAULT_ORDER):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        q = Polynomial([0.0])
        for k, c in enumerate(coeffs):
            if c:
                q = q + c * (self.poly.deriv(k) if k else self.poly)
        a, b = self.support
        x, w = leggauss(order)
        out = np.empty(t.shape)
        for idx, tt in np.ndenumerate(t):
            if tt == 0.0:
                out[idx] = q(0.0) if a <= 0.0 <= b else 0.0
                continue
            r = math.sqrt(tt)
            lo, hi = a / r, b / r
            xi = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
            phi = np.exp(-0.5 * xi * xi) / math.sqrt(2 * math.pi)
            out[idx] = 0.5 * (hi - lo) * np.sum(w * phi * q(xi * r))
        return out


def _generator_power(gamma, n):
    """Coefficients (in rho^(k), k = 0..2n) of ``(D^2/2 - gamma)^n``."""
    c = np.zeros(2 * n + 1)
    for j in range(n + 1):
        c[2 * j] = math.comb(n, j) * 0.5**j * (-gamma) ** (n - j)
    return c


def _heat(rho, coeffs, t, order):
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise KernelError("t must be non-negative")
    val = np.asarray(rho.heat_expectation(coeffs, np.atleast_1d(t_arr), order), dtype=float)
    return val.reshape(t_arr.shape) if t_arr.ndim else float(val.ravel()[0])


def cable_kernel(rho, gamma, t, order=DEFAULT_ORDER, deriv=0):
    """Transmission kernel ``G_rho(t)`` (or its ``deriv``-th derivative)."""
    if gamma <= 0:
        raise KernelError("gamma must be positive")
    if order < 40:
        raise KernelError("quadrature order must be >= 40")
    coeffs = _generator_power(gamma, deriv + 1)
    return np.exp(-gamma * np.asarray(t, dtype=float)) * _heat(rho, coeffs, t, order)


def cable_convolution(rho, gamma, t, order=DEFAULT_ORDER):
    """``conv(t) = [Green(t, .) * rho](0)``, the antiderivative of the kernel."""
    return np.exp(-gamma * np.asarray(t, dtype=float)) * _heat(rho, [1.0], t, order)


def _numeric_derivs(f, h=1e-4):
    def d1(t):
        t = np.asarray(t, dtype=float)
        lo = np.maximum(t - h, 0.0)
        return (f(t + h) - f(lo)) / (t + h - lo)

    def d2(t):
        t = np.asarray(t, dtype=float)
        c = np.maximum(t, h)
        return (f(c + h) - 2 * f(c) + f(c - h)) / h**2
    return d1, d2


def cable_kernel_function(rho, gamma, scale=1.0, order=DEFAULT_ORDER):
    """``scale * G_rho`` as a :class:`SmoothFunction` with two derivatives."""
    name = f"cable[{rho.name}, gamma={gamma:g}]"
    if isinstance(rho, CompactPolyDensity):
        f = lambda t: scale * cable_kernel(rho, gamma, t, order)
        d1, d2 = _numeric_derivs(f)
        return SmoothFunction(f, (d1, d2), name)
    return SmoothFunction(
        lambda t: scale * cable_kernel(rho, gamma, t, order),
        (lambda t: scale * cable_kernel(rho, gamma, t, order, deriv=1),
         lambda t: scale * cable_kernel(rho, gamma, t, order, deriv=2)),
        name)


def soma_forcing(v0, gamma, t, order=DEFAULT_ORDER):
    """``H(t) = exp(-gamma t) E[v0(Z sqrt t)]``; equals ``v0(0)`` at ``t = 0``."""
    if gamma <= 0:
        raise KernelError("gamma must be positive")
    t = np.asarray(t, dtype=float)
    x, w = _hermite_rule(order)
    vals = np.asarray(v0(np.sqrt(np.atleast_1d(t))[:, None] * x), dtype=float)
    vals = np.broadcast_to(vals, (np.atleast_1d(t).size, x.size))
    out = np.exp(-gamma * np.atleast_1d(t)) * (vals @ w)
    return out.reshape(t.shape) if t.ndim else float(out[0])


def soma_forcing_function(v0, gamma, order=DEFAULT_ORDER):
    """``H`` with ``H'`` and ``H''`` from the generator applied to ``v0``.

    ``v0`` is a :class:`SmoothFunction` carrying at least four derivatives.
    """
    def apply(n):
        c = _generator_power(gamma, n)

        def g(xi):
            return sum(ck * v0.d(k)(xi) for k, ck in enumerate(c) if ck)
        return g

    ops = [v0, apply(1), apply(2)]
    fns = [lambda t, op=op: soma_forcing(op, gamma, t, order) for op in ops]
    return SmoothFunction(fns[0], tuple(fns[1:]), f"soma[{v0.name}, gamma={gamma:g}]")


def check_synapse_density(rho, probes=None, tol=1e-8):
    """Return ``{condition: (passed, value)}`` for the no-synapse-on-soma rule."""
    if probes is None:
        probes = np.linspace(-6, 6, 241)
    out = {}
    for k in (0, 2, 4):
        v = float(rho.derivative(k)(0.0))
        out[f"rho^({k})(0) = 0"] = (abs(v) <= tol, v)
    m = float(np.min(rho(np.asarray(probes, dtype=float))))
    out["rho >= 0"] = (m >= -tol, m)
    return out


def hex_gauss():
    return PolyGaussDensity([0, 0, 0, 0, 0, 0, 1.0], 1.0, "hex-gauss")


def quartic_bump():
    # xi^4 (1 - xi^2)^2 = xi^4 - 2 xi^6 + xi^8
    return CompactPolyDensity([0, 0, 0, 0, 1.0, 0, -2.0, 0, 1.0], (-1.0, 1.0), "quartic-bump",
                              caveat="G'(0) may be nonzero (rho''''(0) = 24); validate before use")


RHO_CATALOG = {"hex-gauss": hex_gauss, "quartic-bump": quartic_bump}


def synapse_density(name):
    try:
        return RHO_CATALOG[name]()
    except KeyError:
        raise ModelError(f"unknown synapse density {name!r}; "
                         f"choose from {sorted(RHO_CATALOG)}") from None


# ---------------------------------------------------------------------------
# tables

def _hermite_interp(t, dt, y, dy, s):
    """Cubic Hermite interpolation of nodal values ``y`` with slopes ``dy``."""
    s = np.asarray(s, dtype=float)
    pos = s / dt
    m = np.clip(np.floor(pos).astype(np.int64), 0, len(y) - 2)
    u = pos - m
    h00 = (1 + 2 * u) * (1 - u) ** 2
    h10 = u * (1 - u) ** 2
    h01 = u * u * (3 - 2 * u)
    h11 = u * u * (u - 1)
    return h00 * y[m] + h10 * dt * dy[m] + h01 * y[m + 1] + h11 * dt * dy[m + 1]


@dataclass(frozen=True)
class KernelTable:
    """Kernel values, slopes and antiderivative on a uniform grid ``m * dt``."""

    dt: float
    G: np.ndarray
    dG: np.ndarray
    Ghat: np.ndarray
    sup_norm: float
    name: str = "kernel"
    t: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "t", np.arange(len(self.G)) * self.dt)
        for a in (self.G, self.dG, self.Ghat, self.t):
            a.setflags(write=False)

    @property
    def n_steps(self):
        return len(self.G) - 1

    @property
    def T(self):
        return self.n_steps * self.dt

    def _check(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < -1e-12) or np.any(s > self.T * (1 + 1e-12)):
            raise KernelError("kernel table evaluated outside [0, T]")
        return np.clip(s, 0.0, self.T)

    def g(self, s):
        s = self._check(s)
        return _hermite_interp(self.t, self.dt, self.G, self.dG, s)

    def ghat(self, s):
        """Antiderivative ``int_0^s G`` (Hermite, using ``G`` as the slope)."""
        s = self._check(s)
        return _hermite_interp(self.t, self.dt, self.Ghat, self.G, s)

    def compatible(self, dt, T):
        return math.isclose(self.dt, dt, rel_tol=1e-12) and self.T >= T * (1 - 1e-12)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "G", "dG", "Ghat"])
            for row in zip(self.t, self.G, self.dG, self.Ghat):
                w.writerow([repr(float(v)) for v in row])


def tabulate_kernel(g, T, n_steps, tol=1e-8):
    """Tabulate ``g`` on ``n_steps`` uniform cells of ``[0, T]``.

    The antiderivative is accumulated cell by cell with Simpson's rule on the
    grid refined by cell midpoints; the sup-norm is the maximum of ``|g|`` over
    the refined grid.
    """
    if n_steps < 2:
        raise KernelError("n_steps must be >= 2")
    g0, dg0 = float(g(0.0)), float(g.d(1)(0.0))
    if abs(g0) > tol or abs(dg0) > tol:
        raise KernelError(f"kernel fails G(0)=G'(0)=0 (G(0)={g0:.3g}, G'(0)={dg0:.3g})")
    dt = T / n_steps
    t = np.arange(n_steps + 1) * dt
    G = np.asarray(g(t), dtype=float).copy()
    dG = np.asarray(g.d(1)(t), dtype=float).copy()
    mid = np.asarray(g(t[:-1] + dt / 2), dtype=float)
    cell = dt / 6 * (G[:-1] + 4 * mid + G[1:])
    Ghat = np.concatenate([[0.0], np.cumsum(cell)])
    sup = float(max(np.max(np.abs(G)), np.max(np.abs(mid))))
    return KernelTable(dt, G, dG, Ghat, sup, getattr(g, "name", "kernel"))
