"""Model coefficients, initial laws and synaptic weight schemes.

A :class:`CoefficientSet` bundles the drift ``b``, diffusion ``sigma``,
external forcing ``H`` and transmission kernel ``G`` together with their
derivatives and the declared bound constants. Nothing here is inferred from
samples: the bounds are declared by the user and :func:`validate_coefficients`
checks them on a finite probe grid.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from . import rng


class ModelError(ValueError):
    """Raised for inadmissible model inputs (degenerate weights, bad laws)."""


def _vec(fn):
    def wrapped(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(fn(x), dtype=float), x.shape).copy() if x.ndim else float(fn(x))
    return wrapped


@dataclass(frozen=True)
class SmoothFunction:
    """A vectorised scalar function together with its first derivatives.

    ``derivs[k]`` is the ``(k+1)``-th derivative. Missing derivatives raise
    when requested.
    """

    f: Callable
    derivs: tuple = ()
    name: str = "function"

    def __call__(self, x):
        return self.f(x)

    def d(self, n=1):
        if n == 0:
            return self.f
        if n > len(self.derivs):
            raise ModelError(f"{self.name}: derivative of order {n} not available")
        return self.derivs[n - 1]


def constant(c, name=None):
    c = float(c)
    zero = _vec(lambda x: 0.0 * x)
    return SmoothFunction(_vec(lambda x: c + 0.0 * x), (zero, zero, zero, zero),
                          name or f"const({c:g})")


def zero_function():
    return constant(0.0, "zero")


def linear(intercept, slope, name=None):
    """``x -> intercept + slope * x``."""
    a, s = float(intercept), float(slope)
    zero = _vec(lambda x: 0.0 * x)
    return SmoothFunction(_vec(lambda x: a + s * x), (_vec(lambda x: s + 0.0 * x), zero, zero),
                          name or f"linear({a:g}{s:+g}x)")


def sigmoid(low, high, scale=1.0, center=0.0, name=None):
    """Bounded logistic ``low + (high - low) / (1 + exp(-(x - center) / scale))``."""
    lo, hi, c, s = float(low), float(high), float(center), float(scale)
    amp = hi - lo

    def p(x):
        return 0.5 * (1.0 + np.tanh(0.5 * (x - c) / s))

    def f(x):
        return lo + amp * p(x)

    def d1(x):
        q = p(x)
        return amp * q * (1 - q) / s

    def d2(x):
        q = p(x)
        return amp * q * (1 - q) * (1 - 2 * q) / s**2

    def d3(x):
        q = p(x)
        return amp * q * (1 - q) * (1 - 6 * q + 6 * q * q) / s**3

    return SmoothFunction(_vec(f), (_vec(d1), _vec(d2), _vec(d3)),
                          name or f"sigmoid({lo:g},{hi:g})")


def sine(amplitude=1.0, frequency=1.0, phase=0.0, name=None):
    """``x -> amplitude * sin(frequency * x + phase)``."""
    a, w, p = float(amplitude), float(frequency), float(phase)

    def make(k):
        return _vec(lambda x: a * w**k * np.sin(w * x + p + k * np.pi / 2))

    return SmoothFunction(make(0), tuple(make(k) for k in range(1, 5)),
                          name or f"sine({a:g},{w:g})")


def tabulated(grid, values, name="tabulated"):
    """Cubic-spline interpolant of tabulated values, with spline derivatives.

    Outside the tabulated range the boundary value is held constant.
    """
    grid = np.asarray(grid, dtype=float)
    spline = CubicSpline(grid, np.asarray(values, dtype=float), bc_type="natural")
    lo, hi = grid[0], grid[-1]

    def make(k):
        sp = spline if k == 0 else spline.derivative(k)

        def fn(x):
            x = np.asarray(x, dtype=float)
            inside = (x >= lo) & (x <= hi)
            xc = np.clip(x, lo, hi)
            out = sp(xc)
            return out if k == 0 else np.where(inside, out, 0.0)
        return _vec(fn)

    return SmoothFunction(make(0), (make(1), make(2), make(3)), name)


@dataclass(frozen=True)
class CoefficientSet:
    b: SmoothFunction
    sigma: SmoothFunction
    H: SmoothFunction
    G: SmoothFunction
    lambda_b: float
    lambda_sigma: float


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    worst_point: float
    worst_value: float
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failed(self):
        return [c.name for c in self.checks if not c.passed]

    def lines(self):
        out = []
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            out.append(f"{status} {c.name}: worst at {c.worst_point:.6g} "
                       f"(value {c.worst_value:.6g}) {c.detail}".rstrip())
        out.append("OVERALL " + ("PASS" if self.passed else "FAIL"))
        return out


_TAILS = (10.0, 100.0, 1000.0)


def _space_probes(probe_grid):
    p = np.asarray(probe_grid, dtype=float).ravel()
    tails = np.array(_TAILS)
    return np.unique(np.concatenate([p, tails, -tails]))


def _time_probes(probe_grid):
    p = np.abs(np.asarray(probe_grid, dtype=float).ravel())
    return np.unique(np.concatenate([[0.0], p, _TAILS]))


def _check(name, points, excess, detail=""):
    """``excess > 0`` marks a violation; the worst point maximises it."""
    excess = np.asarray(excess, dtype=float)
    bad = ~np.isfinite(excess)
    score = np.where(bad, np.inf, excess)
    k = int(np.argmax(score))
    ok = bool(np.all(score <= 0.0))
    return AssumptionCheck(name, ok, float(points[k]), float(score[k]), detail)


def validate_coefficients(cs, probe_grid, tol=1e-8):
    """Check the standing assumptions on a finite probe grid.

    Every inequality is tested exactly as stated (no slack) except the
    kernel-origin conditions ``G(0) = G'(0) = 0``, which use ``tol``.
    Failures are reported, never raised.
    """
    if len(np.atleast_1d(probe_grid)) == 0:
        raise ModelError("probe_grid must be non-empty")
    if tol <= 0:
        raise ModelError("tol must be positive")
    x = _space_probes(probe_grid)
    t = _time_probes(probe_grid)
    lb, ls = float(cs.lambda_b), float(cs.lambda_sigma)
    checks = []

    b, db = cs.b(x), cs.b.d(1)(x)
    checks.append(_check("drift derivative", x, np.abs(db) - lb, "|b'| <= lambda_b"))
    checks.append(_check("drift growth", x, np.abs(b) - lb * (1 + np.abs(x)),
                         "|b| <= lambda_b (1+|x|)"))

    s = cs.sigma(x)
    with np.errstate(divide="ignore"):
        ell = np.maximum(1.0 / ls - s, s - ls)
    checks.append(_check("ellipticity", x, ell, "1/lambda_sigma <= sigma <= lambda_sigma"))
    ds, dds = cs.sigma.d(1)(x), cs.sigma.d(2)(x)
    checks.append(_check("sigma derivatives", x, np.maximum(np.abs(ds), np.abs(dds)) - ls,
                         "|sigma'|, |sigma''| <= lambda_sigma"))

    g0, dg0 = float(cs.G(0.0)), float(cs.G.d(1)(0.0))
    origin = max(abs(g0), abs(dg0))
    checks.append(AssumptionCheck("kernel origin", origin <= tol, 0.0, origin,
                                  f"|G(0)|={abs(g0):.3g}, |G'(0)|={abs(dg0):.3g}, tol={tol:g}"))

    for fname, fn in (("H", cs.H), ("G", cs.G)):
        vals = np.stack([fn.d(k)(t) for k in range(3)])
        finite = np.all(np.isfinite(vals), axis=0)
        sup = np.max(np.abs(np.where(np.isfinite(vals), vals, 0.0)))
        checks.append(_check(f"{fname} bounded", t, np.where(finite, -1.0, np.inf),
                             f"sup over probes of |{fname}|,|{fname}'|,|{fname}''| = {sup:.4g}"))
    return ValidationReport(tuple(checks))


# ---------------------------------------------------------------------------
# initial laws

@dataclass(frozen=True)
class InitialLaw:
    """Law of the initial potential, supported in ``(-R, 1)``.

    Sampling is by inverse transform through ``ppf`` so that the solver can
    build deterministic quasi-uniform quadratures of the same law.
    ``kind`` is ``"point"`` or ``"density"``; for densities ``pdf``, ``beta``
    and ``eps`` describe the decay condition near the threshold.
    """

    ppf: Callable
    R: float
    kind: str
    name: str = "law"
    pdf: Callable = None
    beta: float = 0.0
    eps: float = 0.0
    point: float = None

    def __post_init__(self):
        if self.R < 1:
            raise ModelError("R must be >= 1")
        if self.kind not in ("point", "density"):
            raise ModelError(f"unknown law kind {self.kind!r}")

    def quantiles(self, n):
        """Fixed quasi-uniform sample: the law's quantiles at ``(k + 1/2) / n``."""
        return np.asarray(self.ppf((np.arange(n) + 0.5) / n), dtype=float)


def point_mass(x0, R=1.0):
    if not -R < x0 < 1:
        raise ModelError(f"point mass {x0} outside (-R, 1)")
    x0 = float(x0)
    return InitialLaw(ppf=lambda u: np.full(np.shape(u), x0), R=float(R), kind="point",
                      name=f"point({x0:g})", point=x0)


def uniform_law(low, high, R=None):
    """Uniform on ``(low, high)`` with ``-R <= low < high <= 1``."""
    low, high = float(low), float(high)
    R = float(R if R is not None else max(1.0, -low))
    if not (-R <= low < high <= 1):
        raise ModelError("uniform law must satisfy -R <= low < high <= 1")
    width = high - low

    def pdf(x):
        x = np.asarray(x, dtype=float)
        return np.where((x > low) & (x < high), 1.0 / width, 0.0)

    # density vanishes on [high, 1) when high < 1; otherwise it is flat up to 1
    # and the linear-decay condition fails
    eps = (1.0 - high) if high < 1 else 0.0
    return InitialLaw(ppf=lambda u: low + width * np.asarray(u), R=R, kind="density",
                      name=f"uniform({low:g},{high:g})", pdf=pdf, beta=0.0, eps=eps)


def sample_initial(law, n, seed):
    """``n`` i.i.d. draws from ``law``; identical for identical ``seed``."""
    if n < 1:
        raise ModelError("n must be >= 1")
    u = rng.stream(seed, rng.INIT, 0).random(n)
    # open interval: keep u away from 0 so ppf stays above -R
    u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
    return np.asarray(law.ppf(u), dtype=float)


def check_initial_law(law, n=100_000, seed=0, bins=20):
    """Empirical check of the support and of the near-threshold decay bound.

    Returns a :class:`ValidationReport` with a ``support`` entry and, for
    density laws, a ``threshold decay`` entry comparing binned histogram mass
    on ``[1 - eps, 1)`` with ``beta * (1 - x) dx`` (plus three binomial
    standard errors).
    """
    x = sample_initial(law, n, seed)
    out = np.maximum(x - np.nextafter(1.0, 0.0), -law.R - x)
    checks = [_check("support", x, np.where((x > -law.R) & (x < 1), -1.0, 1.0 + out))]
    if law.kind == "density" and law.eps > 0:
        edges = np.linspace(1 - law.eps, 1, bins + 1)
        counts, _ = np.histogram(x, edges)
        p = counts / n
        # bound integrates beta*(1-x) over each bin
        bound = law.beta * ((1 - edges[:-1]) ** 2 - (1 - edges[1:]) ** 2) / 2
        se = np.sqrt(np.maximum(p * (1 - p), 1.0 / n) / n)
        checks.append(_check("threshold decay", edges[:-1], p - bound - 3 * se,
                             f"beta={law.beta:g}, eps={law.eps:g}"))
    elif law.kind == "density":
        checks.append(AssumptionCheck("threshold decay", False, 1.0, np.inf,
                                      "no decay interval declared"))
    return ValidationReport(tuple(checks))


# ---------------------------------------------------------------------------
# weights

@dataclass(frozen=True)
class WeightScheme:
    """Non-negative synaptic weights ``J[i, j]`` for ``N`` neurons.

    Closed-form schemes (``uniform``, ``inverse-distance``) store only the
    rule; ``explicit`` stores the matrix.
    """

    kind: str
    N: int
    value: float = 1.0
    matrix_: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("uniform", "inverse-distance", "explicit"):
            raise ModelError(f"unknown weight scheme {self.kind!r}")
        if self.kind == "explicit":
            m = np.asarray(self.matrix_, dtype=float)
            if m.shape != (self.N, self.N):
                raise ModelError("explicit weight matrix must be N x N")
            if np.any(m < 0):
                raise ModelError("weights must be non-negative")
            m.setflags(write=False)
            object.__setattr__(self, "matrix_", m)
        elif self.kind == "uniform" and self.value <= 0:
            raise ModelError("uniform weight must be positive")

    @property
    def is_uniform(self):
        return self.kind == "uniform"

    def J(self, i, j):
        if self.kind == "uniform":
            return self.value
        if self.kind == "inverse-distance":
            return 0.0 if i == j else 1.0 / abs(i - j)
        return float(self.matrix_[i, j])

    def matrix(self):
        if self.kind == "explicit":
            return self.matrix_
        if self.kind == "uniform":
            return np.full((self.N, self.N), float(self.value))
        idx = np.arange(self.N)
        d = np.abs(idx[:, None] - idx[None, :]).astype(float)
        with np.errstate(divide="ignore"):
            return np.where(d > 0, 1.0 / d, 0.0)

    def _sums(self):
        """Row sums of J and of J**2, without forming the matrix when possible."""
        N = self.N
        if self.kind == "uniform":
            return np.full(N, N * self.value), np.full(N, N * self.value**2)
        if self.kind == "inverse-distance":
            k = np.arange(1, N, dtype=float)
            h1 = np.concatenate([[0.0], np.cumsum(1.0 / k)])
            h2 = np.concatenate([[0.0], np.cumsum(1.0 / k**2)])
            i = np.arange(N)
            return h1[i] + h1[N - 1 - i], h2[i] + h2[N - 1 - i]
        m = self.matrix_
        return m.sum(axis=1), (m * m).sum(axis=1)

    def row_sums(self):
        s, _ = self._sums()
        if np.any(s <= 0):
            raise ModelError("degenerate weights: a row of J sums to zero")
        return s

    def normalized(self):
        """Row-normalised matrix ``J[i, j] / S_i``."""
        s = self.row_sums()
        return self.matrix() / s[:, None]

    def j_condition(self):
        """``max_i sum_j J_ij**2 / S_i**2``; exact rational for integer uniform weights."""
        if self.kind == "uniform" and float(self.value).is_integer():
            v = int(self.value)
            return float(Fraction(self.N * v * v, (self.N * v) ** 2))
        s, s2 = self._sums()
        if np.any(s <= 0):
            raise ModelError("degenerate weights: a row of J sums to zero")
        return float(np.max(s2 / s**2))


def uniform_weights(N, value=1.0):
    return WeightScheme("uniform", int(N), float(value))


def inverse_distance_weights(N):
    return WeightScheme("inverse-distance", int(N))


def explicit_weights(matrix):
    m = np.asarray(matrix, dtype=float)
    return WeightScheme("explicit", m.shape[0], matrix_=m)


def scheme_family(kind, value=1.0):
    """Return ``N -> WeightScheme`` for a closed-form scheme."""
    if kind == "uniform":
        return lambda N: uniform_weights(N, value)
    if kind == "inverse-distance":
        return inverse_distance_weights
    raise ModelError(f"no closed-form family for {kind!r}")


def j_condition_profile(family: Callable, N_list: Sequence[int]):
    """List of ``(N, max_i sum_j J_ij^2 / S_i^2)`` over the requested sizes."""
    out = []
    for N in N_list:
        if N < 2:
            raise ModelError("each N must be >= 2")
        out.append((int(N), family(N).j_condition()))
    return out
