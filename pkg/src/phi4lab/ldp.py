"""Large-deviation numerics on real-valued samples and finite laws.

Conventions
-----------
``empirical_cgf`` follows ``Lambda(theta) = log E exp(-theta X)`` on
``theta in [0, theta_max]`` and ``legendre_transform`` returns
``Lambda*(h) = sup_theta (theta h - Lambda(theta))`` over that window.  With
``X`` replaced by ``-X`` this is the usual Cramer rate of the upper tail of the
mean of ``X``; :meth:`FiniteDistribution.cgf` builds the right orientation for
either side of the mean.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq, minimize_scalar
from scipy.sparse.csgraph import connected_components
from scipy.special import logsumexp, xlogy

from .errors import CapacityError, DomainError, InputError

ROOT_TOL = 1e-14
MAX_TOL = 1e-6
DEFAULT_TABLE_BUDGET = 10**7


# --- CGF and Legendre transform ------------------------------------------------

@dataclass
class EmpiricalCGF:
    theta_grid: np.ndarray
    values: np.ndarray
    std_errors: np.ndarray
    sample_count: int
    exact: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        self.theta_grid = np.asarray(self.theta_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.std_errors = np.asarray(self.std_errors, dtype=float)
        if self.theta_grid.ndim != 1 or self.theta_grid.size < 3:
            raise InputError("theta grid needs at least 3 points")
        if self.theta_grid[0] != 0.0 or np.any(np.diff(self.theta_grid) <= 0):
            raise InputError("theta grid must start at 0 and increase")
        self._spline = None

    @property
    def theta_max(self) -> float:
        return float(self.theta_grid[-1])

    def __call__(self, theta):
        """Lambda at arbitrary theta in the window (exact if available, else not-a-knot spline)."""
        if self.exact is not None:
            return self.exact(theta)
        if self._spline is None:
            self._spline = CubicSpline(self.theta_grid, self.values, bc_type="not-a-knot")
        return self._spline(theta)

    def std_error_at(self, theta) -> float:
        return float(np.interp(theta, self.theta_grid, self.std_errors))

    def convexity_defect(self) -> float:
        """Most negative discrete second difference (0 when convex)."""
        t, v = self.theta_grid, self.values
        slopes = np.diff(v) / np.diff(t)
        return float(min(0.0, np.min(np.diff(slopes)))) if slopes.size > 1 else 0.0


def empirical_cgf(samples, theta_max: float, grid_size: int = 101, batches: int = 20,
                  min_samples: int = 100) -> EmpiricalCGF:
    """``log mean exp(-theta x)`` on an even grid with max-shift stabilization.

    Standard errors come from batch means of the shifted exponentials and the
    delta method for the logarithm.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise InputError("no samples")
    if x.size < min_samples:
        raise InputError(f"need at least {min_samples} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InputError("samples must be finite")
    if not (theta_max > 0 and math.isfinite(theta_max)):
        raise InputError("theta_max must be positive")
    if grid_size < 3:
        raise InputError("grid_size must be at least 3")
    theta = np.linspace(0.0, theta_max, grid_size)
    shift = theta * float(np.max(-x))  # max of -theta x over the samples, theta >= 0
    B = min(batches, x.size)
    size = x.size // B
    # stream over batches: the grid-by-sample matrix never exists in full
    bsum = np.empty((grid_size, B))
    for b in range(B):
        bsum[:, b] = np.exp(-np.outer(theta, x[b * size:(b + 1) * size]) - shift[:, None]).sum(axis=1)
    rest = x[B * size:]
    total = bsum.sum(axis=1)
    if rest.size:
        total += np.exp(-np.outer(theta, rest) - shift[:, None]).sum(axis=1)
    mean = total / x.size
    values = np.log(mean) + shift
    values[0] = 0.0
    bm = bsum / size
    se = bm.std(axis=1, ddof=1) / math.sqrt(B) / mean
    se[0] = 0.0
    return EmpiricalCGF(theta, values, se, int(x.size))


def exact_cgf(fn: Callable, theta_max: float, grid_size: int = 101) -> EmpiricalCGF:
    """Wrap a closed-form ``Lambda(theta)`` (with ``Lambda(0) = 0``) as a CGF object."""
    theta = np.linspace(0.0, theta_max, grid_size)
    try:
        vals = np.array(fn(theta), dtype=float)
        if vals.shape != theta.shape:
            raise TypeError
    except (TypeError, ValueError):
        vals = np.array([float(fn(t)) for t in theta])
    vals[0] = 0.0
    return EmpiricalCGF(theta, vals, np.zeros_like(theta), 0, exact=fn)


@dataclass
class RateFunctionEstimate:
    h_grid: np.ndarray
    values: np.ndarray
    argmax_thetas: np.ndarray
    domain_bound: float
    boundary: np.ndarray
    std_errors: np.ndarray

    def __call__(self, h):
        return np.interp(h, self.h_grid, self.values)

    def rows(self):
        for h, v, t, b in zip(self.h_grid, self.values, self.argmax_thetas, self.boundary):
            yield {"h": float(h), "rate": float(v), "theta_star": float(t), "censored": bool(b)}


def _refine(obj, a, b):
    """Maximize a concave function on ``[a, b]`` (bounded Brent: golden section
    with parabolic steps)."""
    res = minimize_scalar(lambda t: -obj(t), bounds=(a, b), method="bounded",
                          options={"xatol": MAX_TOL * 1e-4})
    return float(res.x), float(-res.fun)


def _maximize(obj, grid, vals=None):
    if vals is None:
        vals = np.array([obj(t) for t in grid])
    i = int(np.argmax(vals))
    if i == len(grid) - 1:
        return float(grid[-1]), float(vals[-1]), True
    a, b = grid[max(i - 1, 0)], grid[i + 1]
    t, v = _refine(obj, a, b)
    if v < vals[i]:
        t, v = float(grid[i]), float(vals[i])
    return t, v, False


def legendre_transform(cgf: EmpiricalCGF, h_grid) -> RateFunctionEstimate:
    """``sup_{0 <= theta <= theta_max} (theta h - Lambda(theta))`` per ``h``.

    Maximizers at ``theta_max`` are flagged as boundary (the true transform may
    be larger); ``domain_bound`` is the largest ``h`` up to which every
    maximizer is interior.
    """
    h_grid = np.atleast_1d(np.asarray(h_grid, dtype=float))
    if not np.all(np.isfinite(h_grid)):
        raise InputError("h values must be finite")
    grid = cgf.theta_grid
    vals, args, edge, ses = [], [], [], []
    for h in h_grid:
        t, v, b = _maximize(lambda th: th * h - float(cgf(th)), grid, grid * h - cgf.values)
        vals.append(max(v, 0.0))
        args.append(t)
        edge.append(b)
        ses.append(cgf.std_error_at(t))
    edge = np.array(edge)
    order = np.argsort(h_grid)
    bound = -math.inf
    for k in order:
        if edge[k]:
            break
        bound = float(h_grid[k])
    return RateFunctionEstimate(h_grid, np.array(vals), np.array(args), bound, edge, np.array(ses))


# --- finite laws ---------------------------------------------------------------

@dataclass
class FiniteDistribution:
    """Law on finitely many real atoms.  Zero-probability atoms are allowed so that
    several laws can share one atom list."""

    atoms: list

    def __post_init__(self):
        if not self.atoms:
            raise InputError("a distribution needs at least one atom")
        vals = np.array([float(a[0]) for a in self.atoms])
        probs = np.array([float(a[1]) for a in self.atoms])
        if not np.all(np.isfinite(vals)) or len(set(vals.tolist())) != vals.size:
            raise InputError("atom values must be finite and distinct")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise InputError("probabilities must be non-negative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise InputError(f"probabilities sum to {probs.sum():.15g}, not 1")
        self.atoms = [(float(v), float(p)) for v, p in zip(vals, probs)]
        self._vals, self._probs = vals, probs

    @classmethod
    def bernoulli(cls, p: float, values=(0.0, 1.0)):
        return cls([(values[0], 1.0 - p), (values[1], p)])

    @property
    def values(self):
        return self._vals.copy()

    @property
    def probs(self):
        return self._probs.copy()

    def support(self):
        v = self.values[self.probs > 0]
        return float(v.min()), float(v.max())

    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def moment(self, fn) -> float:
        return float(np.dot(fn(self.values), self.probs))

    def log_mgf(self, t):
        """``log E exp(t X)`` (elementwise for array ``t``)."""
        keep = self._probs > 0
        t = np.asarray(t, dtype=float)
        out = logsumexp(t[..., None] * self._vals[keep], b=self._probs[keep], axis=-1)
        return float(out) if t.ndim == 0 else out

    def cgf(self, side: str = "upper", theta_max: float = 50.0, grid_size: int = 401) -> EmpiricalCGF:
        """Exact CGF oriented so that :func:`legendre_transform` gives the rate of
        the mean exceeding ``h`` (``side="upper"``) or falling below ``-h``
        (``side="lower"``)."""
        sign = {"upper": 1.0, "lower": -1.0}[side]
        return exact_cgf(lambda th: self.log_mgf(sign * th), theta_max, grid_size)

    def rate(self, h: float, theta_max: float = 8.0) -> float:
        """Cramer rate ``sup_t (t h - log E e^{tX})`` via the Legendre routine.

        The theta window is doubled until the maximizer is interior.
        """
        lo, hi = self.support()
        if not lo <= h <= hi:
            return math.inf
        side, target = ("upper", h) if h >= self.mean() else ("lower", -h)
        shift = self.mean() if side == "upper" else -self.mean()
        tm = theta_max
        for _ in range(40):
            est = legendre_transform(self.cgf(side, tm, 401), [target])
            if not est.boundary[0]:
                return float(est.values[0])
            tm *= 2.0
        return float(est.values[0])


def kl_divergence(Q: FiniteDistribution, P: FiniteDistribution) -> float:
    """``sum q log(q/p)``; infinite when ``Q`` charges a ``P``-null atom."""
    if not np.array_equal(Q.values, P.values):
        raise InputError("distributions must share one atom list")
    q, p = Q.probs, P.probs
    if np.any((q > 0) & (p == 0)):
        return math.inf
    m = q > 0
    return float(np.sum(xlogy(q[m], q[m]) - xlogy(q[m], p[m])))


def tilt(P: FiniteDistribution, theta: float) -> FiniteDistribution:
    """Exponential tilt ``p_i exp(theta x_i) / Z``."""
    v, p = P.values, P.probs
    logw = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)) + theta * v, -np.inf)
    w = np.exp(logw - logsumexp(logw))
    w = w / w.sum()
    return FiniteDistribution(list(zip(v, w)))


def i_projection(P: FiniteDistribution, h: float):
    """Closest law to ``P`` in KL with mean ``h``: the exponential tilt.

    Returns ``(tilted, theta, divergence)``.
    """
    lo, hi = P.support()
    if not lo < h < hi:
        raise DomainError(f"h = {h} is outside the open hull ({lo}, {hi})")
    v, p = P.values, P.probs

    def gap(theta):
        logw = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)) + theta * v, -np.inf)
        w = np.exp(logw - logsumexp(logw))
        return float(np.dot(w, v)) - h

    if gap(0.0) == 0.0:
        theta = 0.0
    else:
        step = 1.0 if gap(0.0) < 0 else -1.0
        a, b = 0.0, step
        while gap(b) * gap(a) > 0:
            a, b = b, 2.0 * b
            if abs(b) > 1e8:
                raise DomainError("tilt bracket failed")
        theta = brentq(gap, min(a, b), max(a, b), xtol=ROOT_TOL, rtol=4 * np.finfo(float).eps)
    Q = tilt(P, theta)
    return Q, float(theta), kl_divergence(Q, P)


# --- Cramer lower bound on exact convolutions ----------------------------------

def lattice_spacing(values, max_denominator: int = 1000, tol: float = 1e-9):
    """Common spacing ``delta`` with ``values = x0 + k delta`` for integers ``k``."""
    v = np.sort(np.asarray(values, dtype=float))
    diffs = np.diff(v)
    if diffs.size == 0:
        return 1.0
    base = diffs.min()
    for m in range(1, max_denominator + 1):
        delta = base / m
        k = (v - v[0]) / delta
        if np.all(np.abs(k - np.round(k)) < tol * max(1.0, np.abs(k).max())):
            return float(delta)
    raise InputError("atoms do not lie on a common lattice")


def convolution_tail(P: FiniteDistribution, N: int, h: float, budget: int = DEFAULT_TABLE_BUDGET,
                     strict: bool = False) -> float:
    """Exact ``P(S_N / N >= h)`` (``> h`` if ``strict``) by repeated convolution
    on the atom lattice."""
    v, p = P.values, P.probs
    delta = lattice_spacing(v)
    x0 = v.min()
    k = np.round((v - x0) / delta).astype(int)
    width = int(k.max()) * N + 1
    if width > budget:
        raise CapacityError(f"convolution table of {width} entries exceeds the budget {budget}",
                            cap=budget, requested=width)
    step = np.zeros(int(k.max()) + 1)
    np.add.at(step, k, p)
    dist = np.array([1.0])
    for _ in range(N):
        dist = np.convolve(dist, step)
    # S_N = N x0 + j delta compared with N h, with a tolerance for lattice ties
    pos = (N * h - N * x0) / delta
    jmin = math.floor(pos + 1e-9) + 1 if strict else math.ceil(pos - 1e-9)
    return float(dist[max(jmin, 0):].sum()) if jmin < dist.size else 0.0


@dataclass
class CramerReport:
    h: float
    rate: float
    N: list
    log_prob_rate: list
    gaps: list
    gap_decreasing: bool

    def to_dict(self):
        return dict(self.__dict__)


def cramer_lower_bound_check(P: FiniteDistribution, h: float, N_list: Sequence[int],
                             budget: int = DEFAULT_TABLE_BUDGET) -> CramerReport:
    """Exact finite-N tails against the Cramer rate (from the I-projection)."""
    if not 2 <= len(P.atoms) <= 10:
        raise InputError("cramer check supports 2 to 10 atoms")
    lo, hi = P.support()
    if not lo < h < hi:
        raise DomainError(f"threshold {h} is outside the open hull")
    if h <= P.mean():
        rate = 0.0
    else:
        rate = i_projection(P, h)[2]
    Ns = sorted(int(N) for N in N_list)
    lp, gaps = [], []
    for N in Ns:
        prob = convolution_tail(P, N, h, budget)
        r = math.log(prob) / N if prob > 0 else -math.inf
        lp.append(r)
        gaps.append(r + rate)
    mags = np.abs(gaps)
    return CramerReport(h=h, rate=rate, N=Ns, log_prob_rate=lp, gaps=gaps,
                        gap_decreasing=bool(np.all(np.diff(mags) < 0)))


# --- positive parts ---------------------------------------------------------------

@dataclass
class PositivePartReport:
    mean_pos: float
    second: float
    third_abs: float
    bound: float
    bound_literal: float
    holds: bool
    holds_literal: bool
    applicable: bool
    mean_pos_se: float = 0.0

    @property
    def sigma(self):
        return math.sqrt(self.second)


def positive_part_diagnostics(data, third_moment_cap: float | None = None, z: float = 3.0) -> PositivePartReport:
    """``E Y+``, ``E Y^2``, ``E|Y|^3`` and the lower bound on ``E Y+``.

    ``bound`` is ``(E Y^2)^2 / (2 E|Y|^3)``, which holds for every centred law
    with a finite third moment (Cauchy-Schwarz on ``E Y^2 = E|Y|^{1/2}|Y|^{3/2}``
    after ``E|Y| = 2 E Y+``).  ``bound_literal`` is ``E Y^2 / (2 E|Y|^3)``; the
    two agree when ``E Y^2 = 1``.  A law whose third moment exceeds
    ``third_moment_cap`` is reported as outside the bounded-third-moment class.
    """
    if isinstance(data, FiniteDistribution):
        m = data.mean()
        if abs(m) > 1e-12 * max(1.0, np.abs(data.values).max()):
            raise InputError(f"distribution is not centred (mean {m})")
        ep = data.moment(lambda y: np.maximum(y, 0.0))
        e2 = data.moment(lambda y: y * y)
        e3 = data.moment(lambda y: np.abs(y) ** 3)
        se = 0.0
    else:
        y = np.asarray(data, dtype=float).ravel()
        if y.size < 2:
            raise InputError("need at least two samples")
        if abs(y.mean()) > z * y.std(ddof=1) / math.sqrt(y.size):
            raise InputError(f"samples are not centred (mean {y.mean():.4g})")
        pos = np.maximum(y, 0.0)
        ep, e2, e3 = float(pos.mean()), float(np.mean(y * y)), float(np.mean(np.abs(y) ** 3))
        se = float(pos.std(ddof=1) / math.sqrt(y.size))
    if e3 <= 0:
        raise InputError("degenerate law: E|Y|^3 = 0")
    bound = e2 * e2 / (2.0 * e3)
    literal = e2 / (2.0 * e3)
    tol = 1e-12 + z * se
    applicable = third_moment_cap is None or e3 <= third_moment_cap
    return PositivePartReport(mean_pos=ep, second=e2, third_abs=e3, bound=bound, bound_literal=literal,
                              holds=bool(ep >= bound - tol), holds_literal=bool(ep >= literal - tol),
                              applicable=bool(applicable), mean_pos_se=se)


def spike_law(n: int) -> FiniteDistribution:
    """Centred two-point law with ``E Y+ = 1/sqrt(n)`` and ``E|Y|^3 ~ sqrt(n)``."""
    if n < 2:
        raise InputError("n must be at least 2")
    up = 1.0 / ((1.0 - 1.0 / n) * math.sqrt(n))
    return FiniteDistribution([(-math.sqrt(n), 1.0 / n), (up, 1.0 - 1.0 / n)])


def third_moment_growth(reports: Sequence[PositivePartReport], ns: Sequence[float]) -> dict:
    """Log-log slope of ``E|Y|^3`` along a family; growth means no uniform bound."""
    slope = float(np.polyfit(np.log(ns), np.log([r.third_abs for r in reports]), 1)[0])
    return {"slope": slope, "bounded": bool(slope <= 0.05)}


# --- Markov chain analogue -----------------------------------------------------------

def stationary(T: np.ndarray) -> np.ndarray:
    w, vecs = np.linalg.eig(T.T)
    v = np.real(vecs[:, np.argmin(np.abs(w - 1.0))])
    return v / v.sum()


@dataclass
class MarkovReport:
    N: int
    paths: int
    minimum: float
    mean: float
    std_error: float
    reference: float
    epsilon: float
    min_ok: bool
    mean_ok: bool

    def to_dict(self):
        return dict(self.__dict__)


def markov_liminf_check(transition, N: int, paths: int, seed: int, z: float = 3.0) -> MarkovReport:
    """``(1/N) log`` of the density of a stationary Markov path against the
    product of its one-site marginals, over ``N`` transitions and many paths."""
    from .sampler import rng_for

    T = np.asarray(transition, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1] or T.shape[0] < 2:
        raise InputError("transition must be a square matrix with at least 2 states")
    if np.any(T < 0) or np.any(np.abs(T.sum(axis=1) - 1.0) > 1e-12):
        raise InputError("transition rows must be probability vectors")
    ncomp, _ = connected_components(T > 0, directed=True, connection="strong")
    if ncomp != 1:
        raise InputError("transition matrix is reducible")
    if N < 1 or paths < 2:
        raise InputError("need N >= 1 and at least 2 paths")
    pi = stationary(T)
    with np.errstate(divide="ignore"):
        inc = np.where(T > 0, np.log(np.where(T > 0, T, 1.0) / pi[None, :]), 0.0)
    reference = float(np.sum(pi[:, None] * T * inc))
    rng = rng_for(seed, 1, 0)
    cum = np.cumsum(T, axis=1)
    state = np.searchsorted(np.cumsum(pi), rng.random(paths), side="right").clip(0, T.shape[0] - 1)
    total = np.zeros(paths)
    sq = 0.0
    for _ in range(N):
        u = rng.random(paths)
        nxt = (u[:, None] >= cum[state]).sum(axis=1).clip(0, T.shape[0] - 1)
        step = inc[state, nxt]
        total += step
        sq += float(np.dot(step, step))
        state = nxt
    per_path = total / N
    inc_sd = math.sqrt(max(sq / (N * paths) - float(total.sum() / (N * paths)) ** 2, 0.0))
    eps = z * inc_sd / math.sqrt(N)
    se = float(per_path.std(ddof=1) / math.sqrt(paths))
    mean = float(per_path.mean())
    return MarkovReport(N=N, paths=paths, minimum=float(per_path.min()), mean=mean, std_error=se,
                        reference=reference, epsilon=eps, min_ok=bool(per_path.min() >= -eps),
                        mean_ok=bool(abs(mean - reference) <= z * se))


# --- Varadhan lower direction ---------------------------------------------------------

@dataclass
class PiecewiseLinear:
    """Piecewise-linear function with knots ``x_0 < ... < x_k``.

    ``pieces[i] = (slope, intercept)`` applies on the open interval between
    knots ``i-1`` and ``i`` (``pieces[0]`` left of ``x_0``, ``pieces[k+1]`` right
    of ``x_k``).  At a knot the function takes the smaller one-sided limit, so
    it is lower semi-continuous.
    """

    knots: list
    pieces: list

    def __post_init__(self):
        if len(self.pieces) != len(self.knots) + 1:
            raise InputError("need one more piece than knots")
        if np.any(np.diff(self.knots) <= 0):
            raise InputError("knots must increase")

    @classmethod
    def linear(cls, a: float, b: float = 0.0):
        return cls([], [(a, b)])

    @classmethod
    def step(cls, h0: float, height: float = 1.0):
        """``0`` up to and including ``h0``, ``height`` beyond (lsc step)."""
        return cls([h0], [(0.0, 0.0), (0.0, height)])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k = np.asarray(self.knots, dtype=float)
        idx = np.searchsorted(k, x, side="left")
        slopes = np.array([p[0] for p in self.pieces])
        icpts = np.array([p[1] for p in self.pieces])
        out = slopes[idx] * x + icpts[idx]
        on = np.isin(x, k)
        if np.any(on):
            j = np.searchsorted(k, x[on])
            left = slopes[j] * x[on] + icpts[j]
            right = slopes[j + 1] * x[on] + icpts[j + 1]
            out[on] = np.minimum(left, right)
        return out


def sup_f_minus_rate(F: PiecewiseLinear, rate: Callable, h_range=(-50.0, 50.0), grid: int = 401) -> float:
    """``sup_h (F(h) - I(h))`` computed piece by piece (each piece is linear)."""
    lo, hi = h_range
    edges = [lo] + [x for x in F.knots if lo < x < hi] + [hi]
    best = -math.inf
    knots = list(F.knots)
    for a, b in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (a + b)
        piece = F.pieces[int(np.searchsorted(knots, mid, side="left"))]

        def g(h):
            return piece[0] * h + piece[1] - float(rate(h))

        ts = np.linspace(a, b, grid)
        vals = np.array([g(t) for t in ts])
        i = int(np.argmax(vals))
        val = vals[i]
        if np.isfinite(val):
            val = max(val, _refine(g, ts[max(i - 1, 0)], ts[min(i + 1, grid - 1)])[1])
        best = max(best, float(val))
    return best


@dataclass
class VaradhanReport:
    sup_value: float
    N: list
    scaled_log_integrals: list
    gaps: list
    extrapolated: float | None
    extrapolation_se: float | None
    violation: bool

    def to_dict(self):
        return dict(self.__dict__)


def varadhan_lower_check(rate, F: PiecewiseLinear, log_integrals: dict, h_range=(-50.0, 50.0),
                         std_errors: dict | None = None, z: float = 3.0, slack: float = 1e-3) -> VaradhanReport:
    """Compare ``(1/N) log E exp(N F(mean))`` with ``sup (F - I)``.

    With three or more ``N`` the sequence is extrapolated with
    ``v_N = v_inf + b log(N)/N + c/N``; a violation is ``v_inf`` (or the largest
    ``N`` value) falling below the supremum by more than ``z`` standard errors
    plus ``slack``.
    """
    sup = sup_f_minus_rate(F, rate, h_range)
    Ns = sorted(int(N) for N in log_integrals)
    v = np.array([log_integrals[N] / N for N in Ns])
    se = np.array([(std_errors or {}).get(N, 0.0) / N for N in Ns])
    extrap = extrap_se = None
    if len(Ns) >= 3:
        Na = np.array(Ns, dtype=float)
        A = np.column_stack([np.ones_like(Na), np.log(Na) / Na, 1.0 / Na])
        coef, *_ = np.linalg.lstsq(A, v, rcond=None)
        extrap = float(coef[0])
        resid = v - A @ coef
        dof = max(len(Ns) - 3, 1)
        cov = np.linalg.pinv(A.T @ A) * (float(resid @ resid) / dof + float(np.mean(se**2)))
        extrap_se = float(math.sqrt(max(cov[0, 0], 0.0)))
        violation = extrap < sup - z * extrap_se - slack
    else:
        violation = bool(v[-1] < sup - z * se[-1] - slack)
    return VaradhanReport(sup_value=sup, N=Ns, scaled_log_integrals=v.tolist(), gaps=(v - sup).tolist(),
                          extrapolated=extrap, extrapolation_se=extrap_se, violation=bool(violation))


def step_log_integral(P: FiniteDistribution, N: int, h0: float, height: float = 1.0) -> float:
    """Exact ``log E exp(N F(S_N/N))`` for the lsc step ``F`` of :meth:`PiecewiseLinear.step`."""
    above = convolution_tail(P, N, h0, strict=True)
    if above <= 0:
        return 0.0
    return float(np.logaddexp(math.log1p(-above) if above < 1 else -math.inf, N * height + math.log(above)))


# --- dependent arrays ---------------------------------------------------------------

@dataclass
class ArrayBoundReport:
    set_lo: float
    rate_inf: float
    rows: list
    violations: int

    def to_dict(self):
        return dict(self.__dict__)


def dependent_array_bound_check(samples_by_n: dict, rate: RateFunctionEstimate | Callable, set_lo: float, d: int,
                                z: float = 3.0, h_hi: float | None = None) -> ArrayBoundReport:
    """Empirical ``(1/n^d) log P(L_n >= set_lo)`` against ``-inf_{h >= set_lo} Lambda*(h)``.

    ``rate`` is the cell rate for the upper tail (a :class:`RateFunctionEstimate`
    built from the CGF of ``-X``, or a callable).  A frequency of zero is
    reported as a censored bound.  A violation is a value below the rate bound
    by more than ``z`` standard errors plus the ``log(n^d)/n^d`` finite-size term.
    """
    if isinstance(rate, RateFunctionEstimate):
        hs = rate.h_grid[rate.h_grid >= set_lo] if math.isfinite(set_lo) else rate.h_grid
        inf_rate = 0.0 if not math.isfinite(set_lo) else (float(np.min(rate(hs))) if hs.size else math.inf)
        if math.isfinite(set_lo) and set_lo <= 0:
            inf_rate = 0.0
    else:
        if not math.isfinite(set_lo) or set_lo <= 0:
            inf_rate = 0.0
        else:
            hi = h_hi if h_hi is not None else set_lo + 50.0
            inf_rate = float(np.min([rate(h) for h in np.linspace(set_lo, hi, 2001)]))
    rows = []
    bad = 0
    for n in sorted(samples_by_n):
        x = np.asarray(samples_by_n[n], dtype=float)
        cells = float(n) ** d
        N = x.size
        hits = int(np.sum(x >= set_lo))
        freq = hits / N
        row = {"n": n, "samples": N, "hits": hits, "bound": -inf_rate}
        if hits == 0:
            row.update(censored=True, log_rate=math.log(1.0 / N) / cells, std_error=math.nan, violation=False)
        else:
            se = math.sqrt((1.0 - freq) / (freq * N)) / cells
            value = math.log(freq) / cells
            tol = z * se + math.log(cells) / cells if cells > 1 else z * se
            viol = value < -inf_rate - tol
            bad += int(viol)
            row.update(censored=False, log_rate=value, std_error=se, violation=bool(viol))
        rows.append(row)
    return ArrayBoundReport(set_lo=set_lo, rate_inf=inf_rate, rows=rows, violations=bad)


# --- emitters ---------------------------------------------------------------------------

def write_cgf_csv(cgf: EmpiricalCGF, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta", "cgf", "std_error"])
        for t, v, s in zip(cgf.theta_grid, cgf.values, cgf.std_errors):
            w.writerow([repr(float(t)), repr(float(v)), repr(float(s))])


def write_rate_csv(rate: RateFunctionEstimate, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["h", "rate", "theta_star", "censored"])
        for r in rate.rows():
            w.writerow([repr(r["h"]), repr(r["rate"]), repr(r["theta_star"]), int(r["censored"])])
