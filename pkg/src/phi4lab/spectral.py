"""Covariance machinery for the momentum-cutoff free field.

The cutoff field at index ``n`` has spectral density

    S_n(k) = |chi_hat(k / n)|**2 / (k**2 + 1)

and covariance ``c_n(x) = (2 pi)**-d * integral S_n(k) exp(i k.x) dk``.  Every
quantity here reduces to a one-dimensional radial integral in ``|k|`` (for the
covariance and its derivatives) or in ``|x|`` (for integrals over the unit
cube), evaluated with composite Gauss-Legendre rules.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gamma, j0, j1, jv

from .errors import InputError, NumericError

MOLLIFIER_KINDS = ("gaussian", "sharp")
SUPPORTED_DIMS = (2, 3, 4, 5)

_GL_NODES = 16
_GAUSSIAN_TAIL = 92.0  # exp(-92) ~ 1e-40: spectral tail dropped beyond this


@dataclass(frozen=True)
class MollifierSpec:
    """Approximate identity ``chi`` used to smooth the field at scale ``1/n``.

    ``gaussian``: ``chi_hat(p) = exp(-width**2 |p|**2)``, i.e. a centred normal
    density with variance ``2 width**2`` per axis.
    ``sharp``: ``chi_hat(p) = 1`` for ``|p| <= 1/width`` and 0 beyond.
    """

    kind: str = "gaussian"
    width: float = 0.25

    def __post_init__(self):
        if self.kind not in MOLLIFIER_KINDS:
            raise InputError(f"unknown mollifier kind {self.kind!r}; expected one of {MOLLIFIER_KINDS}")
        if not (math.isfinite(self.width) and self.width > 0):
            raise InputError(f"mollifier width must be positive and finite, got {self.width}")

    def normalization(self, d: int) -> float:
        """Prefactor making ``chi`` integrate to one over R^d (gaussian kind)."""
        if self.kind != "gaussian":
            raise InputError("position-space normalization is only defined for the gaussian kind")
        return (4.0 * math.pi * self.width**2) ** (-d / 2.0)

    def hat_sq(self, k2):
        """``|chi_hat|**2`` as a function of the squared momentum."""
        k2 = np.asarray(k2, dtype=float)
        if self.kind == "gaussian":
            return np.exp(-2.0 * self.width**2 * k2)
        return (k2 <= 1.0 / self.width**2).astype(float)

    def k_max(self, n: float) -> float:
        """Momentum beyond which ``S_n`` is negligible (gaussian) or zero (sharp)."""
        if self.kind == "gaussian":
            return n / self.width * math.sqrt(_GAUSSIAN_TAIL / 2.0)
        return n / self.width

    def to_dict(self):
        return {"kind": self.kind, "width": self.width}


def mollifier_hat(spec: MollifierSpec, p) -> float:
    """Fourier transform of the mollifier at momentum ``p``.

    ``p`` is a momentum vector (any length); an array of shape ``(..., d)``
    returns an array of shape ``(...)``.
    """
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise InputError("momentum components must be finite")
    k2 = np.sum(p * p, axis=-1) if p.ndim else p * p
    if spec.kind == "gaussian":
        out = np.exp(-spec.width**2 * k2)
    else:
        out = (k2 <= 1.0 / spec.width**2).astype(float)
    return float(out) if np.ndim(out) == 0 else out


def mollifier_density(spec: MollifierSpec, x, d: int = 1):
    """Position-space gaussian mollifier ``chi(x)`` in ``d`` dimensions."""
    x = np.asarray(x, dtype=float)
    r2 = x * x if d == 1 else np.sum(x * x, axis=-1)
    return spec.normalization(d) * np.exp(-r2 / (4.0 * spec.width**2))


def spectral_density(k2, n: float, spec: MollifierSpec | None = None):
    """``S_n(k) = |chi_hat(k/n)|**2 / (k**2 + 1)`` from squared momenta."""
    spec = spec or MollifierSpec()
    k2 = np.asarray(k2, dtype=float)
    return spec.hat_sq(k2 / (n * n)) / (k2 + 1.0)


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2.0) / gamma(d / 2.0)


def _check_dim(d):
    if d not in SUPPORTED_DIMS:
        raise InputError(f"dimension must be one of {SUPPORTED_DIMS}, got {d}")


def _check_cutoff(n):
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise InputError(f"cutoff index must be a positive integer, got {n!r}")


def _composite_gl(breaks, nodes=_GL_NODES):
    """Nodes and weights of a composite Gauss-Legendre rule on sorted breakpoints."""
    x0, w0 = np.polynomial.legendre.leggauss(nodes)
    breaks = np.asarray(breaks, dtype=float)
    a, b = breaks[:-1], breaks[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    x = (mid[:, None] + half[:, None] * x0[None, :]).ravel()
    w = (half[:, None] * w0[None, :]).ravel()
    return x, w


def _momentum_rule(n, spec, step):
    kmax = spec.k_max(n)
    npanel = max(4, int(math.ceil(kmax / step)))
    breaks = np.linspace(0.0, kmax, npanel + 1)
    if spec.kind == "gaussian":
        # resolve the 1/(1+k^2) shoulder near k ~ 1 independently of n
        breaks = np.union1d(breaks, np.linspace(0.0, min(4.0, kmax), 17))
    return _composite_gl(breaks)


def radial_moment(m: int, n: int, spec: MollifierSpec | None = None, step: float = 0.5) -> float:
    """``integral_0^inf k**m S_n(k) dk`` by composite Gauss-Legendre."""
    spec = spec or MollifierSpec()
    k, w = _momentum_rule(n, spec, step)
    return float(np.sum(w * k**m * spectral_density(k * k, n, spec)))


def variance(n: int, d: int, spec: MollifierSpec | None = None, step: float = 0.5) -> float:
    """``c_n(0)``, the pointwise variance of the cutoff field."""
    return float(sphere_area(d) * radial_moment(d - 1, n, spec, step) / (2.0 * math.pi) ** d)


def gradient_variance(n: int, d: int, spec: MollifierSpec | None = None, step: float = 0.5) -> float:
    """``sum_j <(d_j phi_n)^2> = -sum_j d^2 c_n / dx_j^2 (0)``."""
    return float(sphere_area(d) * radial_moment(d + 1, n, spec, step) / (2.0 * math.pi) ** d)


def _radial_kernel(d, z):
    """``z**-nu J_nu(z)`` with ``nu = d/2 - 1``, stable at small ``z``."""
    nu = d / 2.0 - 1.0
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = z < 1e-3
    zs = z[small]
    out[small] = (1.0 - zs * zs / (4.0 * (nu + 1.0))) / (2.0**nu * gamma(nu + 1.0))
    zl = z[~small]
    if d == 3:
        out[~small] = math.sqrt(2.0 / math.pi) * np.sin(zl) / zl
    elif d == 5:
        out[~small] = math.sqrt(2.0 / math.pi) * (np.sin(zl) - zl * np.cos(zl)) / zl**3
    elif d == 2:
        out[~small] = j0(zl)
    elif d == 4:
        out[~small] = j1(zl) / zl
    else:
        out[~small] = jv(nu, zl) / zl**nu
    return out


def covariance_at(r, n: int, d: int, spec: MollifierSpec | None = None, step: float = 1.0, chunk: int = 256):
    """``c_n(|x| = r)`` for an array of separations.

    Uses the Hankel-transform form
    ``c(r) = (2 pi)**(-d/2) integral S(k) k**(d-1) (k r)**-nu J_nu(k r) dk``.
    """
    spec = spec or MollifierSpec()
    r = np.atleast_1d(np.asarray(r, dtype=float))
    k, w = _momentum_rule(n, spec, step)
    weights = w * k ** (d - 1) * spectral_density(k * k, n, spec)
    keep = weights > 0
    k, weights = k[keep], weights[keep]
    out = np.empty(r.shape)
    flat = r.ravel()
    res = out.ravel()
    for start in range(0, flat.size, chunk):
        rr = flat[start:start + chunk]
        res[start:start + chunk] = _radial_kernel(d, np.outer(rr, k)) @ weights
    return out * (2.0 * math.pi) ** (-d / 2.0)


@dataclass
class CovarianceProfile:
    n: int
    d: int
    c0: float
    radial_table: list
    second_derivs_at_zero: list
    grad_variance: float
    mollifier: MollifierSpec = field(default_factory=MollifierSpec)

    def rows(self):
        for r, c in self.radial_table:
            yield {"d": self.d, "n": self.n, "r": r, "c_n(r)": c}


def _converged(fn, step, rtol):
    coarse = fn(step)
    fine = fn(step / 2.0)
    achieved = abs(fine - coarse) / abs(fine) if fine else abs(fine - coarse)
    if not math.isfinite(fine) or achieved > rtol:
        raise NumericError(f"radial quadrature did not converge (relative change {achieved:.3g} > {rtol:.1g})",
                           achieved=achieved)
    return fine


def covariance_profile(n: int, d: int, resolution: int, spec: MollifierSpec | None = None,
                       step: float = 0.5, rtol: float = 1e-9) -> CovarianceProfile:
    """Variance, radial table on ``[0, 1]`` and second derivatives at the origin.

    ``resolution`` is the number of table intervals on ``[0, 1]`` and must
    resolve the mollifier scale: ``resolution >= 8 n``.
    """
    _check_cutoff(n)
    _check_dim(d)
    if resolution < 8 * n:
        raise InputError(f"resolution {resolution} < 8n = {8 * n}: the mollifier scale 1/n would not be resolved")
    spec = spec or MollifierSpec()
    c0 = _converged(lambda h: variance(n, d, spec, h), step, rtol)
    gvar = _converged(lambda h: gradient_variance(n, d, spec, h), step, rtol)
    r = np.linspace(0.0, 1.0, resolution + 1)
    c = covariance_at(r, n, d, spec, step)
    c[0] = c0
    table = [(float(ri), float(ci)) for ri, ci in zip(r, c)]
    second = [-gvar / d] * d
    return CovarianceProfile(n=n, d=d, c0=c0, radial_table=table, second_derivs_at_zero=second,
                             grad_variance=-float(np.sum(second)), mollifier=spec)


# --- the unit cube in radial coordinates ---------------------------------

def _ball_shell_density(s, d):
    """Density of ``|x|**2`` for uniform ``x`` in ``[0,1]^d``, valid for ``s <= 1``."""
    omega = math.pi ** (d / 2.0) / gamma(d / 2.0 + 1.0)
    return omega * (d / 2.0) * np.power(s, d / 2.0 - 1.0) / 2.0**d


@lru_cache(maxsize=None)
def _squared_norm_table(d: int, points: int = 12001):
    """Tabulate the density of ``|x|**2`` on ``(1, d]`` by the recursion
    ``f_d(s) = integral_0^{min(1, sqrt s)} f_{d-1}(s - t**2) dt``."""
    per = (points - 1) // (d - 1)
    u = np.linspace(0.0, 1.0, per + 1)[:-1]
    s = np.concatenate([j + 3.0 * u**2 - 2.0 * u**3 for j in range(1, d)] + [[float(d)]])
    if d == 2:
        return s, _f2_closed(s)
    prev = _squared_norm_density_fn(d - 1)
    x0, w0 = np.polynomial.legendre.leggauss(24)
    u0, w0 = 0.5 * (x0 + 1.0), 0.5 * w0
    vals = np.empty_like(s)
    for i, si in enumerate(s):
        lo = math.sqrt(si - (d - 1)) if si > d - 1 else 0.0
        hi = min(1.0, math.sqrt(si))
        cuts = [lo, hi]
        for j in range(1, d):
            if si - 1.0 < j < si:
                t = math.sqrt(si - j)
                if lo < t < hi:
                    cuts.append(t)
        cuts = sorted(cuts)
        total = 0.0
        for a, b in zip(cuts[:-1], cuts[1:]):
            # smoothstep substitution tames the square-root kinks at the cuts
            t = a + (b - a) * (3.0 * u0**2 - 2.0 * u0**3)
            total += (b - a) * np.dot(w0 * 6.0 * u0 * (1.0 - u0), prev(si - t * t))
        vals[i] = total
    return s, vals


def _f2_closed(s):
    s = np.asarray(s, dtype=float)
    out = np.where(s <= 1.0, math.pi / 4.0, 0.0)
    mid = (s > 1.0) & (s <= 2.0)
    sm = s[mid]
    out[mid] = 0.5 * (np.arcsin(1.0 / np.sqrt(sm)) - np.arcsin(np.sqrt(1.0 - 1.0 / sm)))
    return out


def _squared_norm_density_fn(d):
    if d == 1:
        return lambda u: np.where((u > 0) & (u <= 1.0), 0.5 / np.sqrt(np.clip(u, 1e-300, None)), 0.0)
    if d == 2:
        return _f2_closed
    grid, table = _squared_norm_table(d)

    def f(u):
        u = np.asarray(u, dtype=float)
        out = np.interp(u, grid, table, left=0.0, right=0.0)
        low = u <= 1.0
        out[low] = _ball_shell_density(np.clip(u[low], 0.0, None), d)
        return out
    return f


def cube_shell_density(r, d: int):
    """Radial measure of the unit cube: ``vol{x in [0,1]^d : |x| in dr} / dr``."""
    _check_dim(d)
    r = np.asarray(r, dtype=float)
    flat = r.reshape(-1)
    return (2.0 * flat * _squared_norm_density_fn(d)(flat * flat)).reshape(r.shape)


def _cube_radial_rule(n, d):
    core = np.linspace(0.0, 8.0 / n, 33)
    mid = np.geomspace(8.0 / n, 1.0, 41)[1:] if 8.0 / n < 1.0 else np.array([])
    outer = np.linspace(1.0, math.sqrt(d), int(math.ceil((math.sqrt(d) - 1.0) / 0.02)) + 1)
    kinks = np.sqrt(np.arange(1, d + 1, dtype=float))
    breaks = np.union1d(np.union1d(core, mid), np.union1d(outer, kinks))
    breaks = breaks[breaks <= math.sqrt(d) + 1e-15]
    return _composite_gl(breaks)


@lru_cache(maxsize=64)
def _cube_covariance_table(n, d, spec):
    r, w = _cube_radial_rule(n, d)
    return r, w * cube_shell_density(r, d), covariance_at(r, n, d, spec)


def covariance_power_integral(n: int, d: int, p: int, spec: MollifierSpec | None = None) -> float:
    """``integral_{[0,1]^d} c_n(x)**p dx`` by radial quadrature over the cube."""
    _check_cutoff(n)
    _check_dim(d)
    if p not in (2, 3, 4):
        raise InputError(f"power must be 2, 3 or 4, got {p}")
    spec = spec or MollifierSpec()
    _, weights, c = _cube_covariance_table(n, d, spec)
    value = float(np.dot(weights, c**p))
    if not (math.isfinite(value) and value > 0):
        raise NumericError(f"power integral is not positive ({value})", achieved=value)
    return value


# expected growth of integral c_n**p over the unit cube: (d, p) -> (a, k) for n**a (log n)**k
POWER_INTEGRAL_FORMS = {
    (3, 2): (1.0, 0), (3, 3): (1.0, 0), (3, 4): (1.0, 1),
    (4, 2): (0.0, 1), (4, 3): (2.0, 0), (4, 4): (4.0, 0),
    (5, 2): (1.0, 0),
}


# --- scaling fits -----------------------------------------------------------

@dataclass
class ScalingFit:
    exponent: float
    log_prefactor: float
    residual: float
    n_range: list
    quantity: str = ""

    def to_record(self):
        return {"quantity": self.quantity, "exponent": self.exponent, "residual": self.residual,
                "n_range": list(self.n_range), "log_prefactor": self.log_prefactor}


def scaling_fit(series: Sequence[tuple], quantity: str = "", log_power: float = 0.0) -> ScalingFit:
    """Least-squares power law through ``(n, value)`` pairs in log-log coordinates.

    With ``log_power = k`` the values are first divided by ``(log n)**k``, which
    is how ``n**a (log n)**k`` growth laws are tested.
    """
    if len(series) < 3:
        raise InputError("a scaling fit needs at least 3 points")
    n = np.array([float(s[0]) for s in series])
    v = np.array([float(s[1]) for s in series])
    if np.any(np.diff(n) <= 0):
        raise InputError("cutoff indices must be strictly increasing")
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise InputError("scaling fits need finite positive values")
    if log_power:
        if np.any(n <= 1):
            raise InputError("log-corrected fits need n > 1")
        v = v / np.log(n) ** log_power
    x, y = np.log(n), np.log(v)
    slope, icpt = np.polyfit(x, y, 1)
    resid = float(np.max(np.abs(y - (slope * x + icpt))))
    return ScalingFit(exponent=float(slope), log_prefactor=float(icpt), residual=resid,
                      n_range=[int(s[0]) for s in series], quantity=quantity)


def ratio_drift(series: Sequence[tuple], form) -> float:
    """Spread ``max/min - 1`` of ``value / form(n)`` along a series."""
    ratios = np.array([float(v) / form(float(n)) for n, v in series])
    return float(ratios.max() / ratios.min() - 1.0)


# --- emitters ---------------------------------------------------------------

def write_covariance_csv(profiles: Iterable[CovarianceProfile], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["d", "n", "r", "c_n(r)"], lineterminator="\n")
        writer.writeheader()
        for prof in profiles:
            for row in prof.rows():
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_scaling_json(fits: Iterable[ScalingFit], path) -> None:
    with open(path, "w") as fh:
        json.dump([f.to_record() for f in fits], fh, indent=2, sort_keys=True)
        fh.write("\n")
