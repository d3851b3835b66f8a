"""Wick-ordered observables of the normalized field and their cell averages.

For a normalized sample ``psi`` the three local densities are

    :psi^4:,   :psi^2:,   (1/d_n) sum_j :(d_j psi)^2:,

Wick-ordered with respect to the exact lattice variances of the sampled law.
Their averages over the ``n**d`` cells of side ``1/n`` are ``I``, ``M`` and
``D``; the aggregates ``I_n, M_n, D_n`` are the integrals over ``V`` (cell sums
divided by ``n**d``) and ``X = lambda I - alpha M - beta D``.

The module also computes the exact second moments of these quantities for the
lattice law, which serve as an oracle for the Monte Carlo estimates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .errors import CapacityError, InputError
from .sampler import CutoffConfig, FieldSample, _spectrum, lattice_gradient_variances

DEFAULT_CELL_BUDGET = 10**6


def wick_power(x, c, p: int):
    """Wick power ``:x^p:`` for a centred Gaussian of variance ``c`` (Hermite form).

    Examples
    --------
    >>> wick_power(2.0, 1.0, 2)
    3.0
    >>> wick_power(1.0, 1.0, 4)
    -2.0
    """
    if p not in (0, 1, 2, 3, 4):
        raise InputError(f"Wick power must be in 0..4, got {p}")
    if not np.all(np.asarray(c) > 0):
        raise InputError("variance must be positive")
    x = np.asarray(x, dtype=float)
    if p == 0:
        out = np.ones_like(x)
    elif p == 1:
        out = x.copy()
    elif p == 2:
        out = x * x - c
    elif p == 3:
        out = x * (x * x - 3.0 * c)
    else:
        x2 = x * x
        out = x2 * (x2 - 6.0 * c) + 3.0 * c * c
    return float(out) if out.ndim == 0 else out


def cell_weight_matrix(n: int, q: int) -> np.ndarray:
    """Rows are 1-D trapezoid rules averaging over each of the ``n`` cells.

    A cell spans ``q`` grid steps; the matrix has shape ``(n, n q + 1)`` and each
    row sums to one.
    """
    W = np.zeros((n, n * q + 1))
    rule = np.full(q + 1, 1.0 / q)
    rule[[0, -1]] *= 0.5
    for i in range(n):
        W[i, i * q:(i + 1) * q + 1] = rule
    return W


def cell_average(field: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Contract ``field`` with ``W`` along every axis (cell trapezoid averages)."""
    out = field
    for axis in range(field.ndim):
        out = np.moveaxis(np.tensordot(W, out, axes=([1], [axis])), 0, axis)
    return out


@dataclass
class CellObservables:
    n: int
    I: np.ndarray
    M: np.ndarray
    D: np.ndarray
    X: np.ndarray
    L_n: float
    I_n: float
    M_n: float
    D_n: float

    @property
    def cells(self):
        """Per-cell records ``(I, M, D, X)`` in row-major cell order."""
        return list(zip(self.I.ravel(), self.M.ravel(), self.D.ravel(), self.X.ravel()))


def cell_fields(sample: FieldSample, d_n: float | None = None, cell_budget: int = DEFAULT_CELL_BUDGET):
    """Coupling-independent cell averages ``(I, M, D)`` of one normalized sample."""
    cfg = sample.config
    if not cfg.normalize:
        raise InputError("observables are defined for the normalized field")
    n, d = cfg.n, cfg.d
    if n**d > cell_budget:
        raise CapacityError(f"{n}^{d} cells exceed the cell budget {cell_budget}", cap=cell_budget, requested=n**d)
    d_n = float(n) if d_n is None else float(d_n)
    W = cell_weight_matrix(n, cfg.steps_per_cell)
    psi = sample.v_region()
    psi2 = psi * psi
    I = cell_average(psi2 * (psi2 - 6.0) + 3.0, W)
    M = cell_average(psi2 - 1.0, W)
    gvar = lattice_gradient_variances(cfg, normalized=True)
    grad_sq = sum(sample.v_region(g) ** 2 for g in sample.gradient) - sum(gvar)
    D = cell_average(grad_sq, W) / d_n
    return I, M, D


def assemble(n: int, I, M, D, couplings) -> CellObservables:
    lam, alpha, beta = couplings.lambda_n, couplings.alpha_n, couplings.beta_n
    X = lam * I - alpha * M - beta * D
    cells = I.size
    return CellObservables(n=n, I=I, M=M, D=D, X=X, L_n=float(X.sum() / cells), I_n=float(I.sum() / cells),
                           M_n=float(M.sum() / cells), D_n=float(D.sum() / cells))


def compute_observables(sample: FieldSample, couplings, cell_budget: int = DEFAULT_CELL_BUDGET) -> CellObservables:
    """Cell integrals of the Wick densities and the array ``X_{n,i}`` for one sample.

    ``couplings`` needs attributes ``lambda_n, alpha_n, beta_n, d_n``.
    """
    I, M, D = cell_fields(sample, couplings.d_n, cell_budget)
    return assemble(sample.config.n, I, M, D, couplings)


# --- accumulation -------------------------------------------------------------

class MomentAccumulator:
    """Running mean and co-moment matrix of a vector statistic.

    Merging uses the pairwise update of Chan et al., so partial results from
    separate workers combine independently of order up to round-off.
    """

    def __init__(self, dim: int):
        self.count = 0
        self.mean = np.zeros(dim)
        self.comoment = np.zeros((dim, dim))

    def add(self, x):
        x = np.asarray(x, dtype=float)
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.comoment = self.comoment + np.outer(delta, x - self.mean)

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        out = MomentAccumulator(self.mean.size)
        out.count = self.count + other.count
        if out.count == 0:
            return out
        delta = other.mean - self.mean
        out.mean = self.mean + delta * (other.count / out.count)
        out.comoment = self.comoment + other.comoment + np.outer(delta, delta) * (self.count * other.count / out.count)
        return out

    def covariance(self):
        if self.count < 2:
            raise InputError("need at least two observations")
        return self.comoment / (self.count - 1)

    def second_moments(self):
        """Raw second moments ``E[x_a x_b]``."""
        return self.comoment / self.count + np.outer(self.mean, self.mean)


def array_moment_report(cell_arrays: dict, pairs=None, min_samples: int = 100) -> dict:
    """Per-cell second moments and cross-cell correlations.

    ``cell_arrays`` maps ``"I"``, ``"M"``, ``"D"`` (and optionally ``"X"``) to
    arrays of shape ``(samples, n, ..., n)``.  ``pairs`` is a list of
    ``(cell_a, cell_b)`` multi-indices; by default the two opposite corners.
    """
    arrays = {k: np.asarray(v, dtype=float) for k, v in cell_arrays.items()}
    N = next(iter(arrays.values())).shape[0]
    if N < min_samples:
        raise InputError(f"need at least {min_samples} samples, got {N}")
    n, d = arrays["I"].shape[1], arrays["I"].ndim - 1
    if pairs is None:
        pairs = [((0,) * d, (n - 1,) * d)]
    report = {"samples": N, "n": n, "second_moments": {}, "correlations": []}
    for key, arr in arrays.items():
        sq = arr.reshape(N, -1) ** 2
        per_cell = sq.mean(axis=0)
        se = sq.std(axis=0, ddof=1) / math.sqrt(N)
        report["second_moments"][key] = {"per_cell": per_cell, "std_error": se,
                                         "pooled": float(per_cell.mean()),
                                         "pooled_se": float(sq.mean(axis=1).std(ddof=1) / math.sqrt(N))}
    for a, b in pairs:
        for key in ("I", "M", "D"):
            x, y = arrays[key][(slice(None),) + tuple(a)], arrays[key][(slice(None),) + tuple(b)]
            r = float(np.corrcoef(x, y)[0, 1])
            report["correlations"].append({"quantity": key, "cell_a": tuple(a), "cell_b": tuple(b),
                                           "corr": r, "std_error": (1.0 - r * r) / math.sqrt(N - 1)})
    return report


# --- exact lattice moments -----------------------------------------------------

def _offset_autocorrelation(u: np.ndarray, v: np.ndarray | None = None):
    """``a(delta) = sum_x u[x] v[x + delta]`` for ``delta = -(len-1) .. len-1``."""
    v = u if v is None else v
    return np.correlate(v, u, mode="full")


def _lattice_correlation(config: CutoffConfig, axes=()):
    """``E[a(x) b(x + delta)]`` on the torus of offsets, for the normalized field.

    ``axes=()`` gives the field correlation, ``(j,)`` the field against
    ``d_j psi`` and ``(j, k)`` the correlation of two gradient components.
    """
    kd, amp, c_lat, _ = _spectrum(config)
    d = config.d
    spec = (amp * amp / c_lat).astype(complex)
    for j in axes:
        shape = [1] * d
        shape[j] = -1
        spec = spec * kd.reshape(shape)
    if len(axes) == 1:
        spec = spec * 1j
    return np.real(sfft.ifftn(spec)) * float(config.grid_points_per_side) ** d


def _window_offsets(config):
    w, M = config.window_points, config.grid_points_per_side
    return np.arange(-(w - 1), w) % M


def exact_moments(config: CutoffConfig, weights=None, other=None, d_n: float | None = None) -> dict:
    """Exact (co)variances of ``(I, M, D)`` integrated against separable weights.

    ``weights`` is a list of ``d`` one-dimensional weight vectors on the V grid
    (default: the aggregate over V, i.e. the mean of all cell averages);
    ``other`` is a second list for cross-covariances between two regions.
    Uses ``Cov(:a^p:(x), :b^p:(y)) = p! rho(x - y)**p`` for unit-variance
    Gaussian pairs.
    """
    n, d = config.n, config.d
    d_n = float(n) if d_n is None else float(d_n)
    W = cell_weight_matrix(n, config.steps_per_cell)
    if weights is None:
        weights = [W.mean(axis=0)] * d
    other = weights if other is None else other
    A1 = [_offset_autocorrelation(np.asarray(u), np.asarray(v)) for u, v in zip(weights, other)]
    idx = np.ix_(*([_window_offsets(config)] * d))

    def pair_sum(rho, power):
        r = rho[idx] ** power
        for axis in range(d):
            r = np.tensordot(A1[axis], r, axes=([0], [0])) if axis == 0 else np.tensordot(r, A1[axis], axes=([0], [0]))
        return float(r)

    rho = _lattice_correlation(config)
    var_I = 24.0 * pair_sum(rho, 4)
    var_M = 2.0 * pair_sum(rho, 2)
    var_D = cov_MD = 0.0
    for j in range(d):
        cov_MD += 2.0 * pair_sum(_lattice_correlation(config, (j,)), 2)
        for k in range(j, d):
            var_D += (1.0 if j == k else 2.0) * 2.0 * pair_sum(_lattice_correlation(config, (j, k)), 2)
    return {"var_I": var_I, "var_M": var_M, "var_D": var_D / d_n**2, "cov_MD": cov_MD / d_n,
            "cov_IM": 0.0, "cov_ID": 0.0}


def exact_cell_moments(config: CutoffConfig, cell_a, cell_b=None, d_n=None) -> dict:
    """Exact (co)variances for the averages over one cell, or between two cells."""
    W = cell_weight_matrix(config.n, config.steps_per_cell)
    cell_b = cell_a if cell_b is None else cell_b
    return exact_moments(config, [W[i] for i in cell_a], [W[i] for i in cell_b], d_n)


def exact_action_variance(moments: dict, couplings) -> float:
    """``Var(lambda I - alpha M - beta D)`` from :func:`exact_moments` output."""
    lam, alpha, beta = couplings.lambda_n, couplings.alpha_n, couplings.beta_n
    return (lam**2 * moments["var_I"] + alpha**2 * moments["var_M"] + beta**2 * moments["var_D"]
            + 2.0 * alpha * beta * moments["cov_MD"])
