"""End-to-end experiments: partition functions, densities, LLN sweeps, case studies.

Samples are expensive in d = 4, and the cell observables ``I, M, D`` of a
normalized field do not depend on the couplings.  :class:`ObservableBank`
therefore stores them per ``(config, seed)``, optionally on disk, and every
experiment draws from it.  Sample ``k`` of a bank is always
``sample_field(config, seed, k)``, so banks of different sizes agree on their
common prefix.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .sampler import CutoffConfig, rng_for, sample_field
from .schedules import CouplingSet, RenormSchedule, classify_case, get_schedule, schedule_eval
from .spectral import MollifierSpec, ScalingFit, scaling_fit, variance
from .wick import array_moment_report, cell_fields, exact_action_variance, exact_moments

BOOTSTRAP_STREAM = 2
TAIL_SHARE = 0.5
TREND_CONFIDENCE = 0.9


# --- sample bank ----------------------------------------------------------------

def _config_key(config: CutoffConfig, seed: int) -> str:
    blob = json.dumps({"config": config.to_dict(), "seed": int(seed)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


class ObservableBank:
    """Cell observables ``I, M, D`` for samples ``0 .. count-1`` of one config."""

    def __init__(self, config: CutoffConfig, seed: int, cache_dir=None, threads: int = 1):
        if not config.normalize:
            raise InputError("the bank stores observables of the normalized field")
        self.config = config
        self.seed = int(seed)
        self.cache_dir = cache_dir
        self.threads = max(1, int(threads))
        shape = (0,) + (config.n,) * config.d
        self.I = np.empty(shape)
        self.M = np.empty(shape)
        self.D = np.empty(shape)
        self._exact = None
        if cache_dir is not None:
            self._load()

    @property
    def count(self) -> int:
        return self.I.shape[0]

    @property
    def path(self):
        return os.path.join(self.cache_dir, f"bank-{_config_key(self.config, self.seed)}.npz")

    def _load(self):
        if os.path.exists(self.path):
            with np.load(self.path) as data:
                self.I, self.M, self.D = data["I"], data["M"], data["D"]

    def _save(self):
        os.makedirs(self.cache_dir, exist_ok=True)
        tmp = self.path + ".tmp.npz"
        np.savez(tmp, I=self.I, M=self.M, D=self.D)
        os.replace(tmp, self.path)

    def _draw(self, ids):
        return [cell_fields(sample_field(self.config, self.seed, k, window="V")) for k in ids]

    def ensure(self, count: int) -> "ObservableBank":
        """Generate samples up to ``count``; ids ``2j, 2j+1`` share one transform."""
        start = self.count
        if count <= start:
            return self
        groups = [[k for k in (j, j + 1) if start <= k < count] for j in range(start - start % 2, count, 2)]
        workers = min(self.threads, max(1, self.config.memory_budget // max(self.config.bytes_needed(), 1)))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                out = [r for grp in pool.map(self._draw, groups) for r in grp]
        else:
            out = [r for grp in groups for r in self._draw(grp)]
        self.I = np.concatenate([self.I, np.stack([o[0] for o in out])])
        self.M = np.concatenate([self.M, np.stack([o[1] for o in out])])
        self.D = np.concatenate([self.D, np.stack([o[2] for o in out])])
        if self.cache_dir is not None:
            self._save()
        return self

    def aggregates(self, count: int | None = None):
        """``(I_n, M_n, D_n)`` per sample: cell sums divided by ``n**d``."""
        count = self.count if count is None else count
        self.ensure(count)
        axes = tuple(range(1, self.config.d + 1))
        return tuple(a[:count].mean(axis=axes) for a in (self.I, self.M, self.D))

    def action(self, couplings: CouplingSet | None, count: int | None = None):
        """``L_n`` per sample for the given couplings (zero for the null schedule)."""
        I, M, D = self.aggregates(count)
        if couplings is None:
            return np.zeros_like(I)
        return couplings.lambda_n * I - couplings.alpha_n * M - couplings.beta_n * D

    def exact(self):
        """Exact lattice second moments of the aggregates (cached)."""
        if self._exact is None:
            self._exact = exact_moments(self.config)
        return self._exact


_BANKS: dict = {}
WORKERS = 1  # default thread count for new banks (set by the CLI)


def get_bank(d: int, n: int, seed: int, mollifier: MollifierSpec | None = None, cache_dir=None,
             threads: int | None = None) -> ObservableBank:
    """Process-wide bank registry keyed by ``(config, seed)``."""
    cfg = CutoffConfig.for_cutoff(d, n, mollifier)
    key = (cfg, int(seed))
    if key not in _BANKS:
        _BANKS[key] = ObservableBank(cfg, seed, cache_dir=cache_dir, threads=threads or WORKERS)
    bank = _BANKS[key]
    if threads:
        bank.threads = threads
    if cache_dir is not None and bank.cache_dir is None:
        bank.cache_dir = cache_dir
    return bank


def couplings_for(schedule: RenormSchedule, n: int, d: int, mollifier: MollifierSpec | None = None):
    """Couplings at ``n`` with ``c_n`` from quadrature, or ``None`` for an all-zero schedule."""
    c_n = variance(n, d, mollifier)
    g, m, a = schedule.values(n, c_n)
    if g == 0 and m == 0 and a == 0:
        return None
    return schedule_eval(schedule, n, c_n)


# --- partition function -----------------------------------------------------------

@dataclass
class LogPartitionEstimate:
    n: int
    schedule: str
    log_Z: float
    std_error: float
    normalized: float
    sample_count: int
    max_exponent_seen: float
    max_weight_share: float
    tail_dominated: bool
    log_Z_cv: float | None = None
    std_error_cv: float | None = None

    @property
    def best(self):
        """Control-variate value when available, else the plain estimate."""
        return self.log_Z if self.log_Z_cv is None else self.log_Z_cv

    def to_dict(self):
        return dict(self.__dict__)


def _cv_mean(y, controls, means):
    """Regression estimator of ``E y`` with control variates of known mean."""
    C = np.column_stack([c - m for c, m in zip(controls, means)])
    X = np.column_stack([np.ones_like(y), C])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = max(y.size - X.shape[1], 1)
    se = math.sqrt(float(resid @ resid) / dof / y.size)
    return float(coef[0]), se


def log_partition_from_action(action, A_n: float, L=None, exact_L_moments=None, batches: int = 20):
    """``log mean exp(-action)`` with its batch-means SE and optional control variates.

    ``exact_L_moments`` are the known ``E L`` and ``E L^2`` of the
    unscaled ``L`` (``action = A_n L``).
    Returns ``(log_Z, se, max_exp, max_share, log_Z_cv, se_cv)``.
    """
    expo = -np.asarray(action, dtype=float)
    N = expo.size
    shift = float(expo.max())
    w = np.exp(expo - shift)
    mean = float(w.mean())
    log_Z = math.log(mean) + shift
    B = min(batches, N)
    usable = (N // B) * B
    bm = w[:usable].reshape(B, -1).mean(axis=1)
    se = float(bm.std(ddof=1) / math.sqrt(B) / mean) if B > 1 else math.nan
    share = float(w.max() / w.sum())
    cv = se_cv = None
    if L is not None and exact_L_moments is not None and A_n != 0:
        L = np.asarray(L, dtype=float)
        m1, m2 = exact_L_moments
        est, s = _cv_mean(w, [L, L * L], [m1, m2])
        if est > 0:
            cv, se_cv = math.log(est) + shift, s / est
    return log_Z, se, shift, share, cv, se_cv


def estimate_log_partition(d: int, n: int, schedule, sample_count: int, seed: int,
                           mollifier: MollifierSpec | None = None, cache_dir=None,
                           control_variates: bool = True) -> LogPartitionEstimate:
    """``log E exp(-A_n L_n)`` under the Gaussian reference law."""
    schedule = get_schedule(schedule)
    if sample_count < 200:
        raise InputError("estimate_log_partition needs at least 200 samples")
    bank = get_bank(d, n, seed, mollifier, cache_dir)
    cs = couplings_for(schedule, n, d, mollifier)
    L = bank.action(cs, sample_count)
    if cs is None:
        return LogPartitionEstimate(n, schedule.name, 0.0, 0.0, 0.0, sample_count, 0.0, 1.0 / sample_count, False)
    moments = None
    if control_variates:
        moments = (0.0, exact_action_variance(bank.exact(), cs))
    log_Z, se, mx, share, cv, se_cv = log_partition_from_action(cs.A_n * L, cs.A_n, L, moments)
    cells = float(n) ** d
    return LogPartitionEstimate(n=n, schedule=schedule.name, log_Z=log_Z, std_error=se,
                                normalized=(cv if cv is not None else log_Z) / cells, sample_count=sample_count,
                                max_exponent_seen=mx, max_weight_share=share, tail_dominated=share > TAIL_SHARE,
                                log_Z_cv=cv, std_error_cv=se_cv)


def exact_quadratic_log_partition(config: CutoffConfig, t: float) -> float:
    """Exact ``log E exp(t M_n)`` for the Gaussian lattice law (dense eigenvalues).

    ``M_n = sum_x w_x (psi_x^2 - 1)`` with the trapezoid weights over V, so
    ``E exp(t M_n) = exp(-t sum w) det(1 - 2 t W^{1/2} C W^{1/2})^{-1/2}``.
    """
    from .wick import cell_weight_matrix, _lattice_correlation

    d, w = config.d, config.window_points
    if w**d > 4000:
        raise InputError("dense oracle is limited to small grids")
    u = cell_weight_matrix(config.n, config.steps_per_cell).mean(axis=0)
    weights = u
    for _ in range(d - 1):
        weights = np.multiply.outer(weights, u)
    weights = weights.ravel()
    rho = _lattice_correlation(config)
    M = config.grid_points_per_side
    idx = np.array(np.unravel_index(np.arange(w**d), (w,) * d)).T
    diff = (idx[:, None, :] - idx[None, :, :]) % M
    C = rho[tuple(diff[..., j] for j in range(d))]
    sw = np.sqrt(weights)
    K = sw[:, None] * C * sw[None, :]
    ev = np.linalg.eigvalsh(K)
    if np.any(1.0 - 2.0 * t * ev <= 0):
        return math.inf
    return float(-t * weights.sum() - 0.5 * np.sum(np.log1p(-2.0 * t * ev)))


# --- densities ------------------------------------------------------------------------

@dataclass
class DensityStats:
    n: int
    schedule: str
    quantile_levels: list
    quantiles: list
    mean_R: float
    mean_R_se: float
    fraction_above_1: float
    median_abs_log_R: float

    def to_dict(self):
        return dict(self.__dict__)


QUANTILE_LEVELS = [0.05, 0.25, 0.5, 0.75, 0.95]


def density_from_action(action, log_Z: float, n: int, name: str) -> DensityStats:
    logR = -np.asarray(action, dtype=float) - log_Z
    R = np.exp(logR)
    N = R.size
    return DensityStats(n=n, schedule=name, quantile_levels=list(QUANTILE_LEVELS),
                        quantiles=[float(q) for q in np.quantile(logR, QUANTILE_LEVELS)],
                        mean_R=float(R.mean()), mean_R_se=float(R.std(ddof=1) / math.sqrt(N)),
                        fraction_above_1=float(np.mean(logR > 0)), median_abs_log_R=float(np.median(np.abs(logR))))


def density_statistics(d: int, n: int, schedule, sample_count: int, seed: int,
                       mollifier: MollifierSpec | None = None, cache_dir=None) -> DensityStats:
    """Statistics of ``R = exp(-A_n L_n) / Z`` (``Z`` from the control-variate estimate)."""
    schedule = get_schedule(schedule)
    est = estimate_log_partition(d, n, schedule, sample_count, seed, mollifier, cache_dir)
    bank = get_bank(d, n, seed, mollifier, cache_dir)
    cs = couplings_for(schedule, n, d, mollifier)
    action = np.zeros(sample_count) if cs is None else cs.A_n * bank.action(cs, sample_count)
    return density_from_action(action, est.best, n, schedule.name)


# --- trends -----------------------------------------------------------------------------

def bootstrap_trend(samples_by_n: dict, statistic, direction: str, seed: int, resamples: int = 1000,
                    strict: bool = True) -> dict:
    """Fraction of bootstrap resamples in which ``statistic`` is monotone in ``n``.

    ``direction`` is ``"increasing"`` or ``"decreasing"``; with ``strict=False``
    ties count as monotone.  Each ``n`` is resampled independently.
    """
    if direction not in ("increasing", "decreasing"):
        raise InputError("direction must be 'increasing' or 'decreasing'")
    ns = sorted(samples_by_n)
    if len(ns) < 2:
        raise InputError("a trend needs at least two cutoffs")
    data = {n: np.asarray(samples_by_n[n]) for n in ns}
    point = [float(statistic(data[n])) for n in ns]
    rng = rng_for(seed, BOOTSTRAP_STREAM, 0)
    hits = 0
    for _ in range(resamples):
        vals = []
        for n in ns:
            x = data[n]
            idx = rng.integers(0, len(x), len(x))
            vals.append(float(statistic(x[idx])))
        diffs = np.diff(vals)
        if direction == "decreasing":
            diffs = -diffs
        hits += bool(np.all(diffs > 0) if strict else np.all(diffs >= 0))
    conf = hits / resamples
    return {"n": ns, "point": point, "confidence": conf, "direction": direction,
            "passed": conf >= TREND_CONFIDENCE, "label": "confirmed" if conf >= TREND_CONFIDENCE else "inconclusive"}


def log_partition_statistic(A_n: float, cells: float, exact_L_moments=None):
    """Bootstrap-ready statistic: normalized log Z from the ``L`` samples."""
    def stat(L):
        lz, _, _, _, cv, _ = log_partition_from_action(A_n * L, A_n, L, exact_L_moments)
        return (cv if cv is not None else lz) / cells
    return stat


# --- LLN and decorrelation --------------------------------------------------------------

@dataclass
class LLNResult:
    d: int
    n_range: list
    second_moments: dict
    std_errors: dict
    fits: dict

    def to_dict(self):
        return {"d": self.d, "n_range": self.n_range, "second_moments": self.second_moments,
                "std_errors": self.std_errors, "fits": {k: f.to_record() for k, f in self.fits.items()}}


def lln_sweep(d: int, n_range, sample_count: int, seed: int, mollifier: MollifierSpec | None = None,
              cache_dir=None) -> LLNResult:
    """Decay exponents of ``<I_n^2>``, ``<M_n^2>`` and ``<D_n^2>`` in ``n``."""
    ns = sorted(int(n) for n in n_range)
    if len(ns) < 3:
        raise InputError("an LLN sweep needs at least 3 cutoffs")
    moments = {"I": [], "M": [], "D": []}
    ses = {"I": [], "M": [], "D": []}
    for n in ns:
        bank = get_bank(d, n, seed, mollifier, cache_dir)
        for key, arr in zip("IMD", bank.aggregates(sample_count)):
            sq = arr * arr
            moments[key].append(float(sq.mean()))
            ses[key].append(float(sq.std(ddof=1) / math.sqrt(sq.size)))
    fits = {k: scaling_fit(list(zip(ns, v)), quantity=f"<{k}_n^2>") for k, v in moments.items()}
    return LLNResult(d=d, n_range=ns, second_moments=moments, std_errors=ses, fits=fits)


def decorrelation_report(d: int, n: int, sample_count: int, seed: int, mollifier: MollifierSpec | None = None,
                         cache_dir=None, pairs=None) -> dict:
    """Per-cell second moments and cross-cell correlations at one cutoff."""
    bank = get_bank(d, n, seed, mollifier, cache_dir).ensure(sample_count)
    arrays = {"I": bank.I[:sample_count], "M": bank.M[:sample_count], "D": bank.D[:sample_count]}
    return array_moment_report(arrays, pairs)


# --- case studies ---------------------------------------------------------------------------

@dataclass
class CaseExperimentReport:
    schedule: str
    d: int
    n_range: list
    classification: dict
    couplings: list
    log_partition: list
    densities: list
    trends: dict
    array_bound: dict
    tail_dominated_count: int
    verdict: str
    branch: str

    def to_dict(self):
        return dict(self.__dict__)


def case_experiment(preset, d: int | None, n_range, sample_count: int | dict, seed: int,
                    mollifier: MollifierSpec | None = None, cache_dir=None, resamples: int = 1000,
                    set_lo: float = 0.0):
    """Run one schedule across cutoffs and emit the branch-consistent trend verdict.

    ``sample_count`` is one count for every cutoff or a mapping ``{n: count}``.
    """
    from .ldp import dependent_array_bound_check, empirical_cgf, legendre_transform

    schedule = get_schedule(preset)
    d = schedule.d if d is None else d
    ns = sorted(int(n) for n in n_range)
    counts = {n: int(sample_count[n]) if isinstance(sample_count, dict) else int(sample_count) for n in ns}
    report_cls = classify_case(schedule, d, ns, c_of_n=lambda n: variance(n, d, mollifier))
    est, dens, cpl, L_by_n, action_by_n, stats = [], [], [], {}, {}, {}
    for n in ns:
        bank = get_bank(d, n, seed, mollifier, cache_dir)
        cs = couplings_for(schedule, n, d, mollifier)
        L = bank.action(cs, counts[n])
        e = estimate_log_partition(d, n, schedule, counts[n], seed, mollifier, cache_dir)
        act = np.zeros_like(L) if cs is None else cs.A_n * L
        est.append(e)
        dens.append(density_from_action(act, e.best, n, schedule.name))
        cpl.append(None if cs is None else cs.__dict__)
        L_by_n[n] = L
        action_by_n[n] = act
        if cs is not None:
            stats[n] = (cs.A_n, float(n) ** d, (0.0, exact_action_variance(bank.exact(), cs)))
    trends = {}
    # R statistics are computed on the action with the per-resample log Z
    def med_abs_log_r(act):
        lz = log_partition_from_action(act, 0.0)[0]
        return np.median(np.abs(-act - lz))

    def med_log_r(act):
        lz = log_partition_from_action(act, 0.0)[0]
        return np.median(-act - lz)

    kept = [n for n, e in zip(ns, est) if not e.tail_dominated]
    if len(kept) >= 2 and stats:
        if report_cls.branch == "1" or schedule.case == "B":
            trends["median_abs_log_R"] = bootstrap_trend({n: action_by_n[n] for n in kept}, med_abs_log_r,
                                                         "decreasing", seed, resamples)
        else:
            ln = {n: L_by_n[n] for n in kept}
            trends["normalized_log_Z"] = _bootstrap_log_z(ln, stats, seed, resamples)
            trends["median_log_R"] = bootstrap_trend({n: action_by_n[n] for n in kept}, med_log_r,
                                                     "decreasing", seed, resamples)
    # cell-level lower bound at the largest n
    nmax = ns[-1]
    bank = get_bank(d, nmax, seed, mollifier, cache_dir)
    cs = couplings_for(schedule, nmax, d, mollifier)
    array_bound = {}
    if cs is not None:
        k = counts[nmax]
        X = (cs.lambda_n * bank.I[:k] - cs.alpha_n * bank.M[:k] - cs.beta_n * bank.D[:k]).ravel()
        theta_max = 1.0 / (4.0 * max(abs(cs.alpha_n), abs(cs.beta_n), 1.0))
        sd = float(np.std(X))
        cgf = empirical_cgf(-X, theta_max)
        hs = np.linspace(0.0, 3.0 * sd, 31)
        rate = legendre_transform(cgf, hs)
        rep = dependent_array_bound_check({n: L_by_n[n] for n in ns}, rate, set_lo, d)
        array_bound = {"set_lo": set_lo, "rate_inf": rep.rate_inf, "rows": rep.rows, "violations": rep.violations,
                       "domain_bound": rate.domain_bound}
    tail_count = sum(e.tail_dominated for e in est)
    verdict, branch = _verdict(report_cls.branch, schedule, trends)
    return CaseExperimentReport(schedule=schedule.name, d=d, n_range=ns, classification=report_cls.to_dict(),
                                couplings=cpl, log_partition=[e.to_dict() for e in est],
                                densities=[x.to_dict() for x in dens], trends=trends, array_bound=array_bound,
                                tail_dominated_count=tail_count, verdict=verdict, branch=branch)


def _bootstrap_log_z(L_by_n, stats, seed, resamples):
    """Bootstrap confidence that normalized log Z is positive and non-decreasing."""
    ns = sorted(L_by_n)
    point = [log_partition_statistic(*stats[n])(L_by_n[n]) for n in ns]
    rng = rng_for(seed, BOOTSTRAP_STREAM, 1)
    inc = pos = 0
    for _ in range(resamples):
        vals = []
        for n in ns:
            x = L_by_n[n]
            vals.append(log_partition_statistic(*stats[n])(x[rng.integers(0, len(x), len(x))]))
        inc += bool(np.all(np.diff(vals) >= 0))
        pos += bool(min(vals) > 0)
    ci, cp = inc / resamples, pos / resamples
    conf = min(ci, cp)
    return {"n": ns, "point": point, "confidence": conf, "confidence_nondecreasing": ci,
            "confidence_positive": cp, "direction": "non-decreasing", "passed": conf >= TREND_CONFIDENCE,
            "label": "confirmed" if conf >= TREND_CONFIDENCE else "inconclusive"}


def _verdict(branch, schedule, trends):
    if not trends:
        return "inconclusive: no trend could be evaluated", branch
    ok = all(t["passed"] for t in trends.values())
    if "median_abs_log_R" in trends:
        text = "branch (1) trend: R->1"
    else:
        text = "branch (2) trend: log Z growth, R->0"
    return (text if ok else f"inconclusive ({text} not confirmed at {TREND_CONFIDENCE:.0%})"), branch
