"""Command-line harness: run experiments into a results directory and report on them.

Every run writes ``tables/*.csv``, ``verdict.json`` and ``manifest.json``
under ``output_dir``.  Tables and verdicts depend only on the config and
seed, so reruns are byte-identical; the manifest additionally carries
timestamps.  ``report`` verifies checksums before reading anything.

Exit codes: 0 success, 2 validation, 3 capacity, 4 integrity, 5 inconclusive
trend, 1 other numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from importlib import metadata

import numpy as np

from . import lab, ldp, spectral
from .config import RunConfig, load_config, validate
from .errors import InconclusiveTrend, InputError, IntegrityError, Phi4LabError

SUBCOMMANDS = {"covariance": "covariance", "lln": "lln", "decorrelation": "decorrelation",
               "ldp": "ldp-synthetic", "case": "case-study"}


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    experiment: str
    started: str
    finished: str
    wall_time: float
    version: str
    output_dir: str
    files: dict = field(default_factory=dict)

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def load(cls, path) -> "RunManifest":
        if os.path.isdir(path):
            path = os.path.join(path, "manifest.json")
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise IntegrityError(f"manifest not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise IntegrityError(f"manifest {path} is not valid JSON: {exc}") from None
        data["output_dir"] = os.path.dirname(os.path.abspath(path))
        return cls(**data)

    def verify(self):
        for rel, digest in self.files.items():
            full = os.path.join(self.output_dir, rel)
            if not os.path.exists(full):
                raise IntegrityError(f"{rel}: listed in the manifest but missing")
            if _sha256(full) != digest:
                raise IntegrityError(f"{rel}: checksum mismatch")


class _Writer:
    """Collects output files; paths are confined to the output directory."""

    def __init__(self, root):
        self.root = os.path.abspath(root)
        self.files = []

    def path(self, rel):
        full = os.path.abspath(os.path.join(self.root, rel))
        if os.path.commonpath([full, self.root]) != self.root:
            raise InputError(f"refusing to write outside the output directory: {rel}")
        os.makedirs(os.path.dirname(full), exist_ok=True)
        self.files.append(rel)
        return full

    def csv(self, rel, header, rows):
        with open(self.path(rel), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])

    def json(self, rel, obj):
        with open(self.path(rel), "w") as fh:
            json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")


# --- experiments ---------------------------------------------------------------------

def _fit_or_none(series, quantity, log_power=0.0):
    if len(series) == 2:
        (n0, v0), (n1, v1) = series
        corr = (math.log(n1) / math.log(n0)) ** log_power if log_power else 1.0
        slope = math.log(v1 / v0 / corr) / math.log(n1 / n0)
        return {"quantity": quantity, "exponent": slope, "n_range": [n0, n1], "points": 2}
    if len(series) < 2:
        return None
    return spectral.scaling_fit(series, quantity, log_power).to_record()


def _run_covariance(cfg: RunConfig, out: _Writer) -> dict:
    d, ns = cfg.d, list(cfg.n_range)
    profiles = [spectral.covariance_profile(n, d, 8 * n) for n in ns]
    spectral.write_covariance_csv(profiles, out.path("tables/covariance_profile.csv"))
    out.csv("tables/variance_scaling.csv", ["n", "c_n(0)", "gradient_variance"],
            [(p.n, p.c0, p.grad_variance) for p in profiles])
    fits = {"c_n(0)": _fit_or_none([(p.n, p.c0) for p in profiles], "c_n(0)"),
            "gradient_variance": _fit_or_none([(p.n, p.grad_variance) for p in profiles], "gradient_variance")}
    targets = {"c_n(0)": d - 2.0, "gradient_variance": float(d)}
    rows, power = [], {}
    for p in (2, 3, 4):
        form = spectral.POWER_INTEGRAL_FORMS.get((d, p))
        if form is None:
            continue
        series = [(n, spectral.covariance_power_integral(n, d, p)) for n in ns]
        rows += [(p, n, v) for n, v in series]
        a, k = form
        fit = _fit_or_none(series, f"int c_n^{p}", k)
        power[p] = {"target_exponent": a, "log_power": k, "fit": fit,
                    "ratio_drift": spectral.ratio_drift(series, lambda n: n**a * math.log(n) ** k) if k else None}
    if rows:
        out.csv("tables/power_integrals.csv", ["p", "n", "integral"], rows)
    return {"experiment": "covariance", "d": d, "n_range": ns, "fits": fits, "targets": targets,
            "power_integrals": power}


def _run_lln(cfg: RunConfig, out: _Writer) -> dict:
    res = lab.lln_sweep(cfg.d, cfg.n_range, cfg.sample_count, cfg.seed)
    rows = []
    for i, n in enumerate(res.n_range):
        rows.append([n] + [res.second_moments[k][i] for k in "IMD"] + [res.std_errors[k][i] for k in "IMD"])
    out.csv("tables/lln_moments.csv", ["n", "I2", "M2", "D2", "I2_se", "M2_se", "D2_se"], rows)
    return {"experiment": "lln", **res.to_dict(), "targets": {"I": -float(cfg.d), "D": -(cfg.d - 2.0)}}


def _run_decorrelation(cfg: RunConfig, out: _Writer) -> dict:
    n = max(cfg.n_range)
    rep = lab.decorrelation_report(cfg.d, n, cfg.sample_count, cfg.seed)
    rows = []
    for key, sm in rep["second_moments"].items():
        for idx, (v, s) in enumerate(zip(sm["per_cell"], sm["std_error"])):
            rows.append((key, idx, v, s))
    out.csv("tables/cell_second_moments.csv", ["quantity", "cell", "second_moment", "std_error"], rows)
    corr = rep["correlations"]
    out.csv("tables/correlations.csv", ["quantity", "cell_a", "cell_b", "corr", "std_error"],
            [(c["quantity"], "-".join(map(str, c["cell_a"])), "-".join(map(str, c["cell_b"])), c["corr"],
              c["std_error"]) for c in corr])
    ok = all(abs(c["corr"]) < 0.05 or abs(c["corr"]) < 3 * c["std_error"] for c in corr)
    return {"experiment": "decorrelation", "d": cfg.d, "n": n, "samples": rep["samples"],
            "correlations": corr, "decorrelated": ok}


def _run_ldp(cfg: RunConfig, out: _Writer) -> dict:
    hs = np.linspace(0.0, 3.0, 31)  # theta >= 0: the upper tail
    gauss = ldp.legendre_transform(ldp.exact_cgf(lambda t: 0.5 * t * t, 20.0, 401), hs)
    ldp.write_rate_csv(gauss, out.path("tables/gaussian_rate.csv"))
    bern = ldp.FiniteDistribution.bernoulli(0.5)
    cramer = ldp.cramer_lower_bound_check(bern, 0.7, [50, 100, 200, 400], cfg.table_budget)
    out.csv("tables/cramer.csv", ["N", "log_prob_rate", "gap"], zip(cramer.N, cramer.log_prob_rate, cramer.gaps))
    paths = cfg.sample_count or 1000
    T = np.array([[0.9, 0.1], [0.1, 0.9]])
    markov = ldp.markov_liminf_check(T, 10_000, paths, cfg.seed)
    gauss_err = float(np.max(np.abs(gauss.values - hs**2 / 2)))
    return {"experiment": "ldp-synthetic", "gaussian_max_error": gauss_err, "cramer": cramer.to_dict(),
            "markov": markov.to_dict()}


def _run_case(cfg: RunConfig, out: _Writer) -> dict:
    sched = cfg.schedule_obj()
    rep = lab.case_experiment(sched, cfg.d, cfg.n_range, cfg.sample_count, cfg.seed)
    out.csv("tables/log_partition.csv",
            ["n", "log_Z", "std_error", "log_Z_cv", "std_error_cv", "normalized", "max_exponent_seen",
             "max_weight_share", "tail_dominated"],
            [(e["n"], e["log_Z"], e["std_error"], e["log_Z_cv"], e["std_error_cv"], e["normalized"],
              e["max_exponent_seen"], e["max_weight_share"], e["tail_dominated"]) for e in rep.log_partition])
    out.csv("tables/density.csv",
            ["n"] + [f"q{q}" for q in lab.QUANTILE_LEVELS] + ["mean_R", "mean_R_se", "fraction_above_1",
                                                                "median_abs_log_R"],
            [[x["n"]] + x["quantiles"] + [x["mean_R"], x["mean_R_se"], x["fraction_above_1"],
                                          x["median_abs_log_R"]] for x in rep.densities])
    if rep.array_bound:
        out.csv("tables/array_bound.csv", ["n", "samples", "hits", "log_rate", "std_error", "bound", "violation"],
                [(r["n"], r["samples"], r["hits"], r["log_rate"], r["std_error"], r["bound"], r["violation"])
                 for r in rep.array_bound["rows"]])
    return {"experiment": "case-study", **rep.to_dict()}


_RUNNERS = {"covariance": _run_covariance, "lln": _run_lln, "decorrelation": _run_decorrelation,
            "ldp-synthetic": _run_ldp, "case-study": _run_case}


def _apply_budgets(cfg: RunConfig):
    # sample banks read the memory budget from their CutoffConfig
    if cfg.d is None:
        return
    from .sampler import CutoffConfig

    for n in cfg.n_range:
        if n**cfg.d > cfg.cell_budget:
            from .errors import CapacityError
            raise CapacityError(f"cell_budget {cfg.cell_budget} exceeded: n={n} needs {n**cfg.d} cells",
                                cap=cfg.cell_budget, requested=n**cfg.d)
        if cfg.experiment in ("lln", "decorrelation", "case-study"):
            CutoffConfig.for_cutoff(cfg.d, n, memory_budget=cfg.memory_budget).check_budget()


def run(cfg: RunConfig) -> RunManifest:
    """Execute one experiment and write its results and manifest."""
    if not isinstance(cfg, RunConfig):
        cfg = validate(dict(cfg))
    _apply_budgets(cfg)
    lab.WORKERS = cfg.threads
    os.makedirs(cfg.output_dir, exist_ok=True)
    out = _Writer(cfg.output_dir)
    t0 = time.time()
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(t0))
    with open(out.path("config.txt"), "w") as fh:
        fh.write(cfg.to_text())
    verdict = _RUNNERS[cfg.experiment](cfg, out)
    verdict["config_hash"] = hashlib.sha256(cfg.identity_text().encode()).hexdigest()
    out.json("verdict.json", verdict)
    t1 = time.time()
    manifest = RunManifest(config_hash=verdict["config_hash"], seed=cfg.seed, experiment=cfg.experiment,
                           started=started, finished=time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(t1)),
                           wall_time=t1 - t0, version=_version(), output_dir=os.path.abspath(cfg.output_dir),
                           files={rel: _sha256(os.path.join(out.root, rel)) for rel in sorted(set(out.files))})
    data = manifest.to_dict()
    del data["output_dir"]
    with open(os.path.join(out.root, "manifest.json"), "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def is_inconclusive(verdict: dict) -> bool:
    return verdict.get("experiment") == "case-study" and str(verdict.get("verdict", "")).startswith("inconclusive")


# --- report -----------------------------------------------------------------------------

def _plot_spec(verdict, files):
    exp = verdict["experiment"]
    tables = [f for f in files if f.startswith("tables/")]
    series = []
    if exp == "covariance":
        series = [{"file": "tables/variance_scaling.csv", "x": "n", "y": "c_n(0)", "scale": "loglog"},
                  {"file": "tables/variance_scaling.csv", "x": "n", "y": "gradient_variance", "scale": "loglog"},
                  {"file": "tables/covariance_profile.csv", "x": "r", "y": "c_n(r)", "group": "n", "scale": "linear"}]
    elif exp == "lln":
        series = [{"file": "tables/lln_moments.csv", "x": "n", "y": y, "error": y + "_se", "scale": "loglog"}
                  for y in ("I2", "M2", "D2")]
    elif exp == "case-study":
        series = [{"file": "tables/log_partition.csv", "x": "n", "y": "normalized", "scale": "linear"},
                  {"file": "tables/density.csv", "x": "n", "y": "median_abs_log_R", "scale": "linear"}]
    elif exp == "ldp-synthetic":
        series = [{"file": "tables/gaussian_rate.csv", "x": "h", "y": "rate", "scale": "linear"},
                  {"file": "tables/cramer.csv", "x": "N", "y": "gap", "scale": "logx"}]
    elif exp == "decorrelation":
        series = [{"file": "tables/cell_second_moments.csv", "x": "cell", "y": "second_moment",
                   "group": "quantity", "scale": "linear"}]
    return {"experiment": exp, "tables": tables, "series": [s for s in series if s["file"] in tables]}


def _summary_lines(v):
    exp = v["experiment"]
    lines = [f"experiment: {exp}"]
    if exp == "covariance":
        for key, fit in v["fits"].items():
            got = "n/a (single cutoff)" if fit is None else f"{fit['exponent']:.3f}"
            lines.append(f"{key}: fitted exponent {got}, target {v['targets'][key]:.1f}")
        for p, rec in v["power_integrals"].items():
            got = "n/a" if rec["fit"] is None else f"{rec['fit']['exponent']:.3f}"
            form = f"n^{rec['target_exponent']:g}" + (f" (log n)^{rec['log_power']}" if rec["log_power"] else "")
            lines.append(f"int c_n^{p}: target {form}, fitted exponent {got}")
    elif exp == "lln":
        for k, fit in v["fits"].items():
            tgt = v["targets"].get(k)
            lines.append(f"<{k}_n^2>: exponent {fit['exponent']:.3f}" + (f", target {tgt:.1f}" if tgt is not None else ""))
    elif exp == "decorrelation":
        for c in v["correlations"]:
            lines.append(f"corr {c['quantity']}: {c['corr']:+.4f} (SE {c['std_error']:.4f})")
        lines.append("decorrelated" if v["decorrelated"] else "NOT decorrelated")
    elif exp == "ldp-synthetic":
        lines.append(f"gaussian rate max error: {v['gaussian_max_error']:.2e}")
        lines.append(f"cramer gaps: {', '.join(f'{g:+.4f}' for g in v['cramer']['gaps'])}")
        m = v["markov"]
        lines.append(f"markov: min {m['minimum']:.4f}, mean {m['mean']:.6f} (SE {m['std_error']:.1e})")
    elif exp == "case-study":
        lines.append(f"schedule {v['schedule']} (d={v['d']}), classified branch {v['branch']}")
        lines.append(f"verdict: {v['verdict']}")
        for name, t in v["trends"].items():
            lines.append(f"  {name}: {t['label']} (confidence {t['confidence']:.3f})")
        lines.append(f"tail-dominated estimates: {v['tail_dominated_count']}")
    return lines


def report(manifest) -> str:
    """Verify a run directory and write ``summary.txt`` and ``plot_spec.json``."""
    if not isinstance(manifest, RunManifest):
        manifest = RunManifest.load(manifest)
    manifest.verify()
    with open(os.path.join(manifest.output_dir, "verdict.json")) as fh:
        verdict = json.load(fh)
    text = "\n".join(_summary_lines(verdict)) + "\n"
    with open(os.path.join(manifest.output_dir, "summary.txt"), "w") as fh:
        fh.write(text)
    with open(os.path.join(manifest.output_dir, "plot_spec.json"), "w") as fh:
        json.dump(_plot_spec(verdict, list(manifest.files)), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return text


# --- entry point --------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="phi4lab", description="Cutoff phi^4 experiments and LDP checks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--samples", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--d", type=int)
        p.add_argument("--n", help="comma-separated cutoffs")
        p.add_argument("--schedule")
    rp = sub.add_parser("report")
    rp.add_argument("manifest", help="run directory or manifest.json")
    return parser


def _config_from_args(args) -> RunConfig:
    raw = {}
    if args.config:
        from .config import _split
        with open(args.config) as fh:
            raw = _split(fh.read())
    raw["experiment"] = SUBCOMMANDS[args.command]
    for key, val in (("seed", args.seed), ("output_dir", args.out), ("sample_count", args.samples),
                     ("threads", args.threads), ("d", args.d), ("n_range", args.n), ("schedule", args.schedule)):
        if val is not None:
            raw[key] = str(val)
    return validate(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            print(report(args.manifest), end="")
            return 0
        cfg = _config_from_args(args)
        manifest = run(cfg)
        print(report(manifest), end="")
        with open(os.path.join(manifest.output_dir, "verdict.json")) as fh:
            if is_inconclusive(json.load(fh)):
                raise InconclusiveTrend("trend not confirmed at the required confidence")
        return 0
    except Phi4LabError as exc:
        print(f"phi4lab: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
