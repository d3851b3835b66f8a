"""Flat ``key = value`` run configurations.

Schema (one key per line, ``#`` starts a comment)::

    experiment    covariance | lln | decorrelation | ldp-synthetic | case-study
    d             dimension, 2..5 (not used by ldp-synthetic)
    n_range       comma-separated increasing cutoffs, e.g. 4,6,8
    schedule      preset name (case-study), or "inline" with the keys below
    schedule_g    inline coupling expression in n and c
    schedule_m    inline mass expression
    schedule_a    inline field-strength expression
    schedule_case optional pinned case label (A1, A2, A3, B)
    sample_count  Monte Carlo samples per cutoff
    seed          unsigned 64-bit seed; all randomness derives from it
    output_dir    results directory
    threads       sample-generation workers (default 1)
    memory_budget bytes per field transform (default 4 GiB)
    cell_budget   cells per sample (default 10**6)
    table_budget  convolution table entries (default 10**7)

``parse_config(cfg.to_text()) == cfg`` holds for every valid config.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import InputError
from .schedules import PRESETS, RenormSchedule

EXPERIMENTS = ("covariance", "lln", "decorrelation", "ldp-synthetic", "case-study")
_INT_KEYS = ("d", "sample_count", "seed", "threads", "memory_budget", "cell_budget", "table_budget")


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    seed: int
    output_dir: str
    d: int | None = None
    n_range: tuple = ()
    schedule: str | None = None
    schedule_g: str | None = None
    schedule_m: str | None = None
    schedule_a: str | None = None
    schedule_case: str | None = None
    sample_count: int | None = None
    threads: int = 1
    memory_budget: int = 4 * 2**30
    cell_budget: int = 10**6
    table_budget: int = 10**7

    def schedule_obj(self) -> RenormSchedule | None:
        if self.schedule is None:
            return None
        if self.schedule == "inline":
            return RenormSchedule("inline", self.d, g=self.schedule_g or "0", m=self.schedule_m or "0",
                                  a=self.schedule_a or "0", case=self.schedule_case)
        return PRESETS[self.schedule]

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None or (f.name == "n_range" and not v):
                continue
            if f.name == "n_range":
                v = ",".join(str(n) for n in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def identity_text(self) -> str:
        """Serialization of the keys that determine results (not where or how fast)."""
        return "".join(line + "\n" for line in self.to_text().splitlines()
                       if line.split(" = ")[0] not in ("output_dir", "threads"))

    def replace(self, **changes) -> "RunConfig":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update({k: v for k, v in changes.items() if v is not None})
        return validate(data)


def _split(text: str) -> dict:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in raw:
            raise InputError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def validate(raw: dict) -> RunConfig:
    """Build a :class:`RunConfig`, collecting every field-level problem into one error."""
    known = {f.name for f in fields(RunConfig)}
    problems = [f"{k}: unknown key" for k in raw if k not in known]
    data = {}
    for key, value in raw.items():
        if key not in known or value is None:
            continue
        try:
            if key in _INT_KEYS:
                data[key] = int(value)
            elif key == "n_range":
                items = value.split(",") if isinstance(value, str) else value
                data[key] = tuple(int(str(x).strip()) for x in items if str(x).strip())
            else:
                data[key] = str(value)
        except ValueError:
            problems.append(f"{key}: cannot parse {value!r}")
    exp = data.get("experiment")
    for key in ("experiment", "seed", "output_dir"):
        if key not in data:
            problems.append(f"{key}: missing")
    if exp is not None and exp not in EXPERIMENTS:
        problems.append(f"experiment: must be one of {', '.join(EXPERIMENTS)}")
    if exp not in (None, "ldp-synthetic"):
        if "d" not in data:
            problems.append("d: missing")
        elif not 2 <= data["d"] <= 5:
            problems.append("d: must be in 2..5")
        if not data.get("n_range"):
            problems.append("n_range: missing or empty")
    nr = data.get("n_range", ())
    if nr and (any(b <= a for a, b in zip(nr, nr[1:])) or nr[0] < 1):
        problems.append("n_range: must be positive and strictly increasing")
    if exp in ("lln", "decorrelation", "case-study") and "sample_count" not in data:
        problems.append("sample_count: missing")
    if "sample_count" in data and data["sample_count"] < 1:
        problems.append("sample_count: must be positive")
    if "seed" in data and not 0 <= data["seed"] < 2**64:
        problems.append("seed: must be an unsigned 64-bit integer")
    if data.get("threads", 1) < 1:
        problems.append("threads: must be at least 1")
    sched = data.get("schedule")
    if exp == "case-study" and sched is None:
        problems.append("schedule: missing")
    if sched is not None and sched != "inline" and sched not in PRESETS:
        problems.append(f"schedule: unknown preset {sched!r}")
    if sched == "inline" and not any(data.get(k) for k in ("schedule_g", "schedule_m", "schedule_a")):
        problems.append("schedule: inline schedule needs schedule_g, schedule_m or schedule_a")
    if problems:
        raise InputError("invalid run configuration:\n  " + "\n  ".join(problems))
    cfg = RunConfig(**data)
    if sched == "inline":
        try:
            cfg.schedule_obj()
        except InputError as exc:
            raise InputError(f"invalid run configuration:\n  schedule: {exc}") from None
    return cfg


def parse_config(text: str) -> RunConfig:
    return validate(_split(text))


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
