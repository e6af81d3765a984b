"""Experiment engine: scenario generation, solver dispatch, sweeps and output.

Library modules work in linear units; this is the only place that converts
between dBm and watts.

Config files are flat ``key = value`` text, one entry per line, ``#`` starts
a comment.  Scenario keys: ``N L Q K S d0y dz delta fc n_eff c noise_dbm
sinr_db r_min interference align_users``.  Run keys: ``algo`` (comma list),
``trials seed workers out format``.  Solver keys carry a prefix:
``pso.<field>`` for :class:`~passopt.psozf.PsoConfig`, ``mmpdd.<field>`` for
:class:`~passopt.mmpdd.MmPddConfig`.  Sweep axes are ``sweep.<key> = v1,v2,...``;
several axes form a Cartesian product.
"""

import csv
import io
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .channel import PhysConstants, Scenario, UserLayout, WaveguideLayout
from .grouping import group_users
from .metrics import rate_to_sinr_threshold
from .mmpdd import MmPddConfig, run_mm_pdd
from .psozf import PsoConfig, fixed_uniform, run_pso_zf

log = logging.getLogger(__name__)

__all__ = [
    "ALGORITHMS",
    "CSV_HEADER",
    "ConfigError",
    "ExperimentSpec",
    "ResultRow",
    "dbm_to_watt",
    "watt_to_dbm",
    "db_to_linear",
    "parse_config",
    "load_config",
    "generate_scenario",
    "trial_seeds",
    "run_trial",
    "run_experiment",
    "emit_results",
    "read_csv",
    "aggregate",
]

ALGORITHMS = ("mmpdd", "psozf", "fixed")
CSV_HEADER = [
    "sweep_param", "sweep_value", "trial", "seed", "algo", "power_dbm",
    "power_w", "feasible", "iters", "wall_ms", "min_sinr_slack_db",
]


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(w):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(w, dtype=float) * 1000.0)


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


_SCENARIO_KEYS = {
    "N": int, "L": int, "Q": int, "K": int, "S": float, "d0y": float, "dz": float,
    "delta": float, "fc": float, "n_eff": float, "c": float, "noise_dbm": float,
    "sinr_db": float, "r_min": float, "interference": str, "align_users": bool,
}


@dataclass
class ExperimentSpec:
    """One experiment: scenario parameters, solvers, sweep axes and trials.

    ``S`` is the length of the service area, so it sets both the user range
    and ``x_max``.  ``r_min`` (bps/Hz), when given, replaces ``sinr_db``.
    ``align_users`` snaps each cluster's users onto the y-coordinate of one
    waveguide (one cluster per waveguide, matched by least total shift).
    """

    N: int = 4
    L: int = 4
    Q: int = 4
    K: int = 2
    S: float = 30.0
    d0y: float = 3.0
    dz: float = 10.0
    delta: float = 0.01
    fc: float = 15e9
    n_eff: float = 1.4
    c: float = PhysConstants.c
    noise_dbm: float = -80.0
    sinr_db: float = 20.0
    r_min: float | None = None
    interference: str = "representative"
    align_users: bool = True
    algos: tuple = ("psozf",)
    pso: dict = field(default_factory=dict)
    mmpdd: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    trials: int = 1
    seed: int = 0
    workers: int = 1
    out: str | None = None
    format: str = "csv"

    def __post_init__(self):
        self.algos = tuple(self.algos)
        self.validate()

    def validate(self):
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        for a in self.algos:
            if a not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {a!r}; choose from {', '.join(ALGORITHMS)}")
        if not self.algos:
            raise ConfigError("no algorithm selected")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.interference not in ("all", "representative"):
            raise ConfigError(f"unknown interference model {self.interference!r}")
        for key, values in self.sweep.items():
            if key not in _SCENARIO_KEYS:
                raise ConfigError(f"sweep axis {key!r} is not a scenario parameter")
            if len(values) == 0:
                raise ConfigError(f"sweep axis {key!r} has no values")
        _check_solver_keys(PsoConfig, self.pso, "pso")
        _check_solver_keys(MmPddConfig, self.mmpdd, "mmpdd")
        try:
            for point in self.points():
                self.at(point).layout()
        except (ValueError, TypeError) as e:
            raise ConfigError(str(e)) from e

    def points(self):
        """Sweep points as tuples of ``(key, value)`` pairs (one empty point without axes)."""
        keys = list(self.sweep)
        return [tuple(zip(keys, vals)) for vals in itertools.product(*(self.sweep[k] for k in keys))]

    def at(self, point) -> "ExperimentSpec":
        """The spec with a sweep point's values applied (sweep axes removed)."""
        if not point:
            return self
        kw = {k: _SCENARIO_KEYS[k](v) for k, v in point}
        base = {f.name: getattr(self, f.name) for f in fields(self)}
        base.update(kw, sweep={})
        return ExperimentSpec(**base)

    def layout(self) -> WaveguideLayout:
        if self.Q > self.N and self.align_users:
            raise ConfigError("align_users needs Q <= N")
        if self.Q > self.N:
            raise ConfigError("zero-forcing needs Q <= N clusters")
        return WaveguideLayout(N=self.N, L=self.L, d0y=self.d0y, dz=self.dz, x_max=self.S, delta=self.delta)

    def consts(self) -> PhysConstants:
        return PhysConstants(carrier_frequency=self.fc, n_eff=self.n_eff, c=self.c)

    def sinr_min(self) -> float:
        if self.r_min is not None:
            return float(rate_to_sinr_threshold(self.r_min))
        return float(db_to_linear(self.sinr_db))


def _check_solver_keys(cls, overrides, prefix):
    names = {f.name for f in fields(cls)}
    for k in overrides:
        if k not in names:
            raise ConfigError(f"unknown {prefix} option {k!r}")
    try:
        cls(**overrides)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{prefix}: {e}") from e


@dataclass
class ResultRow:
    sweep_param: str
    sweep_value: str
    trial: int
    seed: int
    algo: str
    power_dbm: float
    power_w: float
    feasible: bool
    iters: int
    wall_ms: float
    min_sinr_slack_db: float

    def as_record(self) -> dict:
        return asdict(self)


# -- config parsing ---------------------------------------------------------

def _parse_bool(v: str) -> bool:
    t = v.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _parse_scalar(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    return t


def _convert(key, raw: str):
    conv = _SCENARIO_KEYS[key]
    if conv is bool:
        return _parse_bool(raw)
    try:
        return conv(raw.strip()) if conv is not str else raw.strip()
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {raw!r}") from e


def parse_config(text: str) -> dict:
    """Parse flat ``key = value`` text into keyword arguments for :class:`ExperimentSpec`."""
    kw: dict = {"pso": {}, "mmpdd": {}, "sweep": {}}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key.startswith("sweep."):
            axis = key[len("sweep."):]
            if axis not in _SCENARIO_KEYS:
                raise ConfigError(f"line {lineno}: sweep axis {axis!r} is not a scenario parameter")
            kw["sweep"][axis] = [_convert(axis, v) for v in raw.split(",") if v.strip()]
        elif key.startswith("pso.") or key.startswith("mmpdd."):
            group, name = key.split(".", 1)
            kw[group][name] = _parse_scalar(raw)
        elif key in _SCENARIO_KEYS:
            kw[key] = _convert(key, raw)
        elif key == "algo":
            kw["algos"] = tuple(a.strip() for a in raw.split(",") if a.strip())
        elif key in ("trials", "seed", "workers"):
            try:
                kw[key] = int(raw)
            except ValueError as e:
                raise ConfigError(f"line {lineno}: {key} must be an integer") from e
        elif key in ("out", "format"):
            kw[key] = raw
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return kw


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text)


# -- scenarios and trials ---------------------------------------------------

def trial_seeds(master: int, point: int, trial: int):
    """``(scenario_seed, solver_seed)`` for one trial.

    The scenario seed depends on ``(master, trial)`` only, so every sweep
    point of a trial sees the same user draw; the solver seed also mixes in
    the point index.
    """
    scen = int(np.random.SeedSequence([master, trial]).generate_state(1)[0])
    solv = int(np.random.SeedSequence([master, point, trial]).generate_state(1)[0])
    return scen, solv


def generate_scenario(spec: ExperimentSpec, seed: int) -> Scenario:
    """Users uniform over ``[0, S] x [0, (N-1) d0y]``, grouped into ``Q`` clusters of ``K``.

    Draws come from the unit square and are then scaled, so scenarios that
    differ only in ``S`` share the same relative user layout.
    """
    try:
        lay = spec.layout()
        consts = spec.consts()
    except ValueError as e:
        raise ConfigError(str(e)) from e
    n = spec.Q * spec.K
    rng = np.random.default_rng(seed)
    unit = rng.random((n, 2))
    P = np.column_stack([unit[:, 0] * spec.S, unit[:, 1] * lay.y_span, np.zeros(n)])
    cl = group_users(P, spec.Q, consts, lay, seed=seed, balance=spec.K)
    pos = np.stack([P[cl.assignment == q] for q in range(spec.Q)])
    if spec.align_users:
        ym = pos[:, :, 1].mean(axis=1)
        rows, cols = linear_sum_assignment(np.abs(ym[:, None] - lay.y[None, :]))
        pos[rows, :, 1] = lay.y[cols][:, None]
    return Scenario(consts, lay, UserLayout(pos), spec.sinr_min(), float(dbm_to_watt(spec.noise_dbm)),
                    meta={"seed": seed, "clustering": cl})


def _solve(spec: ExperimentSpec, algo: str, scenario: Scenario, seed: int):
    if algo == "fixed":
        return fixed_uniform(scenario, interference=spec.interference)
    if algo == "psozf":
        cfg = PsoConfig(**{"interference": spec.interference, **spec.pso, "seed": seed})
        return run_pso_zf(scenario, config=cfg)
    cfg = MmPddConfig(**{"interference": spec.interference, **spec.mmpdd, "seed": seed})
    return run_mm_pdd(scenario, config=cfg)


def _fmt_value(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def run_trial(spec: ExperimentSpec, point_index: int, trial: int) -> list:
    """Rows (one per algorithm) for one trial of one sweep point."""
    points = spec.points()
    point = points[point_index]
    sub = spec.at(point)
    scen_seed, solv_seed = trial_seeds(spec.seed, point_index, trial)
    param = ";".join(k for k, _ in point)
    value = ";".join(_fmt_value(v) for _, v in point)
    scenario = generate_scenario(sub, scen_seed)
    rows = []
    for algo in sub.algos:
        t0 = time.monotonic()
        try:
            res = _solve(sub, algo, scenario, solv_seed)
            power = float(res.power) if res.feasible else math.inf
            feas, iters = bool(res.feasible), int(res.iterations)
            slack = float(res.report.min_sinr_slack_db) if res.report is not None else math.nan
        except Exception as e:  # recorded in the row, the sweep continues
            log.error("point %s trial %d algo %s failed: %s", value or "-", trial, algo, e)
            power, feas, iters, slack = math.nan, False, 0, math.nan
        wall = (time.monotonic() - t0) * 1000.0
        rows.append(ResultRow(param, value, trial, scen_seed, algo, float(watt_to_dbm(power)),
                              power, feas, iters, wall, slack))
        log.info("%s=%s trial %d %s: %.4f dBm feasible=%s", param or "-", value or "-", trial, algo,
                 rows[-1].power_dbm, feas)
    return rows


def _run_job(args):
    spec, p, t = args
    return run_trial(spec, p, t)


def run_experiment(spec: ExperimentSpec, on_rows=None) -> list:
    """Run every sweep point and trial; rows come back in (point, trial, algo) order.

    ``on_rows`` is called with each trial's rows as soon as they are
    available (in order), which lets callers stream output.
    """
    jobs = [(spec, p, t) for p in range(len(spec.points())) for t in range(spec.trials)]
    rows = []
    if spec.workers == 1 or len(jobs) == 1:
        results = map(_run_job, jobs)
        for r in results:
            rows.extend(r)
            if on_rows is not None:
                on_rows(r)
        return rows
    with ProcessPoolExecutor(max_workers=spec.workers) as ex:
        for r in ex.map(_run_job, jobs):
            rows.extend(r)
            if on_rows is not None:
                on_rows(r)
    return rows


# -- output -----------------------------------------------------------------

def _csv_cell(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_results(rows, format: str = "csv", path=None) -> str:
    """Serialize rows as CSV (fixed header) or JSON; write to ``path`` when given."""
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            rec = r.as_record()
            w.writerow([_csv_cell(rec[k]) for k in CSV_HEADER])
        text = buf.getvalue()
    elif format == "json":
        recs = []
        for r in rows:
            rec = r.as_record()
            recs.append({k: (v if not (isinstance(v, float) and not math.isfinite(v)) else str(v))
                         for k, v in rec.items()})
        text = json.dumps(recs, indent=1) + "\n"
    else:
        raise ConfigError(f"unknown format {format!r}")
    if path is not None:
        try:
            Path(path).write_text(text)
        except OSError as e:
            raise OSError(f"cannot write results to {path}: {e}") from e
    return text


def read_csv(text: str) -> list:
    """Parse emitted CSV back into :class:`ResultRow` objects."""
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        out.append(ResultRow(
            rec["sweep_param"], rec["sweep_value"], int(rec["trial"]), int(rec["seed"]), rec["algo"],
            float(rec["power_dbm"]), float(rec["power_w"]), rec["feasible"] == "1", int(rec["iters"]),
            float(rec["wall_ms"]), float(rec["min_sinr_slack_db"]),
        ))
    return out


def aggregate(rows, key=("sweep_param", "sweep_value", "algo")) -> dict:
    """Mean linear power (W) per group, reported with its dBm value and count."""
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(getattr(r, k) for k in key), []).append(r.power_w)
    out = {}
    for k, v in groups.items():
        m = float(np.mean(v))
        out[k] = {"mean_w": m, "mean_dbm": float(watt_to_dbm(m)), "n": len(v)}
    return out
