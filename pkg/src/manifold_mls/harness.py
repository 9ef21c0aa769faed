"""Monte-Carlo experiments: error rates in n and per-iteration angle contraction.

Every trial draws one sample of the largest requested size and evaluates each
n on its first n points, so the sample sizes of one trial are nested and share
the same query points. Trials get seeds derived from the experiment seed and
their index, and results are always gathered in trial order.
"""
from __future__ import annotations

import csv
import io as _io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EstimatorError, OutsideReach, ParseError
from .geometry import Frame, Subspace, max_angle, orthonormalize
from .point_index import PointCloud
from .step1 import Step1Config, find_initial_frame
from .step2 import Step2Config, refine
from .synthetic import ManifoldSpec, sample_tubular

METRICS = ("point_error", "tangent_angle", "step1_angle", "contraction_ratio")
ERROR_METRICS = ("point_error", "tangent_angle", "step1_angle")
QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)
THREADS_ENV = "MANIFOLD_REFINE_THREADS"


@dataclass(frozen=True)
class ExperimentSpec:
    manifold: ManifoldSpec
    sigma: float
    k: int = 2
    sample_sizes: tuple = tuple(2 ** e for e in range(10, 17))
    trials_per_n: int = 30
    queries_per_trial: int = 10
    seed: int = 0
    bandwidth_scale: float = 4.0
    bandwidth_mode: str = "rate_consistent"
    mom_blocks: int | None = None
    max_iters: int = 50
    metrics: tuple = ("point_error", "tangent_angle")
    tilt: float = 0.4  # initial tangent error for the contraction runs
    floor_factor: float = 2.0

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sample_sizes)
        object.__setattr__(self, "sample_sizes", sizes)
        object.__setattr__(self, "metrics", tuple(self.metrics))
        if not sizes or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("sample_sizes must be non-empty and strictly increasing")
        if sizes[0] < 1:
            raise ValueError("sample sizes must be positive")
        if self.trials_per_n < 1 or self.queries_per_trial < 1:
            raise ValueError("need at least one trial and one query per trial")
        if not 0 < self.sigma < self.manifold.reach:
            raise ValueError(f"need 0 < sigma < tau (sigma={self.sigma}, tau={self.manifold.reach})")
        bad = [m for m in self.metrics if m not in METRICS]
        if bad or not self.metrics:
            raise ValueError(f"unknown metrics {bad}; choose from {METRICS}")

    @property
    def tau(self) -> float:
        return self.manifold.reach

    @property
    def d(self) -> int:
        return self.manifold.intrinsic_dim

    def step1_config(self) -> Step1Config:
        return Step1Config(self.sigma, self.tau, self.d)

    def step2_config(self) -> Step2Config:
        return Step2Config(self.sigma, self.tau, self.k, self.bandwidth_scale, self.bandwidth_mode,
                           max_iters=self.max_iters, mom_blocks=self.mom_blocks)

    def theoretical(self) -> dict:
        denom = 2 * self.k + self.d
        return {"r0": self.k / denom, "r1": (self.k - 1) / denom}


def trial_seeds(seed: int, trial: int) -> tuple[int, int]:
    """(sample seed, query seed) for one trial."""
    s = np.random.SeedSequence([int(seed), int(trial)]).generate_state(2)
    return int(s[0]), int(s[1])


def fit_loglog_slope(ns, values) -> tuple[float, float]:
    """Least-squares line through (ln n, ln value); returns (slope, intercept)."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    ok = np.isfinite(x) & np.isfinite(y)
    if ok.sum() < 2:
        return float("nan"), float("nan")
    x, y = x[ok], y[ok]
    xm, ym = x.mean(), y.mean()
    slope = float(np.sum((x - xm) * (y - ym)) / np.sum((x - xm) ** 2))
    return slope, float(ym - slope * xm)


# -- convergence rates -----------------------------------------------------------

_RECORD_FIELDS = ("n", "trial", "query", "point_error", "tangent_angle", "step1_angle", "iterations", "cause")


def _draw(spec: ExperimentSpec, trial: int, sampler):
    s_seed, q_seed = trial_seeds(spec.seed, trial)
    n_max = spec.sample_sizes[-1]
    if sampler is None:
        pts = sample_tubular(spec.manifold, n_max, spec.sigma, s_seed).points
    else:
        pts = np.asarray(sampler(n_max, s_seed), dtype=float)
    queries = spec.manifold.sample_on_manifold(spec.queries_per_trial, np.random.default_rng(q_seed))
    return pts, queries


def _measure(spec, cloud, q, cfg1, cfg2) -> dict:
    rec = dict.fromkeys(ERROR_METRICS, float("nan"))
    try:
        s1 = find_initial_frame(cloud, q, cfg1)
    except EstimatorError as exc:
        return {**rec, "iterations": 0, "cause": exc.cause}
    foot_q, T_q = spec.manifold.project(q)
    rec["step1_angle"] = max_angle(s1.frame.subspace, T_q)
    res = refine(cloud, s1.frame, cfg2, query=q)
    rec["iterations"] = res.iterations
    rec["cause"] = res.cause or ""
    if res.failed:
        return rec
    try:
        foot, T = spec.manifold.project(res.p_hat)
    except OutsideReach:
        rec["cause"] = "outside_reach"
        return rec
    rec["point_error"] = float(np.linalg.norm(res.p_hat - foot))
    rec["tangent_angle"] = max_angle(res.tangent_hat, T)
    return rec


def _convergence_trial(spec: ExperimentSpec, trial: int, sampler=None, error_fn=None) -> list[dict]:
    out = []
    if error_fn is None:
        pts, queries = _draw(spec, trial, sampler)
        cfg1, cfg2 = spec.step1_config(), spec.step2_config()
    for n in spec.sample_sizes:
        if error_fn is None:
            cloud = PointCloud(pts[:n])
        for j in range(spec.queries_per_trial):
            if error_fn is not None:
                rec = {**dict.fromkeys(ERROR_METRICS, float("nan")), "iterations": 0, "cause": ""}
                rec.update(error_fn(n, trial, j))
            else:
                rec = _measure(spec, cloud, queries[j], cfg1, cfg2)
            out.append({"n": n, "trial": trial, "query": j, **rec})
    return out


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _map_trials(fn, spec, extra, workers):
    trials = range(spec.trials_per_n)
    if workers <= 1:
        return [fn(spec, t, *extra) for t in trials]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(fn, spec, t, *extra) for t in trials]
        return [f.result() for f in futs]


def _quantiles(vals) -> dict:
    v = np.asarray(vals, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return {f"q{int(q * 100):02d}": None for q in QUANTILES} | {"median": None}
    out = {f"q{int(q * 100):02d}": float(np.quantile(v, q)) for q in QUANTILES}
    out["median"] = float(np.median(v))
    return out


@dataclass(frozen=True, eq=False)
class RateReport:
    sample_sizes: tuple
    metrics: tuple
    per_n: list
    slopes: dict
    theoretical: dict
    failures: dict
    records: list = field(repr=False, default_factory=list)

    def median(self, metric: str) -> np.ndarray:
        return np.array([row[metric]["median"] if row[metric]["median"] is not None else np.nan
                         for row in self.per_n])

    def to_dict(self) -> dict:
        return {
            "sample_sizes": list(self.sample_sizes),
            "metrics": list(self.metrics),
            "theoretical": self.theoretical,
            "slopes": self.slopes,
            "per_n": self.per_n,
            "failures": {str(n): c for n, c in self.failures.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(_RECORD_FIELDS)
        for r in self.records:
            w.writerow([r["n"], r["trial"], r["query"], *(repr(float(r[m])) for m in ERROR_METRICS),
                        r["iterations"], r["cause"]])
        return buf.getvalue()


def read_records_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(_io.StringIO(text)))
    out = []
    for r in rows:
        rec = {"n": int(r["n"]), "trial": int(r["trial"]), "query": int(r["query"]),
               "iterations": int(r["iterations"]), "cause": r["cause"]}
        rec.update({m: float(r[m]) for m in ERROR_METRICS})
        out.append(rec)
    return out


def summarize(spec: ExperimentSpec, records: list[dict]) -> RateReport:
    metrics = tuple(m for m in spec.metrics if m in ERROR_METRICS)
    per_n, failures = [], {}
    for n in spec.sample_sizes:
        rows = [r for r in records if r["n"] == n]
        fails = sum(1 for r in rows if not math.isfinite(r["point_error"]))
        failures[n] = fails
        entry = {"n": n, "count": len(rows), "failures": fails}
        for m in metrics:
            entry[m] = _quantiles([r[m] for r in rows])
        per_n.append(entry)
    slopes = {}
    theo = spec.theoretical()
    for m in metrics:
        med = [row[m]["median"] if row[m]["median"] is not None else np.nan for row in per_n]
        slope, icpt = fit_loglog_slope(spec.sample_sizes, med)
        slopes[m] = {"slope": slope if math.isfinite(slope) else None,
                     "intercept": icpt if math.isfinite(icpt) else None}
    slopes_theo = {"point_error": -theo["r0"], "tangent_angle": -theo["r1"]}
    for m, s in slopes_theo.items():
        if m in slopes:
            slopes[m]["theoretical_slope"] = s
    return RateReport(spec.sample_sizes, metrics, per_n, slopes, theo, failures, records)


def run_convergence_experiment(spec: ExperimentSpec, error_fn=None, sampler=None,
                               workers: int | None = None) -> RateReport:
    """Error quantiles per sample size and log-log slopes of their medians.

    ``error_fn(n, trial, query)`` replaces the estimator with a feed of metric
    values (a dict), which is how the slope fitting is tested on exact data.
    ``sampler(n, seed)`` replaces the tubular sampler.
    """
    if workers is None:
        workers = _workers()
    if error_fn is not None or sampler is not None:
        workers = 1  # hooks are usually closures that cannot be pickled
    batches = _map_trials(_convergence_trial, spec, (sampler, error_fn), workers)
    records = [r for batch in batches for r in batch]
    records.sort(key=lambda r: (r["n"], r["trial"], r["query"]))
    return summarize(spec, records)


# -- angle contraction -------------------------------------------------------------

def tilted_frame(spec: ManifoldSpec, point, alpha: float) -> Frame:
    """Frame at ``point`` whose first tangent direction is rotated by alpha towards a normal."""
    foot, T = spec.project(point)
    nvec = spec.normal_vector(foot)
    B = T.basis.copy()
    B[:, 0] = math.cos(alpha) * B[:, 0] + math.sin(alpha) * nvec
    return Frame(np.asarray(point, dtype=float), orthonormalize(B))


def _contraction_trial(spec: ExperimentSpec, trial: int, sampler=None) -> list[dict]:
    pts, _ = _draw(spec, trial, sampler)
    _, q_seed = trial_seeds(spec.seed, trial)
    rng = np.random.default_rng(q_seed + 1)
    cfg2 = spec.step2_config()
    out = []
    for n in spec.sample_sizes:
        cloud = PointCloud(pts[:n])
        # start points are taken from the cloud itself so that they sit in the tube
        starts = cloud.points[rng.choice(n, size=min(spec.queries_per_trial, n), replace=False)]
        for j, r in enumerate(starts):
            init = tilted_frame(spec.manifold, r, spec.tilt)
            res = refine(cloud, init, cfg2, query=r)
            angles = [max_angle(init.subspace, spec.manifold.project(init.origin)[1])]
            for t in res.trace[1:]:
                angles.append(max_angle(Subspace(t.basis), spec.manifold.project(t.origin)[1]))
            out.append({"n": n, "trial": trial, "query": j, "angles": angles, "cause": res.cause or ""})
    return out


# a run that stops without converging is somewhere on an orbit of period <= 3;
# its floor comes from the whole orbit rather than from wherever it stopped
CYCLE_TAIL = 3


def contraction_ratios(angles, floor_factor: float = 2.0, zero: float = 1e-12, tail: int = 1):
    """Ratios alpha_{l+1}/alpha_l where both angles exceed the run's noise floor.

    The floor is ``floor_factor`` times the largest of the last ``tail``
    angles (never counting the initial one); angles at numerical zero never
    count. Returns ``{l: ratio}``.
    """
    a = np.asarray(angles, dtype=float)
    if a.size < 2:
        return {}
    floor = max(floor_factor * float(np.max(a[max(1, a.size - tail):])), zero)
    return {l: float(a[l + 1] / a[l]) for l in range(a.size - 1) if a[l] > floor and a[l + 1] > floor}


@dataclass(frozen=True, eq=False)
class ContractionReport:
    per_n: list
    records: list = field(repr=False, default_factory=list)

    def max_median_ratio(self) -> float:
        vals = [v["median"] for row in self.per_n for v in row["ratios"].values()]
        return max(vals) if vals else float("nan")

    def to_dict(self) -> dict:
        return {"per_n": self.per_n}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def run_contraction_experiment(spec: ExperimentSpec, sampler=None, workers: int | None = None) -> ContractionReport:
    """Per-iteration angle ratios of refinements started from a tilted tangent.

    Angle l is measured between H_l and the true tangent at the projection of
    q_l; angle 0 is the tilt itself.
    """
    if "contraction_ratio" not in spec.metrics:
        raise ValueError("the experiment does not request contraction_ratio")
    if workers is None:
        workers = _workers()
    if sampler is not None:
        workers = 1
    batches = _map_trials(_contraction_trial, spec, (sampler,), workers)
    records = sorted((r for b in batches for r in b), key=lambda r: (r["n"], r["trial"], r["query"]))
    per_n = []
    for n in spec.sample_sizes:
        rows = [r for r in records if r["n"] == n]
        pooled: dict[int, list] = {}
        for r in rows:
            tail = CYCLE_TAIL if r["cause"] else 1
            for l, v in contraction_ratios(r["angles"], spec.floor_factor, tail=tail).items():
                pooled.setdefault(l, []).append(v)
        per_n.append({
            "n": n,
            "terminal_angle_median": float(np.median([r["angles"][-1] for r in rows])),
            "ratios": {str(l): {"median": float(np.median(v)), "count": len(v)} for l, v in sorted(pooled.items())},
        })
    return ContractionReport(per_n, records)


# -- configuration -------------------------------------------------------------------

_INT_KEYS = ("k", "trials", "queries", "seed", "dim", "ambient_dim", "manifold_seed", "max_iters", "mom_blocks")
_FLOAT_KEYS = ("sigma", "radius", "major", "minor", "bandwidth_scale", "tilt", "floor_factor")
_KNOWN = set(_INT_KEYS) | set(_FLOAT_KEYS) | {"manifold", "sample_sizes", "n_min_exp", "n_max_exp",
                                            "metrics", "bandwidth_mode"}


def manifold_from_options(kind: str, radius=None, major=None, minor=None, dim=None, ambient_dim=None,
                          seed: int = 0) -> ManifoldSpec:
    if kind == "circle":
        return ManifoldSpec.circle(radius if radius is not None else 1.0, ambient_dim or 2, seed)
    if kind == "sphere":
        return ManifoldSpec.sphere(dim or 2, radius if radius is not None else 1.0, ambient_dim, seed)
    if kind == "torus":
        return ManifoldSpec.torus(major if major is not None else 2.0, minor if minor is not None else 0.5,
                                  ambient_dim or 3, seed)
    raise ValueError(f"unknown manifold {kind!r}; choose circle, sphere or torus")


def spec_from_config(cfg: dict) -> ExperimentSpec:
    """Build an ExperimentSpec from ``read_config`` output.

    Sample sizes come either from ``sample_sizes = 1024,2048`` or from
    ``n_min_exp``/``n_max_exp`` (powers of two).
    """
    unknown = sorted(set(cfg) - _KNOWN)
    if unknown:
        raise ParseError(0, f"unknown config keys: {', '.join(unknown)}")
    if "manifold" not in cfg or "sigma" not in cfg:
        raise ParseError(0, "config needs at least 'manifold' and 'sigma'")
    vals: dict = {}
    try:
        for key in _INT_KEYS:
            if key in cfg:
                vals[key] = int(cfg[key])
        for key in _FLOAT_KEYS:
            if key in cfg:
                vals[key] = float(cfg[key])
        if "sample_sizes" in cfg:
            sizes = tuple(int(s) for s in cfg["sample_sizes"].split(","))
        else:
            lo, hi = int(cfg.get("n_min_exp", 10)), int(cfg.get("n_max_exp", 16))
            sizes = tuple(2 ** e for e in range(lo, hi + 1))
        man = manifold_from_options(cfg["manifold"], vals.get("radius"), vals.get("major"), vals.get("minor"),
                                    vals.get("dim"), vals.get("ambient_dim"), vals.get("manifold_seed", 0))
        kw = {"manifold": man, "sigma": vals["sigma"], "sample_sizes": sizes}
        for src, dst in (("k", "k"), ("trials", "trials_per_n"), ("queries", "queries_per_trial"),
                         ("seed", "seed"), ("max_iters", "max_iters"), ("mom_blocks", "mom_blocks"),
                         ("bandwidth_scale", "bandwidth_scale"), ("tilt", "tilt"), ("floor_factor", "floor_factor")):
            if src in vals:
                kw[dst] = vals[src]
        if "bandwidth_mode" in cfg:
            kw["bandwidth_mode"] = cfg["bandwidth_mode"]
        if "metrics" in cfg:
            kw["metrics"] = tuple(m.strip() for m in cfg["metrics"].split(",") if m.strip())
        return ExperimentSpec(**kw)
    except ValueError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(0, str(exc)) from None


def with_sizes(spec: ExperimentSpec, sizes) -> ExperimentSpec:
    return replace(spec, sample_sizes=tuple(sizes))
