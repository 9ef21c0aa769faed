import json

import numpy as np
import pytest

from manifold_mls.errors import ParseError
from manifold_mls.harness import (ExperimentSpec, contraction_ratios, fit_loglog_slope, read_records_csv,
                                  run_contraction_experiment, run_convergence_experiment, spec_from_config,
                                  tilted_frame)
from manifold_mls.geometry import max_angle
from manifold_mls.local_poly import MultiPolynomial
from manifold_mls.synthetic import ManifoldSpec

SMALL = dict(sample_sizes=(512, 1024, 2048), trials_per_n=3, queries_per_trial=3, seed=5)


def test_slope_of_exact_power_law():
    ns = 2.0 ** np.arange(10, 17)
    slope, icpt = fit_loglog_slope(ns, 3.0 * ns ** -0.4)
    assert slope == pytest.approx(-0.4, abs=1e-12)
    assert icpt == pytest.approx(np.log(3.0), abs=1e-10)


def test_injected_error_feed(circle10):
    spec = ExperimentSpec(circle10, 0.5, sample_sizes=tuple(2 ** e for e in range(10, 17)), trials_per_n=2,
                          queries_per_trial=2)
    feed = lambda n, trial, q: {"point_error": n ** -0.4, "tangent_angle": 2 * n ** -0.2}
    rep = run_convergence_experiment(spec, error_fn=feed)
    assert rep.slopes["point_error"]["slope"] == pytest.approx(-0.4, abs=1e-12)
    assert rep.slopes["tangent_angle"]["slope"] == pytest.approx(-0.2, abs=1e-12)
    assert rep.theoretical == {"r0": 0.4, "r1": 0.2}
    assert rep.slopes["point_error"]["theoretical_slope"] == -0.4


def test_failures_are_counted_not_fatal(circle10):
    spec = ExperimentSpec(circle10, 0.5, **SMALL)
    feed = lambda n, trial, q: {"point_error": float("nan") if q == 0 else 1.0 / n, "cause": "empty_roi"}
    rep = run_convergence_experiment(spec, error_fn=feed)
    assert rep.failures == {512: 3, 1024: 3, 2048: 3}
    assert rep.per_n[0]["point_error"]["median"] == pytest.approx(1 / 512)


def test_theoretical_exponents_depend_on_k_and_d():
    spec = ExperimentSpec(ManifoldSpec.sphere(2, 5.0), 0.2, k=3, **SMALL)
    assert spec.theoretical() == {"r0": pytest.approx(3 / 8), "r1": pytest.approx(2 / 8)}


def test_report_medians_match_raw_csv(circle10):
    spec = ExperimentSpec(circle10, 0.5, metrics=("point_error", "tangent_angle", "step1_angle"), **SMALL)
    rep = run_convergence_experiment(spec)
    rows = read_records_csv(rep.to_csv())
    assert len(rows) == 3 * 3 * 3
    for entry in rep.per_n:
        for m in spec.metrics:
            vals = [r[m] for r in rows if r["n"] == entry["n"] and np.isfinite(r[m])]
            assert entry[m]["median"] == float(np.median(vals))
    data = json.loads(rep.to_json())
    assert list(data) == ["sample_sizes", "metrics", "theoretical", "slopes", "per_n", "failures"]
    assert np.isfinite(data["slopes"]["point_error"]["slope"])


def test_runs_are_deterministic_and_pool_independent(circle10, monkeypatch):
    spec = ExperimentSpec(circle10, 0.5, **SMALL)
    a = run_convergence_experiment(spec)
    b = run_convergence_experiment(spec, workers=1)
    monkeypatch.setenv("MANIFOLD_REFINE_THREADS", "2")
    c = run_convergence_experiment(spec)
    assert a.to_json() == b.to_json() == c.to_json()
    assert a.to_csv() == c.to_csv()


def test_spec_validation(circle10):
    with pytest.raises(ValueError):
        ExperimentSpec(circle10, 0.5, sample_sizes=(1024, 512))
    with pytest.raises(ValueError):
        ExperimentSpec(circle10, 0.5, trials_per_n=0)
    with pytest.raises(ValueError):
        ExperimentSpec(circle10, 20.0)
    with pytest.raises(ValueError):
        ExperimentSpec(circle10, 0.5, metrics=("speed",))


def test_contraction_ratio_masking():
    assert contraction_ratios([0.4, 0.1, 0.01, 0.011, 0.01]) == {0: pytest.approx(0.25)}
    assert contraction_ratios([0.4, 1e-17, 2e-17]) == {}
    assert contraction_ratios([0.4]) == {}


def test_contraction_floor_covers_a_cycle():
    orbit = [0.4, 0.2, 0.05, 0.06, 0.02, 0.06, 0.02]
    assert contraction_ratios(orbit)[2] == pytest.approx(1.2)
    assert contraction_ratios(orbit, tail=3) == {0: pytest.approx(0.5)}
    # the initial angle never sets the floor
    assert contraction_ratios([0.4, 0.1], tail=3) == {}


def test_tilted_frame(circle10):
    f = tilted_frame(circle10, np.array([10.0, 0.0]), 0.4)
    assert max_angle(f.subspace, circle10.tangent_at(np.array([10.0, 0.0]))) == pytest.approx(0.4, abs=1e-12)


def test_contraction_on_noiseless_plane_is_fully_masked():
    flat = MultiPolynomial(2, 1, 1, np.zeros((1, 3)))
    spec = ExperimentSpec(ManifoldSpec.poly_graph(flat, 100.0, half_width=6.0), 0.1,
                          sample_sizes=(2000, 4000), trials_per_n=2, queries_per_trial=3,
                          metrics=("contraction_ratio",))

    def on_plane(n, seed):
        x = np.random.default_rng(seed).uniform(-4, 4, (n, 2))
        return np.column_stack([x, np.zeros(n)])

    rep = run_contraction_experiment(spec, sampler=on_plane)
    assert all(row["ratios"] == {} for row in rep.per_n)
    assert all(r["angles"][0] == pytest.approx(0.4) for r in rep.records)


def test_contraction_small_circle_run(circle10):
    spec = ExperimentSpec(circle10, 0.5, sample_sizes=(4096, 65536), trials_per_n=6, queries_per_trial=5,
                          metrics=("contraction_ratio",), seed=2)
    rep = run_contraction_experiment(spec)
    assert rep.per_n[0]["ratios"]["0"]["median"] <= 0.75
    assert rep.max_median_ratio() <= 0.75
    json.loads(rep.to_json())


def test_contraction_needs_the_metric(circle10):
    with pytest.raises(ValueError):
        run_contraction_experiment(ExperimentSpec(circle10, 0.5, **SMALL))


def test_spec_from_config():
    spec = spec_from_config({"manifold": "circle", "radius": "10", "sigma": "0.5", "n_min_exp": "10",
                             "n_max_exp": "12", "trials": "4", "queries": "2", "seed": "9",
                             "metrics": "point_error, tangent_angle"})
    assert spec.sample_sizes == (1024, 2048, 4096)
    assert spec.trials_per_n == 4 and spec.seed == 9 and spec.tau == 10.0
    torus = spec_from_config({"manifold": "torus", "major": "2", "minor": "0.5", "sigma": "0.05",
                              "sample_sizes": "100,200"})
    assert torus.d == 2 and torus.sample_sizes == (100, 200)
    with pytest.raises(ParseError):
        spec_from_config({"manifold": "circle", "sigma": "0.5", "colour": "red"})
    with pytest.raises(ParseError):
        spec_from_config({"manifold": "circle"})
    with pytest.raises(ParseError):
        spec_from_config({"manifold": "circle", "sigma": "abc"})
    with pytest.raises(ParseError):
        spec_from_config({"manifold": "circle", "radius": "1", "sigma": "2"})
