import numpy as np
import pytest
from scipy import stats

from manifold_mls import synthetic
from manifold_mls.errors import BoundingBoxFailure, OutsideReach, SigmaExceedsReach
from manifold_mls.geometry import max_angle
from manifold_mls.local_poly import MultiPolynomial
from manifold_mls.synthetic import ManifoldSpec, analytic_project, reach_check, sample_tubular

from oracles import torus_grid_foot


def test_reach_per_kind():
    assert ManifoldSpec.circle(10).reach == 10
    assert ManifoldSpec.sphere(2, 3.0).reach == 3.0
    assert ManifoldSpec.torus(2, 0.5).reach == 0.5
    assert ManifoldSpec.torus(2, 1.5).reach == 0.5


def test_circle_projection():
    foot, T = analytic_project(ManifoldSpec.circle(10), [20.0, 0.0])
    assert foot == pytest.approx([10.0, 0.0])
    assert max_angle(T, np.array([[0.0], [1.0]])) == pytest.approx(0.0, abs=1e-12)


def test_sphere_projection():
    foot, T = analytic_project(ManifoldSpec.sphere(2, 1.0), [0.0, 0.0, 0.5])
    assert foot == pytest.approx([0.0, 0.0, 1.0])
    assert max_angle(T, np.eye(3)[:, :2]) == pytest.approx(0.0, abs=1e-12)


def test_projection_undefined_at_centre():
    with pytest.raises(OutsideReach):
        analytic_project(ManifoldSpec.circle(10), [0.0, 0.0])
    with pytest.raises(OutsideReach):
        analytic_project(ManifoldSpec.torus(2, 0.5), [0.0, 0.0, 0.3])
    with pytest.raises(OutsideReach):
        analytic_project(ManifoldSpec.torus(2, 0.5), [2.0, 0.0, 0.0])


def test_torus_projection_matches_grid_search():
    spec = ManifoldSpec.torus(2.0, 0.5)
    pts = sample_tubular(spec, 100, 0.45, seed=3).points
    for z in pts:
        foot, _ = analytic_project(spec, z)
        assert np.allclose(foot, torus_grid_foot(2.0, 0.5, z), atol=1e-6)


def test_torus_tangent_is_orthogonal_to_offset():
    spec = ManifoldSpec.torus(2.0, 0.5)
    for z in sample_tubular(spec, 50, 0.3, seed=4).points:
        foot, T = analytic_project(spec, z)
        assert np.allclose(T.basis.T @ (z - foot), 0.0, atol=1e-12)


@pytest.mark.parametrize("spec", [ManifoldSpec.circle(3.0), ManifoldSpec.sphere(2, 2.0), ManifoldSpec.torus(2, 0.5),
                                  ManifoldSpec.circle(3.0, ambient_dim=5, seed=2),
                                  ManifoldSpec.sphere(2, 2.0, ambient_dim=6, seed=3)],
                         ids=["circle", "sphere", "torus", "circle-R5", "sphere-R6"])
def test_projection_idempotent(spec):
    pts = sample_tubular(spec, 200, 0.2, seed=5).points
    for z in pts[:50]:
        foot, _ = analytic_project(spec, z)
        again, _ = analytic_project(spec, foot)
        assert np.allclose(again, foot, atol=1e-10)


def test_n_must_be_positive():
    with pytest.raises(ValueError):
        sample_tubular(ManifoldSpec.circle(10), 0, 0.5, seed=0)
    s = sample_tubular(ManifoldSpec.circle(10), 1, 0.5, seed=0)
    assert s.points.shape == (1, 2)
    assert abs(np.linalg.norm(s.points[0]) - 10) < 0.5


def test_sigma_must_stay_below_reach():
    with pytest.raises(SigmaExceedsReach):
        sample_tubular(ManifoldSpec.circle(1.0), 10, 1.0, seed=0)
    with pytest.raises(SigmaExceedsReach):
        sample_tubular(ManifoldSpec.torus(2, 0.5), 10, 0.6, seed=0)


def test_annulus_half_width_fraction():
    s = sample_tubular(ManifoldSpec.circle(10), 100_000, 0.5, seed=11)
    rho = np.linalg.norm(s.points, axis=1)
    frac = np.mean(np.abs(rho - 10) < 0.25)
    assert (10.25 ** 2 - 9.75 ** 2) / (10.5 ** 2 - 9.5 ** 2) == pytest.approx(0.5)
    assert frac == pytest.approx(0.5, abs=0.01)


def test_circle_radial_law():
    # uniform on the annulus: P(rho <= x) = (x^2 - a^2) / (b^2 - a^2)
    s = sample_tubular(ManifoldSpec.circle(2.0), 20_000, 0.8, seed=12)
    rho = np.linalg.norm(s.points, axis=1)
    a, b = 1.2, 2.8
    assert stats.kstest(rho, lambda x: (x ** 2 - a ** 2) / (b ** 2 - a ** 2)).pvalue > 0.001


@pytest.mark.parametrize("spec,sigma", [(ManifoldSpec.circle(10), 0.5), (ManifoldSpec.sphere(2, 1.0), 0.3),
                                        (ManifoldSpec.torus(2, 0.5), 0.4),
                                        (ManifoldSpec.torus(2, 0.5, ambient_dim=5, seed=1), 0.4),
                                        (ManifoldSpec.sphere(3, 1.0, ambient_dim=7, seed=2), 0.3)],
                         ids=["circle", "sphere", "torus", "torus-R5", "sphere3-R7"])
def test_every_sample_is_in_the_tube(spec, sigma):
    s = sample_tubular(spec, 3000, sigma, seed=13)
    for z in s.points[:200]:
        foot, _ = analytic_project(spec, z)
        assert np.linalg.norm(z - foot) < sigma
    assert np.all(spec.distances(s.points) < sigma)
    assert np.allclose(s.ground_truth_feet, spec.project_many(s.points)[0])


def test_circle_angle_uniform_chi_square():
    s = sample_tubular(ManifoldSpec.circle(10), 100_000, 0.5, seed=14)
    ang = np.arctan2(s.points[:, 1], s.points[:, 0])
    counts, _ = np.histogram(ang, bins=36, range=(-np.pi, np.pi))
    assert stats.chisquare(counts).pvalue > 0.001


def test_sphere_direction_uniform_chi_square():
    # for S^2 the height of the unit direction is uniform on [-1, 1]
    s = sample_tubular(ManifoldSpec.sphere(2, 1.0), 100_000, 0.3, seed=15)
    u = s.points / np.linalg.norm(s.points, axis=1)[:, None]
    counts, _ = np.histogram(u[:, 2], bins=40, range=(-1, 1))
    assert stats.chisquare(counts).pvalue > 0.001
    az, _ = np.histogram(np.arctan2(u[:, 1], u[:, 0]), bins=36, range=(-np.pi, np.pi))
    assert stats.chisquare(az).pvalue > 0.001


@pytest.mark.parametrize("spec,sigma", [(ManifoldSpec.circle(2.0), 0.8), (ManifoldSpec.torus(2, 0.5), 0.45),
                                        (ManifoldSpec.sphere(2, 1.0), 0.5)], ids=["circle", "torus", "sphere"])
def test_fiber_and_box_samplers_agree(spec, sigma):
    a = sample_tubular(spec, 20_000, sigma, seed=16, method="box")
    b = sample_tubular(spec, 20_000, sigma, seed=17, method="fiber")
    assert stats.ks_2samp(spec.distances(a.points), spec.distances(b.points)).pvalue > 0.001
    for col in range(spec.ambient_dim):
        assert stats.ks_2samp(a.points[:, col], b.points[:, col]).pvalue > 0.001


def test_sampling_deterministic():
    spec = ManifoldSpec.torus(2, 0.5)
    a = sample_tubular(spec, 500, 0.3, seed=99)
    b = sample_tubular(spec, 500, 0.3, seed=99)
    assert a.points.tobytes() == b.points.tobytes()
    assert not np.array_equal(a.points, sample_tubular(spec, 500, 0.3, seed=100).points)


def test_bounding_box_failure(monkeypatch):
    far = lambda spec, sigma, m, rng: np.full((m, 2), 1e6)
    monkeypatch.setattr(synthetic, "_box_batch", far)
    with pytest.raises(BoundingBoxFailure):
        sample_tubular(ManifoldSpec.circle(1.0), 5, 0.5, seed=0)


def test_save_with_feet_sidecar(tmp_path):
    from manifold_mls.io import read_points
    s = sample_tubular(ManifoldSpec.circle(10), 40, 0.5, seed=1)
    s.save(tmp_path / "p.csv", tmp_path / "f.csv")
    assert np.array_equal(read_points(tmp_path / "p.csv"), s.points)
    assert np.array_equal(read_points(tmp_path / "f.csv"), s.ground_truth_feet)


def test_reach_check_circle():
    rep = reach_check(ManifoldSpec.circle(10), 200, seed=0)
    assert rep.passed and rep.n_checked > 0


def test_reach_check_sphere():
    rep = reach_check(ManifoldSpec.sphere(2, 1.0), 200, seed=1)
    assert rep.passed and rep.worst_margin >= -1e-9


def test_reach_check_torus():
    rep = reach_check(ManifoldSpec.torus(2, 0.5), 10_000, seed=2, n_candidates=64)
    assert rep.passed and rep.n_checked > 10_000


def test_reach_check_poly_graph_bound():
    # the parabola y = x^2 bends with radius 1/2 at its apex
    para = MultiPolynomial(1, 1, 2, np.array([[0.0, 0.0, 1.0]]))
    ok = reach_check(ManifoldSpec.poly_graph(para, 0.45, half_width=1.0), 40, seed=3, n_candidates=64)
    bad = reach_check(ManifoldSpec.poly_graph(para, 1.5, half_width=1.0), 40, seed=3, n_candidates=64)
    assert ok.passed and ok.n_checked > 0
    assert not bad.passed and bad.worst_margin < 0


def test_poly_graph_projection():
    para = MultiPolynomial(1, 1, 2, np.array([[0.0, 0.0, 1.0]]))
    spec = ManifoldSpec.poly_graph(para, 0.45)
    foot, T = analytic_project(spec, [0.0, 0.2])
    assert foot == pytest.approx([0.0, 0.0], abs=1e-9)
    with pytest.raises(OutsideReach):
        analytic_project(spec, [0.0, -0.5])
    s = sample_tubular(spec, 300, 0.2, seed=4)
    assert s.method == "fiber"
    assert np.all(spec.distances(s.points) < 0.2)


def test_embedding_is_isometric():
    base = ManifoldSpec.sphere(2, 1.5)
    emb = ManifoldSpec.sphere(2, 1.5, ambient_dim=8, seed=4)
    rng = np.random.default_rng(0)
    P = emb.sample_on_manifold(100, rng)
    assert np.allclose(np.linalg.norm(P, axis=1), 1.5)
    foot, T = analytic_project(emb, P[0] * 1.1)
    assert T.basis.shape == (8, 2)
    assert np.allclose(T.basis.T @ foot, 0.0, atol=1e-12)
    assert base.ambient_dim == 3
