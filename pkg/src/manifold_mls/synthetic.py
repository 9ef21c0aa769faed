"""Ground-truth manifolds with analytic projection, and exact tube samplers.

Each :class:`ManifoldSpec` lives in a small "native" space (R^2 for a circle,
R^(d+1) for a sphere, R^3 for a torus, R^(d+m) for a polynomial graph). It can
be embedded isometrically in a larger R^D by zero padding followed by a seeded
random rotation; the tubular neighbourhood then also extends into the padded
directions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .errors import BoundingBoxFailure, DimensionMismatch, OutsideReach, SigmaExceedsReach
from .geometry import Subspace, _sign_fix
from .local_poly import MultiPolynomial, eval_poly, jacobian

KINDS = ("circle", "sphere", "torus", "poly_graph")


def random_rotation(D: int, seed: int) -> np.ndarray:
    """Seeded Haar-distributed orthogonal D x D matrix."""
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((D, D)))
    return Q * np.sign(np.diag(R))


@dataclass(frozen=True, eq=False)
class ManifoldSpec:
    kind: str
    intrinsic_dim: int
    ambient_dim: int
    native_dim: int
    reach: float
    params: dict = field(default_factory=dict)
    rotation: np.ndarray | None = None
    poly: MultiPolynomial | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if not self.intrinsic_dim < self.ambient_dim:
            raise DimensionMismatch("need d < D")
        if self.ambient_dim < self.native_dim:
            raise DimensionMismatch("ambient dimension below native dimension")
        if not self.reach > 0:
            raise ValueError("reach must be positive")

    # -- constructors -------------------------------------------------------

    @classmethod
    def circle(cls, radius: float = 1.0, ambient_dim: int = 2, seed: int = 0) -> "ManifoldSpec":
        rot = None if ambient_dim == 2 else random_rotation(ambient_dim, seed)
        return cls("circle", 1, ambient_dim, 2, float(radius), {"radius": float(radius)}, rot)

    @classmethod
    def sphere(cls, d: int = 2, radius: float = 1.0, ambient_dim: int | None = None,
               seed: int = 0) -> "ManifoldSpec":
        D = d + 1 if ambient_dim is None else ambient_dim
        rot = None if D == d + 1 else random_rotation(D, seed)
        return cls("sphere", d, D, d + 1, float(radius), {"radius": float(radius)}, rot)

    @classmethod
    def torus(cls, major: float = 2.0, minor: float = 0.5, ambient_dim: int = 3,
              seed: int = 0) -> "ManifoldSpec":
        if not 0 < minor < major:
            raise ValueError("torus needs 0 < minor < major")
        rot = None if ambient_dim == 3 else random_rotation(ambient_dim, seed)
        tau = min(minor, major - minor)
        return cls("torus", 2, ambient_dim, 3, float(tau),
                   {"major": float(major), "minor": float(minor)}, rot)

    @classmethod
    def poly_graph(cls, poly: MultiPolynomial, reach: float, half_width: float = 1.0) -> "ManifoldSpec":
        """Graph of ``poly`` over the box [-half_width, half_width]^d.

        ``reach`` is a configured lower bound, to be validated with
        :func:`reach_check`.
        """
        d, m = poly.intrinsic_dim, poly.out_dim
        return cls("poly_graph", d, d + m, d + m, float(reach),
                   {"half_width": float(half_width)}, None, poly)

    # -- native <-> ambient -----------------------------------------------------

    def _split(self, P):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.shape[1] != self.ambient_dim:
            raise DimensionMismatch(f"points have dimension {P.shape[1]}, manifold lives in R^{self.ambient_dim}")
        Z = P if self.rotation is None else P @ self.rotation
        return Z[:, : self.native_dim], Z[:, self.native_dim:]

    def _embed(self, Zn, extras=None):
        Zn = np.atleast_2d(Zn)
        if self.ambient_dim == self.native_dim:
            Z = Zn
        else:
            Z = np.zeros((Zn.shape[0], self.ambient_dim))
            Z[:, : self.native_dim] = Zn
            if extras is not None:
                Z[:, self.native_dim:] = extras
        return Z if self.rotation is None else Z @ self.rotation.T

    def _embed_basis(self, Bn):
        B = np.zeros((self.ambient_dim, Bn.shape[1]))
        B[: self.native_dim] = Bn
        return B if self.rotation is None else self.rotation @ B

    # -- geometry -----------------------------------------------------------------

    def _native_feet(self, Zn):
        """Nearest manifold points (native coords) and native distances; NaN where undefined."""
        kind = self.kind
        if kind in ("circle", "sphere"):
            R = self.params["radius"]
            rho = np.linalg.norm(Zn, axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                feet = R * Zn / rho[:, None]
            dist = np.abs(rho - R)
            bad = rho == 0
        elif kind == "torus":
            Rm, r = self.params["major"], self.params["minor"]
            rxy = np.hypot(Zn[:, 0], Zn[:, 1])
            with np.errstate(invalid="ignore", divide="ignore"):
                c = np.column_stack([Rm * Zn[:, 0] / rxy, Rm * Zn[:, 1] / rxy, np.zeros(len(Zn))])
                w = Zn - c
                s = np.linalg.norm(w, axis=1)
                feet = c + r * w / s[:, None]
            dist = np.abs(s - r)
            bad = (rxy == 0) | (s == 0)
        else:
            feet = np.empty_like(Zn)
            dist = np.empty(len(Zn))
            for i, z in enumerate(Zn):
                feet[i] = self._graph_foot(z)
                dist[i] = np.linalg.norm(z - feet[i])
            bad = np.zeros(len(Zn), dtype=bool)
        feet[bad] = np.nan
        dist = np.where(bad, np.nan, dist)
        return feet, dist

    def _graph_foot(self, z):
        d = self.intrinsic_dim
        p = self.poly

        def resid(x):
            return np.concatenate([x - z[:d], eval_poly(p, x) - z[d:]])

        def jac(x):
            return np.vstack([np.eye(d), jacobian(p, x)])

        sol = scipy.optimize.least_squares(resid, z[:d].copy(), jac=jac, xtol=1e-15, ftol=1e-15, gtol=1e-15)
        x = sol.x
        return np.concatenate([x, eval_poly(p, x)])

    def _native_tangent(self, foot):
        kind = self.kind
        if kind in ("circle", "sphere"):
            u = foot / np.linalg.norm(foot)
            Q, _ = np.linalg.qr(u[:, None], mode="complete")
            return Q[:, 1:]
        if kind == "torus":
            phi = np.array([-foot[1], foot[0], 0.0])
            phi /= np.linalg.norm(phi)
            rxy = np.hypot(foot[0], foot[1])
            c = self.params["major"] * np.array([foot[0] / rxy, foot[1] / rxy, 0.0])
            n = (foot - c) / np.linalg.norm(foot - c)
            theta = np.cross(n, phi)
            return np.column_stack([phi, theta / np.linalg.norm(theta)])
        d = self.intrinsic_dim
        Q, _ = np.linalg.qr(np.vstack([np.eye(d), jacobian(self.poly, foot[:d])]))
        return Q

    def distances(self, P) -> np.ndarray:
        """Distance of each row of P to the manifold (NaN where the projection is undefined)."""
        Zn, Ze = self._split(P)
        _, dn = self._native_feet(Zn)
        return np.sqrt(dn ** 2 + np.sum(Ze ** 2, axis=1))

    def project_many(self, P):
        """Feet (N x D) and distances (N,) for the rows of P, without reach checks."""
        Zn, Ze = self._split(P)
        feet, dn = self._native_feet(Zn)
        return self._embed(feet), np.sqrt(dn ** 2 + np.sum(Ze ** 2, axis=1))

    def tangent_at(self, foot) -> Subspace:
        Zn, _ = self._split(foot)
        return Subspace(_sign_fix(self._embed_basis(self._native_tangent(Zn[0]))))

    def project(self, point):
        return analytic_project(self, point)

    def normal_vector(self, foot) -> np.ndarray:
        """A unit normal at a foot point, lying in the native space."""
        Zn, _ = self._split(foot)
        Tn = self._native_tangent(Zn[0])
        Q, _ = np.linalg.qr(Tn, mode="complete")
        return self._embed_basis(Q[:, Tn.shape[1]: Tn.shape[1] + 1])[:, 0]

    # -- sampling on M -----------------------------------------------------------

    def sample_on_manifold(self, n: int, rng) -> np.ndarray:
        """n points on M, uniform w.r.t. area (for poly_graph: uniform in the parameter box)."""
        kind = self.kind
        if kind == "circle":
            t = rng.uniform(0, 2 * np.pi, n)
            Zn = self.params["radius"] * np.column_stack([np.cos(t), np.sin(t)])
        elif kind == "sphere":
            g = rng.standard_normal((n, self.native_dim))
            Zn = self.params["radius"] * g / np.linalg.norm(g, axis=1)[:, None]
        elif kind == "torus":
            Rm, r = self.params["major"], self.params["minor"]
            phis, thetas = [], []
            while sum(len(p) for p in phis) < n:
                m = 2 * (n - sum(len(p) for p in phis)) + 16
                th = rng.uniform(0, 2 * np.pi, m)
                ph = rng.uniform(0, 2 * np.pi, m)
                keep = rng.uniform(0, 1, m) < (Rm + r * np.cos(th)) / (Rm + r)
                phis.append(ph[keep])
                thetas.append(th[keep])
            ph = np.concatenate(phis)[:n]
            th = np.concatenate(thetas)[:n]
            Zn = _torus_point(Rm, r, ph, th)
        else:
            L = self.params["half_width"]
            x = rng.uniform(-L, L, (n, self.intrinsic_dim))
            Zn = np.hstack([x, eval_poly(self.poly, x)])
        return self._embed(Zn)


def _torus_point(Rm, s, phi, theta):
    return np.column_stack([(Rm + s * np.cos(theta)) * np.cos(phi),
                            (Rm + s * np.cos(theta)) * np.sin(phi),
                            s * np.sin(theta)])


def analytic_project(spec: ManifoldSpec, point):
    """Nearest point on M and the tangent subspace there.

    Circle, sphere and torus have closed-form feet, so OutsideReach is raised
    only where the nearest point is not unique (a centre, an axis, a core
    circle). For a polynomial graph the stored reach is the only guarantee and
    points at distance >= reach are refused.
    """
    feet, dist = spec.project_many(np.asarray(point, dtype=float).reshape(1, -1))
    if not np.isfinite(dist[0]):
        raise OutsideReach(f"the nearest point on the {spec.kind} is not unique here")
    if spec.kind == "poly_graph" and dist[0] >= spec.reach:
        raise OutsideReach(f"distance {dist[0]} to the graph is not below its reach {spec.reach}")
    foot = feet[0]
    return foot, spec.tangent_at(foot)


@dataclass(frozen=True, eq=False)
class NoisySample:
    points: np.ndarray
    ground_truth_feet: np.ndarray
    sigma: float
    seed: int
    spec: ManifoldSpec | None = None
    method: str = "box"

    def save(self, path, feet_path=None, fmt: str = "csv"):
        from .io import save_cloud

        save_cloud(path, self.points, fmt)
        if feet_path is not None:
            save_cloud(feet_path, self.ground_truth_feet, fmt)


def _uniform_ball(rng, n, k, radius):
    g = rng.standard_normal((n, k))
    g /= np.linalg.norm(g, axis=1)[:, None]
    return g * (radius * rng.uniform(0, 1, n) ** (1.0 / k))[:, None]


def _box_batch(spec, sigma, m, rng):
    kind = spec.kind
    if kind in ("circle", "sphere"):
        b = spec.params["radius"] + sigma
        return rng.uniform(-b, b, (m, spec.native_dim))
    if kind == "torus":
        Rm, r = spec.params["major"], spec.params["minor"]
        bxy, bz = Rm + r + sigma, r + sigma
        return np.column_stack([rng.uniform(-bxy, bxy, m), rng.uniform(-bxy, bxy, m), rng.uniform(-bz, bz, m)])
    raise ValueError("box sampling is only available for circle, sphere and torus")


def _fiber_batch(spec, sigma, m, rng):
    """Foot-plus-normal-offset proposals, thinned by the tube volume element."""
    kind = spec.kind
    D = spec.ambient_dim
    if kind == "poly_graph":
        x = rng.uniform(-spec.params["half_width"], spec.params["half_width"], (m, spec.intrinsic_dim))
        feet = np.hstack([x, eval_poly(spec.poly, x)])
        out = np.empty_like(feet)
        for i, f in enumerate(feet):
            Tn = spec._native_tangent(f)
            Q, _ = np.linalg.qr(Tn, mode="complete")
            N = Q[:, spec.intrinsic_dim:]
            out[i] = f + N @ _uniform_ball(rng, 1, N.shape[1], sigma)[0]
        return out
    if kind == "circle":
        R = spec.params["radius"]
        off = _uniform_ball(rng, m, D - 1, sigma)
        t, w = off[:, 0], off[:, 1:]
        th = rng.uniform(0, 2 * np.pi, m)
        Zn = (R + t)[:, None] * np.column_stack([np.cos(th), np.sin(th)])
        keep = rng.uniform(0, 1, m) < (R + t) / (R + sigma)
    elif kind == "sphere":
        R = spec.params["radius"]
        d = spec.intrinsic_dim
        off = _uniform_ball(rng, m, D - d, sigma)
        t, w = off[:, 0], off[:, 1:]
        g = rng.standard_normal((m, d + 1))
        Zn = (R + t)[:, None] * g / np.linalg.norm(g, axis=1)[:, None]
        keep = rng.uniform(0, 1, m) < ((R + t) / (R + sigma)) ** d
    else:
        Rm, r = spec.params["major"], spec.params["minor"]
        off = _uniform_ball(rng, m, D - 2, sigma)
        t, w = off[:, 0], off[:, 1:]
        ph = rng.uniform(0, 2 * np.pi, m)
        th = rng.uniform(0, 2 * np.pi, m)
        s = r + t
        Zn = _torus_point(Rm, s, ph, th)
        keep = rng.uniform(0, 1, m) < s * (Rm + s * np.cos(th)) / ((r + sigma) * (Rm + r + sigma))
    return spec._embed(Zn[keep], w[keep])


def sample_tubular(spec: ManifoldSpec, n: int, sigma: float, seed: int, method: str = "auto") -> NoisySample:
    """n points uniform on the tube {x : dist(x, M) < sigma}.

    ``method="box"`` rejects uniform draws from a bounding box of the native
    space (circle, sphere and torus in their native dimension). ``"fiber"``
    draws a foot point and a normal offset and thins by the tube's volume
    element; this is exact for circle, sphere and torus in any ambient
    dimension and approximate for ``poly_graph`` (no curvature correction,
    parameter-uniform feet). ``"auto"`` picks box when possible.
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    if not 0 < sigma < spec.reach:
        raise SigmaExceedsReach(f"sigma={sigma} must lie in (0, reach={spec.reach})")
    if method == "auto":
        native = spec.rotation is None and spec.ambient_dim == spec.native_dim
        method = "box" if native and spec.kind != "poly_graph" else "fiber"
    if method not in ("box", "fiber"):
        raise ValueError(f"unknown sampling method {method!r}")
    if method == "box" and spec.ambient_dim != spec.native_dim:
        raise ValueError("box sampling requires the manifold's native ambient dimension")

    rng = np.random.default_rng(seed)
    chunks, have, drawn = [], 0, 0
    batch = max(256, 2 * n)
    while have < n:
        prop = _box_batch(spec, sigma, batch, rng) if method == "box" else _fiber_batch(spec, sigma, batch, rng)
        drawn += batch
        if len(prop):
            # membership replayed with the analytic distance; also absorbs round-off at the rim
            dist = spec.distances(prop)
            prop = prop[np.isfinite(dist) & (dist < sigma)]
        chunks.append(prop)
        have += len(prop)
        if drawn >= 1_000_000 and have / drawn < 1e-6:
            raise BoundingBoxFailure(f"acceptance rate {have / drawn:.2e} after {drawn} proposals")
        batch = min(4_000_000, max(256, int(1.2 * (n - have) * drawn / max(have, 1)) + 64))
    pts = np.concatenate(chunks)[:n]
    feet, _ = spec.project_many(pts)
    return NoisySample(pts, feet, float(sigma), int(seed), spec, method)


@dataclass(frozen=True)
class ReachReport:
    passed: bool
    worst_margin: float
    n_checked: int


def reach_check(spec: ManifoldSpec, trials: int, seed: int, n_candidates: int = 512,
                tol: float = 1e-9) -> ReachReport:
    """Monte-Carlo check of the bounding-ball property at the stored reach.

    For random p on M, every manifold point p + x_T + y with x_T tangent,
    ||x_T|| <= tau and ||y|| <= tau/2 must satisfy
    ||y|| <= tau - sqrt(tau^2 - ||x_T||^2).
    """
    rng = np.random.default_rng(seed)
    tau = spec.reach
    worst, checked = np.inf, 0
    for _ in range(trials):
        p = spec.sample_on_manifold(1, rng)[0]
        T = spec.tangent_at(p).basis
        # half the candidates are spread over M, half concentrate near p
        far = spec.sample_on_manifold(n_candidates // 2, rng)
        near_prop = p + _uniform_ball(rng, n_candidates - n_candidates // 2, spec.ambient_dim, 0.9 * tau)
        near, dn = spec.project_many(near_prop)
        near = near[np.isfinite(dn) & (dn < tau)]
        cand = np.vstack([far, near]) - p
        xt = cand @ T
        y = cand - xt @ T.T
        nx = np.linalg.norm(xt, axis=1)
        ny = np.linalg.norm(y, axis=1)
        inside = (nx <= tau) & (ny <= tau / 2)
        if not inside.any():
            continue
        margin = tau - np.sqrt(np.maximum(tau ** 2 - nx[inside] ** 2, 0.0)) - ny[inside]
        worst = min(worst, float(margin.min()))
        checked += int(inside.sum())
    if checked == 0:
        worst = 0.0
    return ReachReport(bool(worst >= -tol), float(worst), checked)

