"""Step 2: iterated local polynomial regression over a moving frame.

Starting from the Step-1 frame (q_{-1}, H_0), the origin is first moved onto
the fitted graph, and then each iteration

* fits the normal coordinates as a polynomial of the tangent coordinates in
  (q_l, H_l) and takes H_{l+1} as the tangent of that graph at 0;
* re-fits in (q_l, H_{l+1}) and moves the origin by the fitted value at 0.

The fit window is the ball of radius sqrt(sigma*tau) around the current origin,
cut down to tangent coordinates shorter than the bandwidth eps_n.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import local_poly
from .errors import EmptyROI, EstimatorError, InsufficientSamples, InvalidDomain, RankDeficient
from .geometry import Frame, Subspace, max_angle, orthonormalize
from .point_index import PointCloud
from .step1 import Step1Config, Step1Result, find_initial_frame

log = logging.getLogger(__name__)

ENLARGE_FACTOR = 1.5
ENLARGE_MAX = 4
# a period-2 oscillation is declared when the origin returns this close
# (relative to the last step) on two consecutive iterations
CYCLE_RATIO = 0.05


@dataclass(frozen=True)
class Step2Config:
    """Settings for the refinement.

    ``bandwidth_scale`` is measured in units of the ROI radius sqrt(sigma*tau):
    eps_n = bandwidth_scale * sqrt(sigma*tau) * n^(-1/(2k+d)).
    """

    sigma: float
    tau: float
    k: int = 2
    bandwidth_scale: float = 4.0
    bandwidth_mode: str = "rate_consistent"
    eps_stop: float | None = None
    max_iters: int = 50
    iter_mode: str = "until_convergence"  # or "fixed_kappa"
    kappa: int | None = None
    mom_blocks: int | None = None
    roi_anchor: str = "follow"  # "follow" the origin, or stay at the "query"
    single_fit: bool = False

    def __post_init__(self):
        if not 0 < self.sigma < self.tau:
            raise ValueError(f"need 0 < sigma < tau, got sigma={self.sigma}, tau={self.tau}")
        if self.k < 2:
            raise ValueError("k must be >= 2: a degree-0 fit has no differential")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.iter_mode not in ("until_convergence", "fixed_kappa"):
            raise ValueError(f"unknown iter_mode {self.iter_mode!r}")
        if self.iter_mode == "fixed_kappa" and (self.kappa is None or self.kappa < 0):
            raise ValueError("fixed_kappa mode needs a non-negative kappa")
        if self.roi_anchor not in ("follow", "query"):
            raise ValueError(f"unknown roi_anchor {self.roi_anchor!r}")
        if not self.bandwidth_scale > 0:
            raise ValueError("bandwidth_scale must be positive")

    @property
    def degree(self) -> int:
        return self.k - 1

    @property
    def roi_radius(self) -> float:
        return float(np.sqrt(self.sigma * self.tau))

    @property
    def stop_tol(self) -> float:
        return self.eps_stop if self.eps_stop is not None else 1e-6 * self.sigma

    def eps_n(self, n: int, d: int) -> float:
        return local_poly.bandwidth(n, self.k, d, self.bandwidth_scale * self.roi_radius, self.bandwidth_mode)


@dataclass(frozen=True, eq=False)
class TraceRecord:
    """Frame after one update, how far the origin moved, and the fit that produced it."""

    origin: np.ndarray
    basis: np.ndarray
    displacement: float
    roi_size: int
    n_used: int
    eps_used: float
    diagnostics: local_poly.FitDiagnostics | None = None


@dataclass(frozen=True, eq=False)
class EstimateResult:
    p_hat: np.ndarray
    tangent_hat: Subspace
    trace: list = field(default_factory=list)
    converged: bool = False
    cause: str | None = None
    step1: Step1Result | None = None
    last_poly: local_poly.MultiPolynomial | None = None

    @property
    def iterations(self) -> int:
        return max(len(self.trace) - 1, 0)

    @property
    def failed(self) -> bool:
        """True when an estimator error cut the refinement short."""
        return self.cause not in (None, "max_iters", "limit_cycle")

    def to_dict(self, truth=None, dump_poly: bool = False) -> dict:
        out = {
            "p_hat": [float(v) for v in self.p_hat],
            "tangent_basis": [[float(v) for v in row] for row in self.tangent_hat.basis.T],
            "converged": bool(self.converged),
            "cause": self.cause,
            "iterations": self.iterations,
            "displacements": [float(t.displacement) for t in self.trace],
            "roi_sizes": [int(t.n_used) for t in self.trace],
        }
        if truth is not None:
            angles = []
            for t in self.trace:
                foot, T = truth.project(t.origin)
                angles.append(max_angle(Subspace(t.basis), T))
            foot, T = truth.project(self.p_hat)
            out["angles"] = [float(a) for a in angles]
            out["point_error"] = float(np.linalg.norm(self.p_hat - foot))
            out["tangent_error"] = float(max_angle(self.tangent_hat, T))
        if dump_poly and self.last_poly is not None:
            out["poly"] = self.last_poly.to_dict()
        return out

    def to_json(self, truth=None, dump_poly: bool = False) -> str:
        return json.dumps(self.to_dict(truth, dump_poly))


def roi_n(cloud: PointCloud, frame: Frame, base_roi, eps_n: float) -> np.ndarray:
    """Members of ``base_roi`` whose tangent coordinates are shorter than eps_n."""
    if not eps_n > 0:
        raise ValueError("eps_n must be positive")
    idx = np.asarray(base_roi, dtype=np.intp)
    x = (cloud.points[idx] - frame.origin) @ frame.basis
    keep = idx[np.linalg.norm(x, axis=1) < eps_n]
    if keep.size == 0:
        raise EmptyROI(f"no samples with tangent coordinates below eps_n={eps_n:.4g}")
    return keep


def fit_in_frame(cloud: PointCloud, frame: Frame, base_roi, cfg: Step2Config, eps_n: float | None = None):
    """Fit the normal coordinates of the windowed samples as a polynomial of their tangent coordinates.

    The window grows by 1.5x up to four times when it holds fewer samples than
    the polynomial has coefficients. Returns ``(poly, diagnostics, eps_used, n_used)``;
    ``poly`` maps R^d to R^(D-d) in the basis ``frame.subspace.complement``.
    """
    d = frame.dim
    B = local_poly.basis_size(d, cfg.degree)
    eps = cfg.eps_n(cloud.n, d) if eps_n is None else float(eps_n)
    idx = np.asarray(base_roi, dtype=np.intp)
    V = cloud.points[idx] - frame.origin
    X = V @ frame.basis
    radii = np.linalg.norm(X, axis=1)
    for attempt in range(ENLARGE_MAX + 1):
        sel = radii < eps
        if sel.sum() >= B:
            break
        if attempt < ENLARGE_MAX:
            eps *= ENLARGE_FACTOR
    else:
        raise InsufficientSamples(f"{int(sel.sum())} samples in the window after enlargement, need {B}")
    Y = V[sel] @ frame.subspace.complement
    poly, diag = local_poly.fit(X[sel], Y, cfg.degree, cfg.mom_blocks, scale=eps)
    return poly, diag, eps, int(sel.sum())


def _base_roi(cloud, center, cfg):
    idx = cloud.radius_query(center, cfg.roi_radius)
    if idx.size == 0:
        raise EmptyROI("no samples within sqrt(sigma*tau) of the current origin")
    return idx


def _shift(frame: Frame, poly) -> np.ndarray:
    """q + (0, pi(0)) expressed in ambient coordinates."""
    return frame.origin + frame.subspace.complement @ poly.coeffs[:, 0]


def _tangent_update(frame: Frame, poly) -> Subspace:
    G = local_poly.graph_tangent_columns(poly)
    A = frame.basis @ G[: frame.dim] + frame.subspace.complement @ G[frame.dim:]
    return orthonormalize(A)


def refine(cloud: PointCloud, init: Frame, cfg: Step2Config, query=None) -> EstimateResult:
    """Iterate the frame from ``init`` towards a manifold point and its tangent.

    ``query`` anchors the sample window when ``cfg.roi_anchor == "query"``
    (defaults to the initial origin). Estimator failures mid-way return the
    last good frame with ``converged=False`` and ``cause`` set.
    """
    anchor = np.asarray(init.origin if query is None else query, dtype=float)
    frame = init
    trace: list[TraceRecord] = []
    poly = None

    def window(center):
        return _base_roi(cloud, anchor if cfg.roi_anchor == "query" else center, cfg)

    def result(converged, cause):
        return EstimateResult(frame.origin.copy(), frame.subspace, trace, converged, cause, None, poly)

    try:
        base = window(frame.origin)
        poly, diag, eps, used = fit_in_frame(cloud, frame, base, cfg)
        q0 = _shift(frame, poly)
        trace.append(TraceRecord(q0, frame.basis, float(np.linalg.norm(q0 - frame.origin)), base.size, used, eps, diag))
        frame = Frame(q0, frame.subspace)
    except EstimatorError as exc:
        log.info("refinement pre-step failed: %s", exc)
        return result(False, exc.cause)

    n_iter = cfg.kappa if cfg.iter_mode == "fixed_kappa" else cfg.max_iters
    cycle_hits = 0
    for _ in range(n_iter):
        try:
            base = window(frame.origin)
            poly, diag, eps, used = fit_in_frame(cloud, frame, base, cfg)
            H_next = _tangent_update(frame, poly)
            if cfg.single_fit:
                q_next = _shift(frame, poly)
            else:
                half = Frame(frame.origin, H_next)
                poly, diag, eps, used = fit_in_frame(cloud, half, base, cfg)
                q_next = _shift(half, poly)
        except RankDeficient:
            return result(False, "degenerate_tangent")
        except EstimatorError as exc:
            log.info("refinement stopped after %d iterations: %s", len(trace) - 1, exc)
            return result(False, exc.cause)
        step = float(np.linalg.norm(q_next - frame.origin))
        frame = Frame(q_next, H_next)
        trace.append(TraceRecord(frame.origin, frame.basis, step, base.size, used, eps, diag))
        if cfg.iter_mode == "until_convergence":
            if step < cfg.stop_tol:
                return result(True, None)
            # window membership flipping back and forth traps the iteration in a 2-cycle
            if len(trace) >= 3 and np.linalg.norm(frame.origin - trace[-3].origin) < CYCLE_RATIO * step:
                cycle_hits += 1
                if cycle_hits >= 2:
                    log.debug("refinement caught in a 2-cycle of amplitude %.3g", step)
                    return result(False, "limit_cycle")
            else:
                cycle_hits = 0
    if cfg.iter_mode == "fixed_kappa":
        return result(True, None)
    return result(False, "max_iters")


def project(cloud: PointCloud, r, cfg1: Step1Config, cfg2: Step2Config) -> EstimateResult:
    """Full estimate for a query r: Step-1 frame, then refinement."""
    s1 = find_initial_frame(cloud, r, cfg1)
    res = refine(cloud, s1.frame, cfg2, query=r)
    return EstimateResult(res.p_hat, res.tangent_hat, res.trace, res.converged, res.cause, s1, res.last_poly)


def theoretical_kappa(n: float, delta: float, alpha1: float, d: int, k: int, C0: float = 1.0) -> float:
    """Iteration count of the refinement analysis.

    kappa = r1*log2(n) + C - log2(ln((2*r1*log2(n) + 2*C) / delta)),
    with r1 = (k-1)/(2k+d) and C = 1 + log2(alpha1 / (12 sqrt(d))) - log2(C0).
    The outer unnamed logarithm is taken base 2.
    """
    if min(n, delta, alpha1, d, k, C0) <= 0 or not delta < 1:
        raise InvalidDomain("all inputs must be positive and delta must lie in (0, 1)")
    r1 = (k - 1) / (2 * k + d)
    cbar = 1.0 + math.log2(alpha1 / (12.0 * math.sqrt(d))) - math.log2(C0)
    a = r1 * math.log2(n) + cbar
    inner = 2.0 * a / delta
    if inner <= 1.0:
        raise InvalidDomain(f"ln argument {inner:.4g} must exceed 1")
    return a - math.log2(math.log(inner))
