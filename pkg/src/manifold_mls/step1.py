"""Step 1: an initial local frame (q*, H*) around a query point r.

Minimizes the mean squared distance of the samples within sqrt(sigma*tau) of r
to the affine plane q + H, subject to r - q being orthogonal to H and
||r - q|| < 2 sigma, with the alternating affine least-squares iteration.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateROI, EmptyROI, RankDeficient
from .geometry import Frame, Subspace, _sign_fix, orthonormalize
from .point_index import PointCloud

log = logging.getLogger(__name__)

# pull-back target when the search-region constraint is violated
_CLAMP = 1.0 - 1e-9


@dataclass(frozen=True)
class Step1Config:
    sigma: float
    tau: float
    d: int
    eps_stop: float | None = None
    max_iters: int = 100
    pca_weighting: str = "indicator"  # or "gaussian"
    gaussian_h: float | None = None

    def __post_init__(self):
        if not 0 < self.sigma < self.tau:
            raise ValueError(f"need 0 < sigma < tau, got sigma={self.sigma}, tau={self.tau}")
        if self.d < 1:
            raise ValueError("intrinsic dimension must be >= 1")
        if self.eps_stop is not None and not self.eps_stop > 0:
            raise ValueError("eps_stop must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.pca_weighting not in ("indicator", "gaussian"):
            raise ValueError(f"unknown pca weighting {self.pca_weighting!r}")

    @property
    def roi_radius(self) -> float:
        return float(np.sqrt(self.sigma * self.tau))

    @property
    def stop_tol(self) -> float:
        return self.eps_stop if self.eps_stop is not None else 1e-9 * self.roi_radius


@dataclass(frozen=True, eq=False)
class Step1Result:
    frame: Frame
    j1: float
    roi_count: int
    iters: int
    converged: bool
    clamped: bool = False
    j1_history: tuple = field(default=(), repr=False)


def roi(cloud: PointCloud, r, sigma: float, tau: float) -> np.ndarray:
    if not (sigma > 0 and tau > 0):
        raise ValueError("sigma and tau must be positive")
    idx = cloud.radius_query(r, np.sqrt(sigma * tau))
    if idx.size == 0:
        raise EmptyROI(f"no samples within sqrt(sigma*tau)={np.sqrt(sigma * tau):.4g} of the query")
    return idx


def j1_score(cloud: PointCloud, roi_indices, frame: Frame) -> float:
    """Mean squared distance of the ROI samples to the affine plane of ``frame``."""
    idx = np.asarray(roi_indices)
    if idx.size == 0:
        raise EmptyROI("empty region of interest")
    return _j1(cloud.points[idx] - frame.origin, frame.basis)


def _j1(V, U):
    resid = V - (V @ U) @ U.T
    return float(np.mean(np.einsum("ij,ij->i", resid, resid)))


def _initial_basis(P, r, cfg: Step1Config) -> np.ndarray:
    if cfg.pca_weighting == "gaussian":
        h2 = cfg.gaussian_h ** 2 if cfg.gaussian_h else cfg.sigma * cfg.tau
        w = np.exp(-np.sum((P - r) ** 2, axis=1) / h2)
    else:
        w = np.ones(len(P))
    w = w / w.sum()
    mu = w @ P
    C = (P - mu).T @ ((P - mu) * w[:, None])
    evals, evecs = np.linalg.eigh(C)
    order = np.argsort(evals, kind="stable")[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if evals[0] <= 0 or evals[cfg.d - 1] <= 1e-12 * evals[0]:
        raise DegenerateROI(f"local covariance has rank below d={cfg.d}")
    return _sign_fix(evecs[:, : cfg.d])


def find_initial_frame(cloud: PointCloud, r, cfg: Step1Config) -> Step1Result:
    r = np.asarray(r, dtype=float).reshape(-1)
    idx = roi(cloud, r, cfg.sigma, cfg.tau)
    if idx.size < cfg.d + 1:
        raise DegenerateROI(f"{idx.size} samples in the ROI, need at least d+1={cfg.d + 1}")
    P = cloud.points[idx]
    N = len(P)
    U = _initial_basis(P, r, cfg)
    ones = np.ones((N, 1))

    q = r.copy()
    history = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        q_prev = q
        Rt = P - q
        Xt = np.hstack([ones, Rt @ U])
        alpha, *_ = np.linalg.lstsq(Xt, Rt, rcond=None)
        q_tilde = q + alpha[0]
        try:
            U = orthonormalize(alpha[1:].T).basis
        except RankDeficient as exc:
            raise DegenerateROI(f"affine fit lost rank: {exc}") from None
        q = q_tilde + U @ (U.T @ (r - q_tilde))
        history.append(_j1(P - q, U))
        if len(history) > 1 and history[-1] > history[-2] + 1e-12:
            log.debug("J1 increased from %.6g to %.6g at iteration %d", history[-2], history[-1], it)
        if np.linalg.norm(q - q_prev) < cfg.stop_tol:
            converged = True
            break
    if not converged:
        log.info("step 1 stopped after %d iterations without meeting the tolerance", it)

    clamped = False
    gap = np.linalg.norm(r - q)
    if gap >= 2 * cfg.sigma:
        q = r - (r - q) * (2 * cfg.sigma * _CLAMP / gap)
        clamped = True
        log.info("step 1 origin pulled back into the 2*sigma search region")

    frame = Frame(q, Subspace(U))
    return Step1Result(frame, _j1(P - q, U), N, it, converged, clamped, tuple(history))
