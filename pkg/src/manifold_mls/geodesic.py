"""Walking along the estimated manifold.

Each step moves a fixed ambient distance along the current unit tangent
direction, projects the result back with the estimator, and carries the
direction over to the new tangent by orthogonal projection followed by
renormalization.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import EstimatorError, ProjectionFailed, ZeroDirection
from .geometry import Frame, Subspace
from .io import format_csv
from .point_index import PointCloud
from .step1 import Step1Config
from .step2 import EstimateResult, Step2Config, project, refine

log = logging.getLogger(__name__)

MIN_DIRECTION = 1e-10


@dataclass(frozen=True)
class WalkConfig:
    step: float
    n_steps: int
    step1: Step1Config
    step2: Step2Config
    warm_start: bool = False

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step length must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if not self.step < self.step2.tau / 2:
            raise ValueError(f"step {self.step} must stay below tau/2 = {self.step2.tau / 2}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    points: np.ndarray
    directions: np.ndarray
    tangents: list = field(default_factory=list, repr=False)
    cause: str | None = None
    failed_step: int | None = None

    def __len__(self):
        return len(self.points)

    @property
    def complete(self) -> bool:
        return self.cause is None

    def to_csv(self) -> str:
        D = self.points.shape[1]
        head = ["step"] + [f"x{i}" for i in range(D)] + [f"v{i}" for i in range(D)]
        rows = [[i, *p, *v] for i, (p, v) in enumerate(zip(self.points, self.directions))]
        body = "".join(
            ",".join([str(r[0])] + [repr(float(c)) for c in r[1:]]) + "\n" for r in rows
        )
        return ",".join(head) + "\n" + body

    def frame_csv(self, i: int, cloud: PointCloud | None = None, radius: float | None = None) -> str:
        """Point, direction and tangent basis at step i (plus nearby samples when a cloud is given)."""
        lines = ["# point\n", format_csv([self.points[i]]), "# direction\n", format_csv([self.directions[i]]),
                 "# tangent\n", format_csv(self.tangents[i].basis.T)]
        if cloud is not None and radius is not None:
            lines += ["# samples\n", format_csv(cloud.points[cloud.radius_query(self.points[i], radius)])]
        return "".join(lines)


def _transport(v, T: Subspace):
    w = T.project(v)
    nrm = float(np.linalg.norm(w))
    if nrm < MIN_DIRECTION:
        raise ZeroDirection(f"direction has norm {nrm:.3g} after projection onto the tangent")
    return w / nrm


def _estimate(cloud, x, cfg: WalkConfig, prev: Subspace | None) -> EstimateResult:
    if cfg.warm_start and prev is not None:
        return refine(cloud, Frame(np.asarray(x, dtype=float), prev), cfg.step2, query=x)
    return project(cloud, x, cfg.step1, cfg.step2)


def geodesic_walk(cloud: PointCloud, x0, v0, cfg: WalkConfig) -> Trajectory:
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    v0 = np.asarray(v0, dtype=float).reshape(-1)
    try:
        res = _estimate(cloud, x0, cfg, None)
    except EstimatorError as exc:
        raise ProjectionFailed(0, str(exc)) from exc
    if res.failed:
        raise ProjectionFailed(0, res.cause)
    x, T = res.p_hat, res.tangent_hat
    v = _transport(v0, T)

    points, dirs, tangents = [x], [v], [T]
    cause = failed_step = None
    for i in range(1, cfg.n_steps + 1):
        x_tilde = x + cfg.step * v
        try:
            res = _estimate(cloud, x_tilde, cfg, T)
            if res.failed:
                raise ProjectionFailed(i, res.cause)
            v = _transport(v, res.tangent_hat)
        except EstimatorError as exc:
            cause = getattr(exc, "reason", None) or exc.cause
            failed_step = i
            log.info("walk truncated at step %d: %s", i, exc)
            break
        x, T = res.p_hat, res.tangent_hat
        points.append(x)
        dirs.append(v)
        tangents.append(T)
    return Trajectory(np.array(points), np.array(dirs), tangents, cause, failed_step)
