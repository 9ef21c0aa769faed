"""Immutable point storage with exact fixed-radius queries."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimensionMismatch, EmptyInput, NonFiniteInput

# Above this ambient dimension tree pruning stops paying off; scan instead.
KDTREE_MAX_DIM = 16


def _distances(points, center):
    diff = points - center
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


class PointCloud:
    """n samples in R^D with an exact strict-inequality ball query.

    Uses a k-d tree for D <= 16 and a brute-force scan otherwise. The tree only
    proposes candidates; membership is always decided by the same exact
    distance test as the scan, so both paths return identical index sets.
    """

    def __init__(self, points):
        P = np.array(points, dtype=float, copy=True)
        if P.ndim == 1:
            P = P[None, :]
        if P.ndim != 2 or P.shape[0] == 0 or P.shape[1] == 0:
            raise EmptyInput(f"need a non-empty (n, D) array, got shape {P.shape}")
        if not np.all(np.isfinite(P)):
            raise NonFiniteInput("point cloud contains NaN or inf")
        P.setflags(write=False)
        self._points = P
        self._tree = cKDTree(P) if P.shape[1] <= KDTREE_MAX_DIM else None

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def n(self) -> int:
        return self._points.shape[0]

    @property
    def dim(self) -> int:
        return self._points.shape[1]

    @property
    def uses_tree(self) -> bool:
        return self._tree is not None

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"PointCloud(n={self.n}, D={self.dim}, index={'kdtree' if self.uses_tree else 'scan'})"

    def radius_query(self, center, radius: float) -> np.ndarray:
        """Indices i with ||r_i - center|| < radius, ascending."""
        c = np.asarray(center, dtype=float).reshape(-1)
        if c.shape[0] != self.dim:
            raise DimensionMismatch(f"center has dimension {c.shape[0]}, cloud lives in R^{self.dim}")
        if not radius > 0:
            raise ValueError(f"radius must be positive, got {radius}")
        if self._tree is None:
            idx = np.flatnonzero(_distances(self._points, c) < radius)
        else:
            # candidates from a slightly inflated ball, then the exact test
            cand = self._tree.query_ball_point(c, radius * (1.0 + 1e-9) + 1e-300)
            cand = np.asarray(cand, dtype=np.intp)
            if cand.size == 0:
                return cand
            cand.sort()
            idx = cand[_distances(self._points[cand], c) < radius]
        return idx.astype(np.intp, copy=False)


def build(points) -> PointCloud:
    return PointCloud(points)


def radius_query(cloud: PointCloud, center, radius: float) -> np.ndarray:
    return cloud.radius_query(center, radius)
