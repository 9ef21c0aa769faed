"""Subspaces, local frames, projections and principal angles."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DimensionMismatch, RankDeficient

ORTHO_TOL = 1e-10
RANK_TOL = 1e-12


def _sign_fix(Q):
    """Flip columns so that the first non-negligible entry of each is positive."""
    Q = np.array(Q, dtype=float, copy=True)
    for j in range(Q.shape[1]):
        col = Q[:, j]
        nz = np.flatnonzero(np.abs(col) > RANK_TOL)
        if nz.size and col[nz[0]] < 0:
            Q[:, j] = -col
    return Q


@dataclass(frozen=True, eq=False)
class Subspace:
    """A d-dimensional linear subspace of R^D stored by an orthonormal basis (D x d)."""

    basis: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.basis, dtype=float)
        if B.ndim != 2:
            raise DimensionMismatch(f"basis must be a 2-d array, got shape {B.shape}")
        D, d = B.shape
        if d < 1 or d >= D:
            raise DimensionMismatch(f"need 1 <= d < D, got d={d}, D={D}")
        if not np.allclose(B.T @ B, np.eye(d), rtol=0.0, atol=ORTHO_TOL):
            raise RankDeficient("basis columns are not orthonormal")
        B.setflags(write=False)
        object.__setattr__(self, "basis", B)

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @cached_property
    def complement(self) -> np.ndarray:
        """Orthonormal basis (D x (D-d)) of the orthogonal complement."""
        Q, _ = np.linalg.qr(self.basis, mode="complete")
        C = _sign_fix(Q[:, self.dim:])
        C.setflags(write=False)
        return C

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def project(self, v) -> np.ndarray:
        """Orthogonal projection of a vector (or rows of a matrix) onto the subspace."""
        v = np.asarray(v, dtype=float)
        return (v @ self.basis) @ self.basis.T


def orthonormalize(vectors) -> Subspace:
    """Orthonormal basis of the column space of ``vectors`` (D x d).

    Raises RankDeficient when the smallest singular value is below
    ``1e-12`` times the largest.
    """
    A = np.asarray(vectors, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2 or A.shape[1] < 1 or A.shape[1] >= A.shape[0]:
        raise DimensionMismatch(f"expected a D x d matrix with 1 <= d < D, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise RankDeficient("non-finite entries")
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= RANK_TOL * s[0]:
        raise RankDeficient(f"columns are linearly dependent (singular values {s})")
    Q, _ = np.linalg.qr(A, mode="reduced")
    return Subspace(_sign_fix(Q))


@dataclass(frozen=True, eq=False)
class Frame:
    """Local coordinate system: an origin q and a subspace H through it."""

    origin: np.ndarray
    subspace: Subspace = field()

    def __post_init__(self):
        q = np.asarray(self.origin, dtype=float).reshape(-1)
        if q.shape[0] != self.subspace.ambient_dim:
            raise DimensionMismatch(
                f"origin has dimension {q.shape[0]}, subspace lives in R^{self.subspace.ambient_dim}"
            )
        q = q.copy()
        q.setflags(write=False)
        object.__setattr__(self, "origin", q)

    @property
    def basis(self) -> np.ndarray:
        return self.subspace.basis

    @property
    def dim(self) -> int:
        return self.subspace.dim

    @property
    def ambient_dim(self) -> int:
        return self.subspace.ambient_dim

    def coordinates(self, points):
        """Tangent (x) and normal-complement (y) coordinates of ``points - q``.

        ``points`` is an (N, D) array; returns x of shape (N, d) and y of shape
        (N, D-d) in the basis of :attr:`Subspace.complement`.
        """
        P = np.atleast_2d(np.asarray(points, dtype=float)) - self.origin
        return P @ self.basis, P @ self.subspace.complement


def _check_point(frame: Frame, point) -> np.ndarray:
    p = np.asarray(point, dtype=float).reshape(-1)
    if p.shape[0] != frame.ambient_dim:
        raise DimensionMismatch(f"point has dimension {p.shape[0]}, frame lives in R^{frame.ambient_dim}")
    return p


def project_point(frame: Frame, point):
    """Split ``point - q`` into subspace coordinates x (R^d) and the residual y (R^D).

    ``q + basis @ x + y`` reconstructs the point; y is orthogonal to H.
    """
    p = _check_point(frame, point)
    v = p - frame.origin
    x = frame.basis.T @ v
    y = v - frame.basis @ x
    return x, y


def dist_to_subspace(frame: Frame, point) -> float:
    """Distance from ``point - q`` to H, i.e. to the affine plane q + H."""
    _, y = project_point(frame, point)
    return float(np.linalg.norm(y))


def _as_basis(S) -> np.ndarray:
    return S.basis if isinstance(S, Subspace) else np.asarray(S, dtype=float)


def principal_angles(A, B) -> np.ndarray:
    """Principal angles between subspaces A and B, ascending, in radians.

    Computed as arccos of the singular values of A^T B, clamped to [0, 1];
    angles below pi/4 are taken from the singular values of (I - B B^T) A,
    which are their sines.
    Requires dim(A) <= dim(B); the result has dim(A) entries.
    """
    Ua, Ub = _as_basis(A), _as_basis(B)
    if Ua.shape[0] != Ub.shape[0]:
        raise DimensionMismatch(f"ambient dimensions differ: {Ua.shape[0]} vs {Ub.shape[0]}")
    if Ua.shape[1] > Ub.shape[1]:
        raise DimensionMismatch(f"dim(A)={Ua.shape[1]} exceeds dim(B)={Ub.shape[1]}")
    s = np.linalg.svd(Ua.T @ Ub, compute_uv=False)
    angles = np.sort(np.arccos(np.clip(s, 0.0, 1.0)))
    # arccos loses half the digits near 0; small angles come from the sines instead
    resid = Ua - Ub @ (Ub.T @ Ua)
    sines = np.sort(np.linalg.svd(resid, compute_uv=False))
    small = angles < np.pi / 4
    angles[small] = np.arcsin(np.clip(sines[small], 0.0, 1.0))
    return angles


def max_angle(A, B) -> float:
    """Largest principal angle between A and B."""
    return float(principal_angles(A, B)[-1])
