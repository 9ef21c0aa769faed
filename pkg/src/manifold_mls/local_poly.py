"""Local polynomial least squares from R^d to R^m.

Monomials are kept in graded-lexicographic order: all monomials of total
degree 0, then degree 1 (x_1, ..., x_d), then degree 2 (x_1^2, x_1 x_2, ...,
x_d^2) and so on, matching ``itertools.combinations_with_replacement``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement
from math import comb

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, IllConditioned, InsufficientSamples

MAX_CONDITION = 1e12


def basis_size(d: int, degree: int) -> int:
    return comb(d + degree, degree)


@lru_cache(maxsize=None)
def monomial_table(d: int, degree: int):
    """Exponent matrix (B x d), total degrees (B,) and parent links.

    ``parent[j], var[j]`` give the monomial of one lower degree and the
    variable it is multiplied by to produce monomial j (-1 for the constant).
    """
    exps, degs, parent, var = [np.zeros(d, dtype=int)], [0], [-1], [-1]
    index = {(): 0}
    for deg in range(1, degree + 1):
        for combo in combinations_with_replacement(range(d), deg):
            e = np.zeros(d, dtype=int)
            for i in combo:
                e[i] += 1
            index[combo] = len(exps)
            exps.append(e)
            degs.append(deg)
            # drop the last factor; the remaining combo is sorted, hence already indexed
            parent.append(index[combo[:-1]])
            var.append(combo[-1])
    out = (np.array(exps), np.array(degs), np.array(parent), np.array(var))
    for a in out:
        a.setflags(write=False)
    return out


def design_matrix(X, degree: int) -> np.ndarray:
    """Monomial values for each row of X, built degree by degree from lower blocks."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N, d = X.shape
    _, _, parent, var = monomial_table(d, degree)
    Phi = np.empty((N, parent.size))
    Phi[:, 0] = 1.0
    for j in range(1, parent.size):
        Phi[:, j] = Phi[:, parent[j]] * X[:, var[j]]
    return Phi


@dataclass(frozen=True, eq=False)
class MultiPolynomial:
    """Polynomial map R^d -> R^m of total degree <= ``degree``.

    ``coeffs`` is (m x B) with columns in graded-lexicographic monomial order.
    """

    intrinsic_dim: int
    out_dim: int
    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.coeffs, dtype=float)
        B = basis_size(self.intrinsic_dim, self.degree)
        if C.shape != (self.out_dim, B):
            raise DimensionMismatch(f"coeffs must be ({self.out_dim}, {B}), got {C.shape}")
        C = C.copy()
        C.setflags(write=False)
        object.__setattr__(self, "coeffs", C)

    @property
    def n_terms(self) -> int:
        return self.coeffs.shape[1]

    def exponents(self) -> np.ndarray:
        return monomial_table(self.intrinsic_dim, self.degree)[0]

    def __call__(self, x):
        return eval_poly(self, x)

    def to_dict(self) -> dict:
        return {
            "intrinsic_dim": self.intrinsic_dim,
            "out_dim": self.out_dim,
            "degree": self.degree,
            "monomial_order": "graded-lex",
            "coeffs": [float(c) for c in self.coeffs.ravel()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, rec: dict) -> "MultiPolynomial":
        d, m, deg = int(rec["intrinsic_dim"]), int(rec["out_dim"]), int(rec["degree"])
        C = np.asarray(rec["coeffs"], dtype=float).reshape(m, basis_size(d, deg))
        return cls(d, m, deg, C)


@dataclass(frozen=True)
class FitDiagnostics:
    n_used: int
    condition_estimate: float
    residual_rms: float
    used_median_of_means: bool


def eval_poly(p: MultiPolynomial, x) -> np.ndarray:
    """Evaluate p at one point (shape (d,)) or at rows of an (N, d) array."""
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    X = x.reshape(1, -1) if single else x
    if X.shape[1] != p.intrinsic_dim:
        raise DimensionMismatch(f"x has dimension {X.shape[1]}, polynomial expects {p.intrinsic_dim}")
    out = design_matrix(X, p.degree) @ p.coeffs.T
    return out[0] if single else out


def differential_at_zero(p: MultiPolynomial) -> np.ndarray:
    """Jacobian (m x d) at the origin: the coefficients of the linear monomials."""
    if p.degree < 1:
        return np.zeros((p.out_dim, p.intrinsic_dim))
    return np.array(p.coeffs[:, 1 : 1 + p.intrinsic_dim])


def jacobian(p: MultiPolynomial, x) -> np.ndarray:
    """Jacobian (m x d) of p at an arbitrary point x."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != p.intrinsic_dim:
        raise DimensionMismatch(f"x has dimension {x.shape[0]}, polynomial expects {p.intrinsic_dim}")
    E = p.exponents()
    J = np.zeros((p.out_dim, p.intrinsic_dim))
    for i in range(p.intrinsic_dim):
        Ei = E.copy()
        has = Ei[:, i] > 0
        Ei[has, i] -= 1
        dmono = np.where(has, E[:, i] * np.prod(x ** Ei, axis=1), 0.0)
        J[:, i] = p.coeffs @ dmono
    return J


def graph_tangent_columns(p: MultiPolynomial) -> np.ndarray:
    """Columns [I_d; J] spanning the tangent of x -> (x, p(x)) at 0."""
    return np.vstack([np.eye(p.intrinsic_dim), differential_at_zero(p)])


def bandwidth(n: int, k: int, d: int, c: float = 1.0, mode: str = "rate_consistent") -> float:
    """Step-2 fitting radius eps_n = c * n^(-1/(2k+d)) (or n^(-1/(2k+1)) in ``paper_literal`` mode)."""
    if n < 1 or k < 1 or d < 1:
        raise ValueError(f"need n, k, d >= 1 (got n={n}, k={k}, d={d})")
    if not c > 0:
        raise ValueError(f"bandwidth scale must be positive, got {c}")
    if mode == "rate_consistent":
        expo = 1.0 / (2 * k + d)
    elif mode == "paper_literal":
        expo = 1.0 / (2 * k + 1)
    else:
        raise ValueError(f"unknown bandwidth mode {mode!r}")
    # through log2 so that powers of two come out exact (1024^(-1/5) = 0.25)
    return float(c * 2.0 ** (-expo * math.log2(n)))


def _lstsq_scaled(Xs, Y, degree, weights=None):
    """Pivoted-QR least squares in scaled coordinates. Returns coefficients (B x m) and cond."""
    Phi = design_matrix(Xs, degree)
    if weights is not None:
        sw = np.sqrt(weights)[:, None]
        Phi, Y = Phi * sw, Y * sw
    Q, R, piv = scipy.linalg.qr(Phi, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    cond = np.inf if diag[-1] == 0 else float(diag[0] / diag[-1])
    if not cond <= MAX_CONDITION:
        raise IllConditioned(f"design matrix condition estimate {cond:.3g} exceeds {MAX_CONDITION:g}")
    sol = scipy.linalg.solve_triangular(R, Q.T @ Y)
    coef = np.empty_like(sol)
    coef[piv] = sol
    return coef, cond


def fit(xs, ys, degree: int, mom_blocks: int | None = None, *, scale: float | None = None,
        weights=None, seed: int = 0):
    """Least-squares polynomial of total degree <= ``degree`` mapping xs to ys.

    Monomials are evaluated in ``x / scale`` (default: the largest |x|) and the
    coefficients are unscaled afterwards, which keeps small-bandwidth fits well
    conditioned.

    With ``mom_blocks = b > 1`` the data are split into b random blocks of
    near-equal size, each block is fitted, and the coefficientwise median is
    returned. ``weights`` multiplies each squared residual.

    Returns ``(MultiPolynomial, FitDiagnostics)``.
    """
    X = np.asarray(xs, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    Y = np.asarray(ys, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    N, d = X.shape
    if Y.shape[0] != N:
        raise DimensionMismatch(f"{N} inputs but {Y.shape[0]} outputs")
    B = basis_size(d, degree)
    if N < B:
        raise InsufficientSamples(f"{N} samples for {B} monomials")
    w = None if weights is None else np.asarray(weights, dtype=float).reshape(-1)

    if scale is None:
        scale = float(np.max(np.linalg.norm(X, axis=1))) if N else 1.0
    if not scale > 0:
        scale = 1.0
    Xs = X / scale

    b = 1 if mom_blocks is None else int(mom_blocks)
    if b <= 1:
        coef, cond = _lstsq_scaled(Xs, Y, degree, w)
    else:
        blocks = np.array_split(np.random.default_rng(seed).permutation(N), b)
        if min(len(blk) for blk in blocks) < B:
            raise InsufficientSamples(f"{N} samples cannot fill {b} blocks of {B}")
        fits = [_lstsq_scaled(Xs[blk], Y[blk], degree, None if w is None else w[blk]) for blk in blocks]
        coef = np.median(np.stack([f[0] for f in fits]), axis=0)
        cond = max(f[1] for f in fits)

    _, degs, _, _ = monomial_table(d, degree)
    coef = coef / (scale ** degs)[:, None]
    poly = MultiPolynomial(d, Y.shape[1], degree, coef.T)
    resid = Y - design_matrix(X, degree) @ coef
    rms = float(np.sqrt(np.mean(resid ** 2))) if resid.size else 0.0
    return poly, FitDiagnostics(N, cond, rms, b > 1)
