"""Dense symmetric linear algebra used throughout the package.

Everything here operates on small (a few hundred rows at most) dense
float64 matrices. Eigendecompositions are delegated to LAPACK through
numpy; the Cholesky factorization is written out explicitly so that
failures can report the offending pivot, which the covariance-tracking
code relies on for diagnostics.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from .validation import as_matrix, as_vector, check_symmetric

__all__ = [
    "EigResult",
    "NotPositiveDefiniteError",
    "SingularMatrixError",
    "cholesky",
    "eig_sym",
    "eig_gen_sym",
    "log_det_pd",
    "inv_sqrt_sym",
    "solve",
    "least_squares",
]


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """A matrix required to be positive definite is not.

    Attributes
    ----------
    pivot : int
        Index of the first Cholesky pivot that came out non-positive.
    """

    def __init__(self, pivot: int, name: str = "matrix"):
        self.pivot = pivot
        super().__init__(f"{name} is not positive definite (pivot {pivot} <= 0)")


class SingularMatrixError(np.linalg.LinAlgError):
    """A matrix is singular to working precision."""


class EigResult(NamedTuple):
    """Eigendecomposition with eigenvalues sorted ascending.

    ``vectors[:, k]`` is the eigenvector paired with ``values[k]``. For the
    generalized symmetric problem the vectors are orthonormal with respect
    to the right-hand matrix.
    """

    values: np.ndarray
    vectors: np.ndarray


def eig_sym(S) -> EigResult:
    """Full eigendecomposition of a symmetric matrix.

    Parameters
    ----------
    S : array_like, shape (n, n)
        Symmetric to relative tolerance 1e-12.

    Returns
    -------
    EigResult
        Ascending eigenvalues and orthonormal eigenvectors.
    """
    S = as_matrix(S, "S", square=True)
    check_symmetric(S, "S")
    values, vectors = np.linalg.eigh(S)
    return EigResult(values, vectors)


def cholesky(S) -> np.ndarray:
    """Lower-triangular G with G @ G.T == S for symmetric positive definite S.

    Raises
    ------
    NotPositiveDefiniteError
        With the index of the first non-positive pivot.
    """
    S = as_matrix(S, "S", square=True)
    check_symmetric(S, "S")
    n = S.shape[0]
    G = np.zeros_like(S)
    for j in range(n):
        d = S[j, j] - G[j, :j] @ G[j, :j]
        if not (d > 0.0) or not np.isfinite(d):
            raise NotPositiveDefiniteError(j, "S")
        G[j, j] = np.sqrt(d)
        if j + 1 < n:
            G[j + 1 :, j] = (S[j + 1 :, j] - G[j + 1 :, :j] @ G[j, :j]) / G[j, j]
    return G


def eig_gen_sym(Lm, Dm) -> EigResult:
    """Solve the generalized symmetric problem Lm @ u = lam * Dm @ u.

    Dm must be symmetric positive definite. The problem is reduced with the
    Cholesky factor Dm = G @ G.T to an ordinary symmetric eigenproblem for
    inv(G) @ Lm @ inv(G).T, and the eigenvectors are transformed back so
    that ``U.T @ Dm @ U == I``.
    """
    Lm = as_matrix(Lm, "Lm", square=True)
    Dm = as_matrix(Dm, "Dm", square=True)
    if Lm.shape != Dm.shape:
        raise ValueError(f"dimension mismatch: Lm {Lm.shape} vs Dm {Dm.shape}")
    check_symmetric(Lm, "Lm")
    G = cholesky(Dm)
    # C = inv(G) @ Lm @ inv(G).T, symmetrized to absorb roundoff.
    half = solve_triangular(G, Lm, lower=True)
    C = solve_triangular(G, half.T, lower=True).T
    C = 0.5 * (C + C.T)
    values, vectors = np.linalg.eigh(C)
    U = solve_triangular(G.T, vectors, lower=False)
    return EigResult(values, U)


def log_det_pd(S) -> float:
    """log(det(S)) for symmetric positive definite S, via Cholesky."""
    G = cholesky(S)
    return float(2.0 * np.sum(np.log(np.diag(G))))


def inv_sqrt_sym(S) -> np.ndarray:
    """Inverse symmetric square root: R with R @ S @ R == I.

    Raises
    ------
    SingularMatrixError
        If any eigenvalue falls at or below 1e-12 times the largest.
    """
    values, vectors = eig_sym(S)
    vmax = values[-1]
    if vmax <= 0.0 or values[0] <= 1e-12 * vmax:
        raise SingularMatrixError(
            f"matrix is singular to working precision (eigenvalues {values})"
        )
    return (vectors * (1.0 / np.sqrt(values))) @ vectors.T


def solve(S, b) -> np.ndarray:
    """Solve S @ x = b for symmetric positive definite S.

    ``b`` may be a vector or a matrix of stacked right-hand sides.
    """
    S = as_matrix(S, "S", square=True)
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != S.shape[0]:
        raise ValueError(f"dimension mismatch: S {S.shape} vs b {b.shape}")
    G = cholesky(S)
    y = solve_triangular(G, b, lower=True)
    return solve_triangular(G.T, y, lower=False)


def least_squares(X, y) -> np.ndarray:
    """Least-squares fit of y against the columns of X plus an intercept.

    Solves the normal equations for ``[X | 1] @ beta ~= y`` with a fixed
    ridge of 1e-10 on the diagonal for numerical safety. Returns the
    coefficients with the intercept last.
    """
    X = as_matrix(X, "X")
    y = as_vector(y, "y")
    n, k = X.shape
    if y.shape[0] != n:
        raise ValueError(f"dimension mismatch: X has {n} rows, y has {y.shape[0]}")
    if n < k + 1:
        raise ValueError(f"underdetermined system: {n} rows < {k + 1} unknowns")
    A = np.hstack([X, np.ones((n, 1))])
    gram = A.T @ A + 1e-10 * np.eye(k + 1)
    return solve(gram, A.T @ y)
