"""Closed-form embedding of a chain via its generalized eigenvectors.

The global minimizer of the temporal-coherence objective on a chain is
``Y = U (2 U.T L U)^{-1/2} R`` where the columns of U are the generalized
eigenvectors of the Laplacian L against the occupancy diagonal D belonging
to the d smallest nonzero eigenvalues, and R is an arbitrary rotation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .markov import MarkovStats
from .validation import as_matrix

__all__ = ["ClosedFormResult", "closed_form_embedding", "stationarity_residual"]

# Generalized eigenvalues at or below this fraction of the largest are
# treated as the kernel (constant vector plus any disconnected components).
ZERO_EIGENVALUE_RTOL = 1e-10


@dataclass(frozen=True)
class ClosedFormResult:
    """Optimal embedding of a chain.

    Attributes
    ----------
    embedding : ndarray, shape (n, d)
        One row per state.
    eigenvectors : ndarray, shape (n, d)
        Selected generalized eigenvectors, D-orthonormal columns.
    eigenvalues : ndarray, shape (d,)
        The d smallest nonzero generalized eigenvalues, ascending.
    objective : float
        Value of the temporal-coherence objective at the optimum,
        ``d + log det(2 diag(eigenvalues))``.
    """

    embedding: np.ndarray
    eigenvectors: np.ndarray
    eigenvalues: np.ndarray
    objective: float


def closed_form_embedding(
    stats: MarkovStats, n_components: int, rotation=None
) -> ClosedFormResult:
    """Compute the optimal d-dimensional embedding of a chain.

    Parameters
    ----------
    stats : MarkovStats
        Chain statistics. Every state must have positive occupancy.
    n_components : int
        Embedding dimension d, at most n - 1.
    rotation : array_like, shape (d, d), optional
        Orthonormal matrix applied on the right; defaults to the identity.

    Raises
    ------
    linalg.SingularMatrixError
        If fewer than d nonzero generalized eigenvalues exist; the message
        reports the full spectrum.
    """
    d = int(n_components)
    n = stats.n
    if d < 1 or d > n - 1:
        raise ValueError(f"n_components must be in [1, {n - 1}], got {d}")
    if rotation is not None:
        rotation = as_matrix(rotation, "rotation", square=True)
        if rotation.shape[0] != d:
            raise ValueError(f"rotation must be {d}x{d}, got {rotation.shape}")
        if np.abs(rotation @ rotation.T - np.eye(d)).max() > 1e-10:
            raise ValueError("rotation is not orthonormal")

    values, vectors = linalg.eig_gen_sym(stats.laplacian, stats.occupancy_diag)
    threshold = ZERO_EIGENVALUE_RTOL * max(values[-1], 0.0)
    nonzero = np.flatnonzero(values > threshold)
    if nonzero.shape[0] < d:
        raise linalg.SingularMatrixError(
            f"chain has only {nonzero.shape[0]} nonzero generalized eigenvalues, "
            f"need {d}; spectrum: {values}"
        )
    keep = nonzero[:d]
    U = vectors[:, keep]
    lambdas = values[keep]

    M = 2.0 * (U.T @ stats.laplacian @ U)
    M = 0.5 * (M + M.T)
    Y = U @ linalg.inv_sqrt_sym(M)
    if rotation is not None:
        Y = Y @ rotation
    objective = d + float(np.sum(np.log(2.0 * lambdas)))
    return ClosedFormResult(
        embedding=Y, eigenvectors=U, eigenvalues=lambdas, objective=objective
    )


def stationarity_residual(result: ClosedFormResult, stats: MarkovStats) -> float:
    """Frobenius norm of the first-order optimality condition.

    At a stationary point of the objective,
    ``4 L Y - 2 (D - p p.T) Y inv(sigma)`` vanishes, where
    ``sigma = Y.T D Y - (Y.T p)(Y.T p).T`` is the p-weighted covariance of
    the embedding.
    """
    Y = result.embedding
    L = stats.laplacian
    p = stats.p
    mean = Y.T @ p
    sigma = (Y.T * p) @ Y - np.outer(mean, mean)
    sigma = 0.5 * (sigma + sigma.T)
    centered = (Y * p[:, None]) - np.outer(p, mean)
    residual = 4.0 * (L @ Y) - 2.0 * linalg.solve(sigma, centered.T).T
    return float(np.linalg.norm(residual))
