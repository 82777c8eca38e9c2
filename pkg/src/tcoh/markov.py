"""Markov-chain statistics of observed state sequences.

A frame sequence induces a chain on its states: adjacent frames form
ordered pairs, and the empirical pair distribution determines a symmetric
Laplacian whose generalized eigenvectors (against the occupancy diagonal)
carry the temporally coherent structure of the sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import linalg
from .validation import as_matrix

__all__ = [
    "MarkovStats",
    "stats_from_sequence",
    "stats_from_sequences",
    "states_from_frames",
    "objective_on_chain",
]


@dataclass(frozen=True)
class MarkovStats:
    """Empirical chain statistics for n states.

    Attributes
    ----------
    p : ndarray, shape (n,)
        Stationary distribution, estimated as the occupancy of pair
        endpoints: ``p[i] = sum_j (pair[i, j] + pair[j, i]) / 2``. Interior
        states of a walk are counted twice and the two walk endpoints once,
        which makes ``p`` sum to one exactly and gives the Laplacian exact
        zero row sums.
    pair : ndarray, shape (n, n)
        Distribution of ordered adjacent pairs; sums to one.
    laplacian : ndarray, shape (n, n)
        Symmetric positive semidefinite matrix with
        ``L[i, i] = p[i] - pair[i, i]`` and
        ``L[i, j] = -(pair[i, j] + pair[j, i]) / 2`` off the diagonal.
    """

    p: np.ndarray
    pair: np.ndarray
    laplacian: np.ndarray

    @property
    def n(self) -> int:
        return self.p.shape[0]

    @property
    def occupancy_diag(self) -> np.ndarray:
        """The diagonal matrix D with D[i, i] = p[i]."""
        return np.diag(self.p)


def _stats_from_pair(pair: np.ndarray) -> MarkovStats:
    p = 0.5 * (pair.sum(axis=1) + pair.sum(axis=0))
    sym = 0.5 * (pair + pair.T)
    laplacian = np.diag(p) - sym
    return MarkovStats(p=p, pair=pair, laplacian=laplacian)


def stats_from_sequence(states: Sequence[int], n: int) -> MarkovStats:
    """Chain statistics from one observed state sequence.

    Parameters
    ----------
    states : sequence of int
        Ordered state indices, each in ``[0, n)``, length at least 2.
    n : int
        Number of states.
    """
    return stats_from_sequences([states], n)


def stats_from_sequences(state_lists: Sequence[Sequence[int]], n: int) -> MarkovStats:
    """Chain statistics pooled over several independent state sequences.

    Adjacent pairs are counted within each sequence only; no transition is
    introduced across sequence boundaries. Each sequence must have length
    at least 2.
    """
    if n <= 0:
        raise ValueError("state count n must be positive")
    if not state_lists:
        raise ValueError("need at least one state sequence")
    counts = np.zeros((n, n), dtype=np.float64)
    total_pairs = 0
    for states in state_lists:
        idx = np.asarray(states, dtype=np.int64)
        if idx.ndim != 1 or idx.shape[0] < 2:
            raise ValueError("each state sequence must be 1-d with length >= 2")
        if idx.min() < 0 or idx.max() >= n:
            raise ValueError(f"state index out of range [0, {n})")
        np.add.at(counts, (idx[:-1], idx[1:]), 1.0)
        total_pairs += idx.shape[0] - 1
    return _stats_from_pair(counts / total_pairs)


def states_from_frames(frame_lists) -> tuple[list[np.ndarray], int]:
    """Assign a state index to every frame, merging bit-identical frames.

    A chain state is an observation value, so frames that repeat exactly
    (for example a sampled rotation returning to its start) map to the same
    state; that is what closes a revisited loop into a cycle instead of a
    path. States are numbered by first appearance.

    Returns the per-sequence state index arrays and the state count.
    """
    table: dict[bytes, int] = {}
    out = []
    for frames in frame_lists:
        states = np.empty(len(frames), dtype=np.int64)
        for i, frame in enumerate(frames):
            key = np.ascontiguousarray(np.asarray(frame, dtype=np.float64)).tobytes()
            states[i] = table.setdefault(key, len(table))
        out.append(states)
    return out, len(table)


def objective_on_chain(Y, stats: MarkovStats) -> float:
    """Temporal-coherence objective of an embedding on a chain.

    Evaluates ``2 tr(Y.T L Y) - log det(Y.T D Y - (Y.T p)(Y.T p).T)``,
    the trace/log-det form of the pairwise objective
    ``sum_ij pair[i, j] ||Y[j] - Y[i]||^2 - log det(cov_p(Y))``.

    Raises
    ------
    linalg.NotPositiveDefiniteError
        If the p-weighted covariance of the embedding is degenerate.
    """
    Y = as_matrix(Y, "Y")
    if Y.shape[0] != stats.n:
        raise ValueError(f"Y has {Y.shape[0]} rows, chain has {stats.n} states")
    smooth = 2.0 * float(np.sum((Y.T @ stats.laplacian) * Y.T))
    mean = Y.T @ stats.p
    cov = (Y.T * stats.p) @ Y - np.outer(mean, mean)
    cov = 0.5 * (cov + cov.T)
    try:
        spread = linalg.log_det_pd(cov)
    except linalg.NotPositiveDefiniteError as err:
        raise linalg.NotPositiveDefiniteError(
            err.pivot, "embedding covariance (Y may be constant or rank-deficient)"
        ) from None
    return smooth - spread
