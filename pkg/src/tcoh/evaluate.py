"""Representation-quality metrics: angle decoding, centroid localization,
and alignment between two embeddings.

Decoding fits a linear readout (with intercept) from learned outputs to
sin and cos of the ground-truth angle; localization compares the centroid
of output energy against the true object centroid. Neither touches network
internals, so the same functions serve online-trained networks and
closed-form embeddings.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import orthogonal_procrustes

from . import linalg
from .validation import as_matrix, as_vector

__all__ = [
    "DecodeResult",
    "decode_angle",
    "LocalizeResult",
    "energy_centroids",
    "localize",
    "procrustes_align",
    "pearson",
    "network_outputs",
]


@dataclass(frozen=True)
class DecodeResult:
    """Linear-readout quality for the two angle targets."""

    r2_sin: float
    r2_cos: float
    abs_error_sin: float
    abs_error_cos: float

    @property
    def r2_min(self) -> float:
        return min(self.r2_sin, self.r2_cos)

    @property
    def total_abs_error(self) -> float:
        return self.abs_error_sin + self.abs_error_cos


def _fit_target(outputs: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    beta = linalg.least_squares(outputs, target)
    pred = outputs @ beta[:-1] + beta[-1]
    resid = target - pred
    ss_res = float(resid @ resid)
    centered = target - target.mean()
    ss_tot = float(centered @ centered)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 1e-30 else 0.0
    return r2, float(np.abs(resid).sum())


def decode_angle(outputs, angles) -> DecodeResult:
    """Fit linear readouts from outputs to sin(angle) and cos(angle).

    ``outputs`` is N x d, ``angles`` the N ground-truth angles in radians.
    Reports per-target R^2 and total absolute error.
    """
    outputs = as_matrix(outputs, "outputs")
    angles = as_vector(angles, "angles")
    if len(angles) != outputs.shape[0]:
        raise ValueError(
            f"got {outputs.shape[0]} outputs for {len(angles)} angles"
        )
    r2_sin, err_sin = _fit_target(outputs, np.sin(angles))
    r2_cos, err_cos = _fit_target(outputs, np.cos(angles))
    return DecodeResult(r2_sin, r2_cos, err_sin, err_cos)


@dataclass(frozen=True)
class LocalizeResult:
    """Correlation between predicted and true centroids."""

    corr_row: float
    corr_col: float
    predicted: np.ndarray

    @property
    def corr_mean(self) -> float:
        return 0.5 * (self.corr_row + self.corr_col)


def pearson(a, b) -> float:
    """Pearson correlation, defined as 0 when either side is constant."""
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    da = a - a.mean()
    db = b - b.mean()
    denom = np.linalg.norm(da) * np.linalg.norm(db)
    if denom < 1e-30:
        warnings.warn("constant input to correlation; reporting 0", stacklevel=2)
        return 0.0
    return float(da @ db / denom)


def energy_centroids(outputs: np.ndarray) -> np.ndarray:
    """Centroid of per-frame output energy for a stack of feature maps.

    ``outputs`` is (N, C, H, W). Energy at a pixel is the squared deviation
    from the temporal mean, summed over channels; the centroid is the
    energy-weighted mean (row, col). A frame with no energy falls back to
    the image center.
    """
    outputs = np.asarray(outputs, dtype=np.float64)
    if outputs.ndim != 4:
        raise ValueError(f"expected (N, C, H, W) outputs, got shape {outputs.shape}")
    n, _, h, w = outputs.shape
    energy = ((outputs - outputs.mean(axis=0)) ** 2).sum(axis=1)
    rows = np.arange(h)
    cols = np.arange(w)
    total = energy.sum(axis=(1, 2))
    centroids = np.tile([(h - 1) / 2.0, (w - 1) / 2.0], (n, 1))
    ok = total > 1e-30
    if ok.any():
        centroids[ok, 0] = (energy[ok] * rows[None, :, None]).sum(axis=(1, 2)) / total[ok]
        centroids[ok, 1] = (energy[ok] * cols[None, None, :]).sum(axis=(1, 2)) / total[ok]
    return centroids


def localize(outputs, centroids) -> LocalizeResult:
    """Correlate output-energy centroids with ground-truth centroids.

    ``outputs`` is (N, C, H, W); ``centroids`` is N x 2 (row, col). Feature
    maps need not share the image's size or origin: Pearson correlation is
    invariant to the affine offset and scale a valid-padding stack applies.
    """
    centroids = as_matrix(centroids, "centroids")
    if centroids.shape[1] != 2:
        raise ValueError(f"centroids must be N x 2, got {centroids.shape}")
    predicted = energy_centroids(outputs)
    if predicted.shape[0] != centroids.shape[0]:
        raise ValueError(
            f"got {predicted.shape[0]} outputs for {centroids.shape[0]} centroids"
        )
    return LocalizeResult(
        corr_row=pearson(predicted[:, 0], centroids[:, 0]),
        corr_col=pearson(predicted[:, 1], centroids[:, 1]),
        predicted=predicted,
    )


def procrustes_align(source, target) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonally align ``source`` to ``target`` after centering both.

    Returns (aligned_source, rotation) where aligned = centered_source @
    rotation minimizes the Frobenius distance to the centered target over
    orthogonal matrices.
    """
    source = as_matrix(source, "source")
    target = as_matrix(target, "target")
    if source.shape != target.shape:
        raise ValueError(f"shape mismatch: {source.shape} vs {target.shape}")
    src = source - source.mean(axis=0)
    tgt = target - target.mean(axis=0)
    rotation, _ = orthogonal_procrustes(src, tgt)
    return src @ rotation, rotation


def network_outputs(net, frames) -> np.ndarray:
    """Stack the network's forward outputs over a list of frames.

    Pure inference: UL statistics are not touched.
    """
    outs = [net.forward(np.asarray(f, dtype=np.float64)) for f in frames]
    if not outs:
        raise ValueError("no frames given")
    return np.stack(outs)
