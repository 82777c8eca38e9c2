"""Finite-difference gradient checks for every backward pass.

Each suite builds a small random instance, evaluates a scalar loss, and
compares the analytic gradients against central differences. Layer losses
are random linear functionals of the layer output, which exercises the
full Jacobian transpose; the batch objective is checked directly against
its analytic gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Conv2dLayer, LinearLayer, TanhLayer
from .ul import batch_gradient, batch_objective

__all__ = [
    "fd_gradient",
    "rel_error",
    "CheckResult",
    "check_linear",
    "check_conv2d",
    "check_tanh",
    "check_batch",
    "run_all",
    "LAYER_TOL",
    "BATCH_TOL",
]

LAYER_TOL = 1e-6
BATCH_TOL = 1e-5


def fd_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``x`` is perturbed in place one entry at a time and restored, so ``f``
    may close over the same array.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f()
        flat[i] = orig - h
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst-case elementwise error, relative above unit magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / scale).max())


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def _check_layer(layer, x: np.ndarray, rng, grads_order, corrupt: bool = False):
    """Compare backward() against finite differences of c . forward(x)."""
    c = rng.normal(size=layer.forward(x).shape)

    def loss():
        return float((c * layer.forward(x)).sum())

    grad_x, param_grads = layer.backward(x, c)
    if corrupt:
        grad_x = grad_x + 1e-3
    worst = rel_error(grad_x, fd_gradient(loss, x))
    for name in grads_order:
        analytic = param_grads[name]
        numeric = fd_gradient(loss, getattr(layer, name))
        worst = max(worst, rel_error(analytic, numeric))
    return worst


def check_linear(seed: int = 0, corrupt: bool = False) -> CheckResult:
    rng = np.random.default_rng(seed)
    layer = LinearLayer(3, 5, rng)
    x = rng.normal(size=3)
    err = _check_layer(layer, x, rng, ("weight", "bias"), corrupt)
    return CheckResult("linear_backward", err, LAYER_TOL)


def check_conv2d(seed: int = 0, padding: str = "valid") -> CheckResult:
    rng = np.random.default_rng(seed)
    layer = Conv2dLayer(2, 3, 3, padding=padding, rng=rng)
    x = rng.normal(size=(2, 6, 7))
    err = _check_layer(layer, x, rng, ("kernels", "bias"))
    return CheckResult(f"conv2d_backward[{padding}]", err, LAYER_TOL)


def check_tanh(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    layer = TanhLayer()
    x = rng.normal(size=(4,))
    err = _check_layer(layer, x, rng, ())
    return CheckResult("tanh_backward", err, 1e-8)


def check_batch(seed: int = 0, n: int = 16, d: int = 3, n_segments: int = 4) -> CheckResult:
    """batch_gradient vs central differences of batch_objective.

    The default uses more segments than output dimensions; with fewer, the
    between-means covariance is rank deficient and the finite-difference
    comparison picks up truncation error from the ridge-dominated
    direction rather than anything about the analytic gradient.
    """
    rng = np.random.default_rng(seed)
    cuts = np.sort(rng.choice(np.arange(2, n - 1, 2), size=n_segments - 1, replace=False))
    bounds = [0, *cuts.tolist(), n]
    segments = list(zip(bounds[:-1], bounds[1:]))
    outputs = rng.normal(size=(n, d))

    analytic = batch_gradient(outputs, segments)
    numeric = fd_gradient(lambda: batch_objective(outputs, segments), outputs, h=1e-6)
    return CheckResult(f"batch_gradient[n={n},d={d}]", rel_error(analytic, numeric), BATCH_TOL)


def run_all(seed: int = 0, corrupt: bool = False) -> list[CheckResult]:
    """Run every gradient-check suite once.

    ``corrupt`` deliberately damages one analytic gradient; it exists so
    the failure path (exit code, report) can itself be tested.
    """
    return [
        check_linear(seed, corrupt=corrupt),
        check_conv2d(seed, padding="valid"),
        check_conv2d(seed + 1, padding="same"),
        check_tanh(seed),
        check_batch(seed),
    ]
