"""Unsupervised-learning layers and the online training loop.

A UL layer watches the output of a regular layer and maintains two
exponential moving averages (a fast one at rate mu and a slow one at rate
eps) together with the matching covariances: W tracks deviations of the
output from the fast average, B tracks deviations of the fast average from
the slow one. At every forward step the layer emits a local gradient

    inv(W + ridge*I) @ (y - y_fast) - inv(B + ridge*I) @ (y_fast - y_slow)

which, descended, pulls the output toward its short-term average while
pushing the short-term average away from the long-term one. Contracting W
while expanding B is what extracts temporally coherent features without
collapsing them to a constant.

The segment-mean batch form of the same objective lives here too; its
analytic gradient is the oracle the online rule is validated against.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import linalg
from .nn import Network, SgdConfig
from .validation import as_array, as_matrix

__all__ = [
    "UlHyper",
    "UlVecState",
    "UlConvState",
    "UlAttachment",
    "combine_gradients",
    "mu_schedule",
    "batch_objective",
    "batch_gradient",
    "DivergenceError",
    "MetricsRow",
    "train_online",
]


@dataclass(frozen=True)
class UlHyper:
    """Hyperparameters of one UL layer.

    mu is the fast averaging rate, eps the slow one (eps must be well below
    mu for the two statistics to separate time scales). ridge is added to
    the covariance diagonals at solve time only; combine_weight scales the
    local gradient when it is merged with the gradient arriving from upper
    layers.
    """

    mu: float = 0.5
    eps: float = 0.001
    ridge: float = 1e-6
    combine_weight: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.mu <= 1.0:
            raise ValueError("mu must be in (0, 1]")
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must be in (0, 1)")
        if self.eps >= self.mu:
            raise ValueError("eps must be smaller than mu")
        if self.ridge <= 0.0:
            raise ValueError("ridge must be positive")
        if self.combine_weight < 0.0:
            raise ValueError("combine_weight must be non-negative")


def mu_schedule(mu_top: float, n_layers: int) -> list[float]:
    """Default per-depth fast rates: doubled per step toward the input.

    Index 0 is the UL layer closest to the input, the last entry the one at
    the top. Values are clamped to at most 1.
    """
    if n_layers < 1:
        raise ValueError("n_layers must be positive")
    return [min(1.0, mu_top * 2.0 ** (n_layers - 1 - i)) for i in range(n_layers)]


class UlVecState:
    """Running statistics for a fully connected output of dimension d.

    The first observed output initializes both averages (so the initial
    deviations vanish) and the covariances start at the identity. Explicit
    initial values can be supplied instead.
    """

    kind = "ul_vec"

    def __init__(self, dim: int, *, y_hat=None, y_bar=None, W=None, B=None):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.t = 0
        self.initialized = False
        self.y_hat = np.zeros(dim)
        self.y_bar = np.zeros(dim)
        self.W = np.eye(dim)
        self.B = np.eye(dim)
        explicit = [v is not None for v in (y_hat, y_bar, W, B)]
        if any(explicit):
            if not all(explicit):
                raise ValueError("provide all of y_hat, y_bar, W, B or none")
            self.y_hat = as_array(y_hat, "y_hat").reshape(dim).copy()
            self.y_bar = as_array(y_bar, "y_bar").reshape(dim).copy()
            self.W = as_matrix(W, "W", square=True).copy()
            self.B = as_matrix(B, "B", square=True).copy()
            self.initialized = True

    def reset(self) -> None:
        """Forget all statistics; the next forward call re-initializes."""
        self.t = 0
        self.initialized = False
        self.y_hat.fill(0.0)
        self.y_bar.fill(0.0)
        self.W = np.eye(self.dim)
        self.B = np.eye(self.dim)

    def forward(self, y: np.ndarray, h: UlHyper) -> np.ndarray:
        """Update averages then covariances, return the local gradient."""
        y = as_array(y, "y")
        if y.shape != (self.dim,):
            raise ValueError(f"expected output of shape ({self.dim},), got {y.shape}")
        if not self.initialized:
            self.y_hat = y.copy()
            self.y_bar = y.copy()
            self.initialized = True
        self.y_hat = (1.0 - h.mu) * self.y_hat + h.mu * y
        self.y_bar = (1.0 - h.eps) * self.y_bar + h.eps * y
        d_fast = y - self.y_hat
        self.W = (1.0 - h.mu) * self.W + h.mu * np.outer(d_fast, d_fast)
        d_slow = self.y_hat - self.y_bar
        self.B = (1.0 - h.eps) * self.B + h.eps * np.outer(d_slow, d_slow)
        self.t += 1
        ridge = h.ridge * np.eye(self.dim)
        return linalg.solve(self.W + ridge, d_fast) - linalg.solve(self.B + ridge, d_slow)

    def state_arrays(self):
        return [self.y_hat, self.y_bar, self.W, self.B]


class UlConvState:
    """Running statistics for a convolutional output of shape (C, H, W).

    Averages are kept per location; covariances are reduced per channel.
    With ``full_cov=False`` (the default) each channel keeps a scalar
    variance of its spatial deviations; with ``full_cov=True`` a full C x C
    covariance over spatial samples is tracked instead.
    """

    kind = "ul_conv"

    def __init__(self, shape: tuple[int, int, int], *, full_cov: bool = False):
        if len(shape) != 3 or any(s < 1 for s in shape):
            raise ValueError(f"shape must be (C, H, W) with positive extents, got {shape}")
        self.shape = tuple(int(s) for s in shape)
        self.full_cov = bool(full_cov)
        self.t = 0
        self.initialized = False
        c = self.shape[0]
        self.y_hat = np.zeros(self.shape)
        self.y_bar = np.zeros(self.shape)
        if self.full_cov:
            self.w_var = np.eye(c)
            self.b_var = np.eye(c)
        else:
            self.w_var = np.ones(c)
            self.b_var = np.ones(c)

    def reset(self) -> None:
        c = self.shape[0]
        self.t = 0
        self.initialized = False
        self.y_hat.fill(0.0)
        self.y_bar.fill(0.0)
        if self.full_cov:
            self.w_var = np.eye(c)
            self.b_var = np.eye(c)
        else:
            self.w_var = np.ones(c)
            self.b_var = np.ones(c)

    def forward(self, y: np.ndarray, h: UlHyper) -> np.ndarray:
        y = as_array(y, "y")
        if y.shape != self.shape:
            raise ValueError(f"expected output of shape {self.shape}, got {y.shape}")
        if not self.initialized:
            self.y_hat = y.copy()
            self.y_bar = y.copy()
            self.initialized = True
        self.y_hat = (1.0 - h.mu) * self.y_hat + h.mu * y
        self.y_bar = (1.0 - h.eps) * self.y_bar + h.eps * y
        d_fast = y - self.y_hat
        d_slow = self.y_hat - self.y_bar
        c = self.shape[0]
        if self.full_cov:
            flat_f = d_fast.reshape(c, -1)
            flat_s = d_slow.reshape(c, -1)
            n_loc = flat_f.shape[1]
            self.w_var = (1.0 - h.mu) * self.w_var + h.mu * (flat_f @ flat_f.T) / n_loc
            self.b_var = (1.0 - h.eps) * self.b_var + h.eps * (flat_s @ flat_s.T) / n_loc
            ridge = h.ridge * np.eye(c)
            g_fast = linalg.solve(self.w_var + ridge, flat_f)
            g_slow = linalg.solve(self.b_var + ridge, flat_s)
            grad = (g_fast - g_slow).reshape(self.shape)
        else:
            self.w_var = (1.0 - h.mu) * self.w_var + h.mu * (d_fast**2).mean(axis=(1, 2))
            self.b_var = (1.0 - h.eps) * self.b_var + h.eps * (d_slow**2).mean(axis=(1, 2))
            grad = d_fast / (self.w_var + h.ridge)[:, None, None] - d_slow / (
                self.b_var + h.ridge
            )[:, None, None]
        self.t += 1
        return grad

    def state_arrays(self):
        return [self.y_hat, self.y_bar, self.w_var, self.b_var]


@dataclass
class UlAttachment:
    """Pairs a UL state with its hyperparameters for one network layer."""

    state: UlVecState | UlConvState
    hyper: UlHyper


def combine_gradients(local_grad, upstream_grad, h: UlHyper) -> np.ndarray:
    """Merge a UL layer's local gradient into the backpropagated one.

    Returns ``upstream_grad + combine_weight * local_grad``. With a zero
    upstream gradient the UL layer acts as the topmost cost layer.
    """
    local_grad = np.asarray(local_grad, dtype=np.float64)
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if local_grad.shape != upstream_grad.shape:
        raise ValueError(
            f"shape mismatch: local {local_grad.shape}, upstream {upstream_grad.shape}"
        )
    return upstream_grad + h.combine_weight * local_grad


# ---------------------------------------------------------------------------
# Batch (segment-mean) form of the objective; gradient-check oracle.
# ---------------------------------------------------------------------------


def _segment_stats(outputs: np.ndarray, segments):
    n, d = outputs.shape
    covered = np.zeros(n, dtype=bool)
    seg_ranges = []
    for lo, hi in segments:
        if not (0 <= lo < hi <= n) or hi - lo < 2:
            raise ValueError(f"segment ({lo}, {hi}) is degenerate or out of range")
        if covered[lo:hi].any():
            raise ValueError(f"segment ({lo}, {hi}) overlaps another segment")
        covered[lo:hi] = True
        seg_ranges.append((lo, hi))
    if not covered.all():
        raise ValueError("segments must partition all rows")

    global_mean = outputs.mean(axis=0)
    W = np.zeros((d, d))
    B = np.zeros((d, d))
    seg_means = {}
    for lo, hi in seg_ranges:
        block = outputs[lo:hi]
        m = block.mean(axis=0)
        seg_means[(lo, hi)] = m
        dev = block - m
        W += dev.T @ dev
        dm = m - global_mean
        B += (hi - lo) * np.outer(dm, dm)
    W /= n
    B /= n
    return W, B, seg_means, global_mean


def batch_objective(outputs, segments, ridge: float = 1e-6) -> float:
    """Half the log-det gap between within-segment and between-segment covariance.

    ``outputs`` is N x d; ``segments`` lists half-open index ranges
    ``(lo, hi)`` that partition the rows, each of length at least 2. With
    W the pooled covariance around segment means and B the covariance of
    segment means around the global mean, returns

        0.5 * (log det(W + ridge*I) - log det(B + ridge*I))
    """
    outputs = as_matrix(outputs, "outputs")
    W, B, _, _ = _segment_stats(outputs, segments)
    eye = ridge * np.eye(outputs.shape[1])
    return 0.5 * (linalg.log_det_pd(W + eye) - linalg.log_det_pd(B + eye))


def batch_gradient(outputs, segments, ridge: float = 1e-6) -> np.ndarray:
    """Analytic gradient of ``batch_objective`` with respect to each output row.

    Row j belonging to segment i equals

        (1/N) * (inv(W + ridge*I) @ (y_j - mean_i) - inv(B + ridge*I) @ (mean_i - mean))
    """
    outputs = as_matrix(outputs, "outputs")
    n, d = outputs.shape
    W, B, seg_means, global_mean = _segment_stats(outputs, segments)
    eye = ridge * np.eye(d)
    grad = np.zeros_like(outputs)
    for (lo, hi), m in seg_means.items():
        dev = outputs[lo:hi] - m
        fast = linalg.solve(W + eye, dev.T).T
        slow = linalg.solve(B + eye, m - global_mean)
        grad[lo:hi] = (fast - slow) / n
    return grad


# ---------------------------------------------------------------------------
# Online training loop.
# ---------------------------------------------------------------------------


class DivergenceError(RuntimeError):
    """Raised when a parameter becomes non-finite during training."""

    def __init__(self, epoch: int, frame: int):
        self.epoch = epoch
        self.frame = frame
        super().__init__(f"non-finite parameter at epoch {epoch}, frame {frame}")


@dataclass(frozen=True)
class MetricsRow:
    """Per-epoch training metrics."""

    epoch: int
    ul_grad_norms: tuple[float, ...]
    eval_metric: float | None
    seconds: float


def train_online(
    net: Network,
    dataset,
    cfg: SgdConfig,
    *,
    epochs: int,
    grad_sign: float = 1.0,
    reset_per_sequence: bool = True,
    noise_level: float = 0.0,
    seed: int = 0,
    eval_fn=None,
    epoch_offset: int = 0,
) -> list[MetricsRow]:
    """Train a network online, one frame at a time.

    For every sequence and frame, the forward pass runs through the regular
    layers; each attached UL layer updates its statistics from the layer
    output and emits its local gradient. The backward pass then walks the
    stack top-down, merging local gradients where attached, and the
    parameters are updated immediately after each frame.

    Parameters
    ----------
    net : Network
        Layers with UL attachments in ``net.ul``. At least one attachment
        is required, otherwise there is no training signal.
    dataset : SequenceDataset
        Ordered sequences of frames; statistics are re-initialized at each
        sequence boundary when ``reset_per_sequence`` is set (sequences are
        treated as independent clips).
    cfg : SgdConfig
        Optimizer settings, applied per frame.
    epochs : int
        Number of passes over the dataset.
    grad_sign : float
        Multiplier on every local gradient before it enters the backward
        pass; the default descends the local objective.
    noise_level : float
        If positive, fresh zero-mean Gaussian noise is added to every input
        frame, resampled each epoch. The per-coordinate standard deviation
        is ``noise_level`` times the per-coordinate deviation of the clean
        frames, matching the generator's convention.
    seed : int
        Drives the per-epoch noise stream only; parameter initialization
        happens at network construction.
    eval_fn : callable, optional
        Called as ``eval_fn(net)`` after every epoch; its float result is
        recorded in the metrics.
    epoch_offset : int
        First epoch number, nonzero when resuming from a checkpoint. The
        noise stream of epoch k is the same whether or not the run was
        interrupted before k.

    Returns
    -------
    list of MetricsRow
    """
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    if epoch_offset < 0:
        raise ValueError("epoch_offset must be non-negative")
    if not any(att is not None for att in net.ul):
        raise ValueError("network has no UL attachments; nothing drives training")
    sequences = dataset.sequences
    if not sequences or all(len(s.frames) == 0 for s in sequences):
        raise ValueError("dataset is empty")

    noise_scale = None
    if noise_level > 0.0:
        stacked = np.concatenate([np.stack(s.frames) for s in sequences], axis=0)
        noise_scale = noise_level * stacked.std(axis=0)

    metrics: list[MetricsRow] = []
    for epoch in range(epoch_offset, epoch_offset + epochs):
        t0 = time.perf_counter()
        rng = np.random.default_rng([seed, epoch]) if noise_scale is not None else None
        grad_norm_sums = [0.0] * len(net.layers)
        frames_seen = 0
        for seq in sequences:
            if reset_per_sequence:
                for att in net.ul:
                    if att is not None:
                        att.state.reset()
            for frame_idx, frame in enumerate(seq.frames):
                x = frame
                if rng is not None:
                    x = x + rng.normal(0.0, 1.0, size=x.shape) * noise_scale
                # Forward, caching layer inputs and UL local gradients.
                inputs = []
                local_grads = [None] * len(net.layers)
                a = x
                for i, layer in enumerate(net.layers):
                    inputs.append(a)
                    a = layer.forward(a)
                    att = net.ul[i]
                    if att is not None:
                        lg = att.state.forward(a, att.hyper)
                        local_grads[i] = lg
                        grad_norm_sums[i] += float(np.linalg.norm(lg))
                # Backward with immediate per-layer updates.
                g = np.zeros_like(a)
                for i in range(len(net.layers) - 1, -1, -1):
                    att = net.ul[i]
                    if att is not None:
                        g = combine_gradients(grad_sign * local_grads[i], g, att.hyper)
                    g, param_grads = net.layers[i].backward(inputs[i], g)
                    net.layers[i].apply_gradients(param_grads, cfg)
                frames_seen += 1
                if not net.params_finite():
                    raise DivergenceError(epoch, frame_idx)
        ul_norms = tuple(
            grad_norm_sums[i] / max(frames_seen, 1)
            for i in range(len(net.layers))
            if net.ul[i] is not None
        )
        value = float(eval_fn(net)) if eval_fn is not None else None
        metrics.append(
            MetricsRow(
                epoch=epoch,
                ul_grad_norms=ul_norms,
                eval_metric=value,
                seconds=time.perf_counter() - t0,
            )
        )
    return metrics
