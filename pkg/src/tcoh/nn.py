"""Minimal neural-network layers with explicit forward and backward passes.

One frame at a time, float64 throughout. Layers cache nothing; backward
passes take the forward input explicitly, which keeps every pass a pure
function of its arguments and makes finite-difference checking direct.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import as_array

__all__ = [
    "SgdConfig",
    "sgd_step",
    "LinearLayer",
    "Conv2dLayer",
    "TanhLayer",
    "Network",
    "glorot_uniform",
]


@dataclass(frozen=True)
class SgdConfig:
    """SGD with momentum and coupled L2 weight decay."""

    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be non-negative")


def sgd_step(param, grad, velocity, cfg: SgdConfig, *, decay: bool = True) -> None:
    """One in-place update: v <- m*v + g + wd*p, then p <- p - lr*v.

    ``decay=False`` skips the weight-decay term (used for biases).
    """
    if param.shape != grad.shape or param.shape != velocity.shape:
        raise ValueError(
            f"shape mismatch: param {param.shape}, grad {grad.shape}, "
            f"velocity {velocity.shape}"
        )
    velocity *= cfg.momentum
    velocity += grad
    if decay and cfg.weight_decay != 0.0:
        velocity += cfg.weight_decay * param
    param -= cfg.learning_rate * velocity


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class LinearLayer:
    """Fully connected layer: y = W @ x + b."""

    kind = "linear"

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None):
        if in_dim < 1 or out_dim < 1:
            raise ValueError("in_dim and out_dim must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = glorot_uniform(rng, (out_dim, in_dim), in_dim, out_dim)
        self.bias = np.zeros(out_dim)
        self.v_weight = np.zeros_like(self.weight)
        self.v_bias = np.zeros_like(self.bias)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = as_array(x, "x")
        if x.shape != (self.in_dim,):
            raise ValueError(f"expected input shape ({self.in_dim},), got {x.shape}")
        return self.weight @ x + self.bias

    def backward(self, x: np.ndarray, grad_y: np.ndarray):
        """Return (grad_x, param_grads) for upstream gradient grad_y."""
        if x.shape != (self.in_dim,) or grad_y.shape != (self.out_dim,):
            raise ValueError(
                f"shape mismatch: x {x.shape}, grad_y {grad_y.shape} for "
                f"{self.out_dim}x{self.in_dim} layer"
            )
        grad_x = self.weight.T @ grad_y
        return grad_x, {"weight": np.outer(grad_y, x), "bias": grad_y.copy()}

    def apply_gradients(self, grads, cfg: SgdConfig) -> None:
        sgd_step(self.weight, grads["weight"], self.v_weight, cfg, decay=True)
        sgd_step(self.bias, grads["bias"], self.v_bias, cfg, decay=False)

    def state_arrays(self):
        return [self.weight, self.bias, self.v_weight, self.v_bias]


class Conv2dLayer:
    """2-d cross-correlation over C x H x W inputs, stride 1.

    ``padding="valid"`` shrinks each spatial axis by k - 1;
    ``padding="same"`` zero-pads to preserve it (odd k only).
    """

    kind = "conv2d"

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        padding: str = "valid",
        rng: np.random.Generator | None = None,
    ):
        if in_channels < 1 or out_channels < 1 or kernel_size < 1:
            raise ValueError("channel counts and kernel size must be positive")
        if padding not in ("valid", "same"):
            raise ValueError(f"padding must be 'valid' or 'same', got {padding!r}")
        if padding == "same" and kernel_size % 2 == 0:
            raise ValueError("same padding requires an odd kernel size")
        rng = rng if rng is not None else np.random.default_rng(0)
        k = kernel_size
        fan_in = in_channels * k * k
        fan_out = out_channels * k * k
        self.kernels = glorot_uniform(rng, (out_channels, in_channels, k, k), fan_in, fan_out)
        self.bias = np.zeros(out_channels)
        self.v_kernels = np.zeros_like(self.kernels)
        self.v_bias = np.zeros_like(self.bias)
        self.padding = padding

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[2]

    def _check_input(self, x: np.ndarray) -> None:
        k = self.kernel_size
        if x.ndim != 3 or x.shape[0] != self.in_channels:
            raise ValueError(
                f"expected input of shape ({self.in_channels}, H, W), got {x.shape}"
            )
        if self.padding == "valid" and (x.shape[1] < k or x.shape[2] < k):
            raise ValueError(f"input {x.shape[1:]} smaller than kernel {k}x{k}")

    def _pad(self, x: np.ndarray) -> np.ndarray:
        if self.padding == "same":
            p = self.kernel_size // 2
            return np.pad(x, ((0, 0), (p, p), (p, p)))
        return x

    def _columns(self, xp: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
        """Stack k*k shifted views: shape (C, k, k, out_h, out_w)."""
        k = self.kernel_size
        c = xp.shape[0]
        cols = np.empty((c, k, k, out_h, out_w))
        for di in range(k):
            for dj in range(k):
                cols[:, di, dj] = xp[:, di : di + out_h, dj : dj + out_w]
        return cols

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = as_array(x, "x")
        self._check_input(x)
        k = self.kernel_size
        xp = self._pad(x)
        out_h = xp.shape[1] - k + 1
        out_w = xp.shape[2] - k + 1
        cols = self._columns(xp, out_h, out_w).reshape(-1, out_h * out_w)
        kmat = self.kernels.reshape(self.out_channels, -1)
        y = kmat @ cols + self.bias[:, None]
        return y.reshape(self.out_channels, out_h, out_w)

    def backward(self, x: np.ndarray, grad_y: np.ndarray):
        self._check_input(x)
        k = self.kernel_size
        xp = self._pad(x)
        out_h = xp.shape[1] - k + 1
        out_w = xp.shape[2] - k + 1
        if grad_y.shape != (self.out_channels, out_h, out_w):
            raise ValueError(
                f"grad_y shape {grad_y.shape} does not match output "
                f"({self.out_channels}, {out_h}, {out_w})"
            )
        cols = self._columns(xp, out_h, out_w).reshape(-1, out_h * out_w)
        gy = grad_y.reshape(self.out_channels, -1)
        grad_kernels = (gy @ cols.T).reshape(self.kernels.shape)
        grad_bias = gy.sum(axis=1)

        kmat = self.kernels.reshape(self.out_channels, -1)
        gcols = (kmat.T @ gy).reshape(self.in_channels, k, k, out_h, out_w)
        grad_xp = np.zeros_like(xp)
        for di in range(k):
            for dj in range(k):
                grad_xp[:, di : di + out_h, dj : dj + out_w] += gcols[:, di, dj]
        if self.padding == "same":
            p = k // 2
            grad_x = grad_xp[:, p : p + x.shape[1], p : p + x.shape[2]]
        else:
            grad_x = grad_xp
        return grad_x, {"kernels": grad_kernels, "bias": grad_bias}

    def apply_gradients(self, grads, cfg: SgdConfig) -> None:
        sgd_step(self.kernels, grads["kernels"], self.v_kernels, cfg, decay=True)
        sgd_step(self.bias, grads["bias"], self.v_bias, cfg, decay=False)

    def state_arrays(self):
        return [self.kernels, self.bias, self.v_kernels, self.v_bias]


class TanhLayer:
    """Elementwise tanh; no parameters."""

    kind = "tanh"

    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.tanh(as_array(x, "x"))

    def backward(self, x: np.ndarray, grad_y: np.ndarray):
        if x.shape != grad_y.shape:
            raise ValueError(f"shape mismatch: x {x.shape}, grad_y {grad_y.shape}")
        t = np.tanh(x)
        return grad_y * (1.0 - t * t), {}

    def apply_gradients(self, grads, cfg: SgdConfig) -> None:
        pass

    def state_arrays(self):
        return []


class Network:
    """Ordered stack of layers, each optionally paired with a UL attachment.

    ``ul[i]`` is either None or an object pairing running statistics with
    hyperparameters for the output of ``layers[i]`` (see ``tcoh.ul``).
    """

    def __init__(self, layers, ul=None):
        self.layers = list(layers)
        self.ul = list(ul) if ul is not None else [None] * len(self.layers)
        if len(self.ul) != len(self.layers):
            raise ValueError("ul must have one entry (or None) per layer")

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.state_arrays())
        return out

    def params_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.parameters())
