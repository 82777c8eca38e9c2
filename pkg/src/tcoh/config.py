"""JSON experiment configuration: schema validation and network building.

The format is deliberately strict: every key is checked against a schema
and unknown keys are rejected, because a silently ignored typo in a
hyperparameter name would invalidate an experiment without any visible
symptom.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import MovingSquareSpec, RotatingPointsSpec
from .nn import Conv2dLayer, LinearLayer, Network, SgdConfig, TanhLayer
from .ul import UlAttachment, UlConvState, UlHyper, UlVecState, mu_schedule

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "load_config", "build_network"]

EVAL_KINDS = ("decode-angle", "localize", "none")


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


def _require_keys(obj: dict, where: str, required, optional=()):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    for key in required:
        if key not in obj:
            raise ConfigError(f"{where}: missing required key '{key}'")
    allowed = set(required) | set(optional)
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{where}: unknown key '{key}'")


def _number(obj: dict, key: str, where: str, default=None, kind=float):
    if key not in obj:
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {value!r}")
    if kind is int:
        if int(value) != value:
            raise ConfigError(f"{where}.{key}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    params: dict
    ul: dict | None


@dataclass(frozen=True)
class ExperimentConfig:
    layers: tuple[LayerSpec, ...]
    dataset: dict
    sgd: SgdConfig = SgdConfig()
    epochs: int = 1
    seed: int = 0
    eval_kind: str = "none"
    grad_sign: float = 1.0
    reset_per_sequence: bool = True
    noise_level: float = 0.0
    mu_top: float = 0.5


def _parse_ul(raw, where: str) -> dict | None:
    if raw is None or raw is False:
        return None
    if raw is True:
        return {}
    _require_keys(raw, where, (), ("mu", "eps", "ridge", "combine_weight", "full_cov"))
    out = {}
    for key in ("mu", "eps", "ridge", "combine_weight"):
        value = _number(raw, key, where)
        if value is not None:
            out[key] = value
    if "full_cov" in raw:
        if not isinstance(raw["full_cov"], bool):
            raise ConfigError(f"{where}.full_cov: expected a boolean")
        out["full_cov"] = raw["full_cov"]
    return out


def _parse_layer(raw, index: int) -> LayerSpec:
    where = f"network[{index}]"
    if not isinstance(raw, dict) or "type" not in raw:
        raise ConfigError(f"{where}: each layer needs a 'type'")
    kind = raw["type"]
    if kind == "linear":
        _require_keys(raw, where, ("type", "in_dim", "out_dim"), ("ul",))
        params = {
            "in_dim": _number(raw, "in_dim", where, kind=int),
            "out_dim": _number(raw, "out_dim", where, kind=int),
        }
    elif kind == "conv":
        _require_keys(
            raw,
            where,
            ("type", "in_channels", "out_channels", "kernel_size"),
            ("padding", "ul"),
        )
        padding = raw.get("padding", "valid")
        if padding not in ("valid", "same"):
            raise ConfigError(f"{where}.padding: must be 'valid' or 'same'")
        params = {
            "in_channels": _number(raw, "in_channels", where, kind=int),
            "out_channels": _number(raw, "out_channels", where, kind=int),
            "kernel_size": _number(raw, "kernel_size", where, kind=int),
            "padding": padding,
        }
    elif kind == "tanh":
        _require_keys(raw, where, ("type",))
        params = {}
    else:
        raise ConfigError(f"{where}.type: unknown layer type '{kind}'")
    ul = _parse_ul(raw.get("ul"), f"{where}.ul") if kind != "tanh" else None
    return LayerSpec(kind, params, ul)


_DATASET_KEYS = {
    "rotating": (
        ("kind",),
        ("num_points", "degrees_per_frame", "num_revolutions", "noise_level", "seed"),
    ),
    "moving_square": (
        ("kind",),
        (
            "image_size",
            "square_size",
            "trajectory",
            "frames_per_sequence",
            "num_sequences",
            "seed",
        ),
    ),
    "manifest": (("kind", "path"), ()),
}


def _parse_dataset(raw) -> dict:
    where = "dataset"
    if not isinstance(raw, dict) or "kind" not in raw:
        raise ConfigError(f"{where}: needs a 'kind'")
    kind = raw["kind"]
    if kind not in _DATASET_KEYS:
        raise ConfigError(f"{where}.kind: unknown kind '{kind}'")
    required, optional = _DATASET_KEYS[kind]
    _require_keys(raw, where, required, optional)
    out = dict(raw)
    try:
        if kind == "rotating":
            RotatingPointsSpec(**{k: v for k, v in out.items() if k != "kind"})
        elif kind == "moving_square":
            MovingSquareSpec(**{k: v for k, v in out.items() if k != "kind"})
        elif not isinstance(out["path"], str):
            raise ConfigError(f"{where}.path: expected a string")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc
    return out


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a configuration dictionary and normalize it."""
    _require_keys(
        raw,
        "config",
        ("network", "dataset"),
        ("sgd", "epochs", "seed", "eval", "train"),
    )
    if not isinstance(raw["network"], list) or not raw["network"]:
        raise ConfigError("network: must be a non-empty list of layers")
    layers = tuple(_parse_layer(layer, i) for i, layer in enumerate(raw["network"]))

    sgd_raw = raw.get("sgd", {})
    _require_keys(sgd_raw, "sgd", (), ("learning_rate", "momentum", "weight_decay"))
    try:
        sgd = SgdConfig(
            learning_rate=_number(sgd_raw, "learning_rate", "sgd", 0.01),
            momentum=_number(sgd_raw, "momentum", "sgd", 0.9),
            weight_decay=_number(sgd_raw, "weight_decay", "sgd", 0.0),
        )
    except ValueError as exc:
        raise ConfigError(f"sgd: {exc}") from exc

    eval_raw = raw.get("eval", {"kind": "none"})
    _require_keys(eval_raw, "eval", ("kind",))
    if eval_raw["kind"] not in EVAL_KINDS:
        raise ConfigError(f"eval.kind: must be one of {EVAL_KINDS}")

    train_raw = raw.get("train", {})
    _require_keys(
        train_raw,
        "train",
        (),
        ("grad_sign", "reset_per_sequence", "noise_level", "mu_top"),
    )
    grad_sign = _number(train_raw, "grad_sign", "train", 1.0)
    if grad_sign not in (1.0, -1.0):
        raise ConfigError("train.grad_sign: must be 1 or -1")
    reset = train_raw.get("reset_per_sequence", True)
    if not isinstance(reset, bool):
        raise ConfigError("train.reset_per_sequence: expected a boolean")
    noise_level = _number(train_raw, "noise_level", "train", 0.0)
    if noise_level < 0.0:
        raise ConfigError("train.noise_level: must be non-negative")
    mu_top = _number(train_raw, "mu_top", "train", 0.5)

    epochs = _number(raw, "epochs", "config", 1, kind=int)
    if epochs < 0:
        raise ConfigError("epochs: must be non-negative")

    cfg = ExperimentConfig(
        layers=layers,
        dataset=_parse_dataset(raw["dataset"]),
        sgd=sgd,
        epochs=epochs,
        seed=_number(raw, "seed", "config", 0, kind=int),
        eval_kind=eval_raw["kind"],
        grad_sign=grad_sign,
        reset_per_sequence=reset,
        noise_level=noise_level,
        mu_top=mu_top,
    )
    try:
        _check_hypers(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _check_hypers(cfg: ExperimentConfig) -> None:
    # Instantiating the hyperparameters surfaces range errors at parse
    # time rather than mid-training.
    for spec, mu in zip(cfg.layers, _resolved_mus(cfg)):
        if spec.ul is not None:
            _hyper_for(spec, mu)


def _resolved_mus(cfg: ExperimentConfig) -> list[float | None]:
    ul_indices = [i for i, spec in enumerate(cfg.layers) if spec.ul is not None]
    mus: list[float | None] = [None] * len(cfg.layers)
    if not ul_indices:
        return mus
    schedule = mu_schedule(cfg.mu_top, len(ul_indices))
    for depth, i in enumerate(ul_indices):
        mus[i] = cfg.layers[i].ul.get("mu", schedule[depth])
    return mus


def _hyper_for(spec: LayerSpec, mu: float) -> UlHyper:
    kwargs = {k: v for k, v in spec.ul.items() if k not in ("mu", "full_cov")}
    return UlHyper(mu=mu, **kwargs)


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON configuration file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(raw)


def build_network(cfg: ExperimentConfig, frame_shape: tuple[int, ...]) -> Network:
    """Construct the configured network for frames of the given shape.

    Layer sizes are checked against the shape as it propagates, so a
    config that cannot process the dataset fails here with a message
    naming the offending layer.
    """
    rng = np.random.default_rng(cfg.seed)
    layers = []
    attachments = []
    shape = tuple(frame_shape)
    mus = _resolved_mus(cfg)
    for i, spec in enumerate(cfg.layers):
        where = f"network[{i}]"
        if spec.kind == "linear":
            if len(shape) != 1:
                raise ConfigError(f"{where}: linear layer needs vector input, got {shape}")
            if shape[0] != spec.params["in_dim"]:
                raise ConfigError(
                    f"{where}: in_dim {spec.params['in_dim']} != incoming {shape[0]}"
                )
            layer = LinearLayer(spec.params["in_dim"], spec.params["out_dim"], rng)
            shape = (spec.params["out_dim"],)
        elif spec.kind == "conv":
            if len(shape) != 3:
                raise ConfigError(f"{where}: conv layer needs (C, H, W) input, got {shape}")
            if shape[0] != spec.params["in_channels"]:
                raise ConfigError(
                    f"{where}: in_channels {spec.params['in_channels']} != incoming {shape[0]}"
                )
            try:
                layer = Conv2dLayer(
                    spec.params["in_channels"],
                    spec.params["out_channels"],
                    spec.params["kernel_size"],
                    padding=spec.params["padding"],
                    rng=rng,
                )
            except ValueError as exc:
                raise ConfigError(f"{where}: {exc}") from exc
            k = spec.params["kernel_size"]
            if spec.params["padding"] == "valid":
                h, w = shape[1] - k + 1, shape[2] - k + 1
                if h < 1 or w < 1:
                    raise ConfigError(f"{where}: kernel {k} too large for input {shape}")
            else:
                h, w = shape[1], shape[2]
            shape = (spec.params["out_channels"], h, w)
        else:
            layer = TanhLayer()
        layers.append(layer)

        if spec.ul is None:
            attachments.append(None)
            continue
        hyper = _hyper_for(spec, mus[i])
        if spec.kind == "linear":
            state = UlVecState(shape[0])
        else:
            state = UlConvState(shape, full_cov=spec.ul.get("full_cov", False))
        attachments.append(UlAttachment(state, hyper))
    return Network(layers, ul=attachments)
