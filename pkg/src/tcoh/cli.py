"""Command-line front end: data generation, online training, closed-form
solving, gradient checking, and evaluation.

Exit codes are a stable contract: 0 success, 2 usage or configuration
error, 3 training divergence, 4 gradient-check failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, build_network, parse_config
from .data import (
    MovingSquareSpec,
    RotatingPointsSpec,
    SequenceDataset,
    gen_moving_square,
    gen_rotating_points,
    load_dataset,
    save_dataset,
)
from .evaluate import decode_angle, localize
from .gradcheck import run_all
from .linalg import SingularMatrixError
from .markov import states_from_frames, stats_from_sequences
from .spectral import closed_form_embedding, stationarity_residual
from .ul import DivergenceError, MetricsRow, train_online

__all__ = [
    "main",
    "EXIT_OK",
    "EXIT_USAGE",
    "EXIT_DIVERGED",
    "EXIT_CHECK_FAILED",
    "write_metrics",
    "read_metrics",
    "dataset_from_config",
]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_CHECK_FAILED = 4


def _env_seed() -> int:
    raw = os.environ.get("TCOH_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"TCOH_SEED must be an integer, got {raw!r}") from None


# ---------------------------------------------------------------------------
# Metrics CSV.
# ---------------------------------------------------------------------------


def write_metrics(path, rows: list[MetricsRow], n_ul: int) -> None:
    """Write one CSV row per epoch; floats keep full precision."""
    header = ["epoch"] + [f"ul_grad_norm_{i}" for i in range(n_ul)] + [
        "eval_metric",
        "seconds",
    ]
    lines = [",".join(header)]
    for row in rows:
        if len(row.ul_grad_norms) != n_ul:
            raise ValueError(
                f"row for epoch {row.epoch} has {len(row.ul_grad_norms)} norms, "
                f"expected {n_ul}"
            )
        cells = [str(row.epoch)]
        cells += [f"{v:.17g}" for v in row.ul_grad_norms]
        cells.append("" if row.eval_metric is None else f"{row.eval_metric:.17g}")
        cells.append(f"{row.seconds:.17g}")
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_metrics(path) -> list[MetricsRow]:
    """Parse a metrics CSV back into rows (lossless round-trip)."""
    with open(path) as fh:
        lines = [line.strip() for line in fh if line.strip()]
    if not lines:
        raise ValueError(f"{path}: empty metrics file")
    header = lines[0].split(",")
    if header[0] != "epoch" or header[-2:] != ["eval_metric", "seconds"]:
        raise ValueError(f"{path}: unexpected metrics header {header}")
    n_ul = len(header) - 3
    rows = []
    for line in lines[1:]:
        cells = line.split(",")
        if len(cells) != len(header):
            raise ValueError(f"{path}: ragged metrics row {line!r}")
        rows.append(
            MetricsRow(
                epoch=int(cells[0]),
                ul_grad_norms=tuple(float(c) for c in cells[1 : 1 + n_ul]),
                eval_metric=None if cells[-2] == "" else float(cells[-2]),
                seconds=float(cells[-1]),
            )
        )
    return rows


# ---------------------------------------------------------------------------
# Shared plumbing.
# ---------------------------------------------------------------------------


def dataset_from_config(cfg: ExperimentConfig) -> SequenceDataset:
    spec = dict(cfg.dataset)
    kind = spec.pop("kind")
    if kind == "rotating":
        return gen_rotating_points(RotatingPointsSpec(**spec))
    if kind == "moving_square":
        return gen_moving_square(MovingSquareSpec(**spec))
    return load_dataset(spec["path"])


def _all_frames(ds: SequenceDataset):
    return [f for seq in ds.sequences for f in seq.frames]


def _all_ground_truth(ds: SequenceDataset) -> np.ndarray:
    parts = []
    for i, seq in enumerate(ds.sequences):
        if seq.ground_truth is None:
            raise ConfigError(f"sequence {i} has no ground truth; cannot evaluate")
        parts.append(np.asarray(seq.ground_truth))
    return np.concatenate(parts)


def _forward_all(net, frames) -> np.ndarray:
    return np.stack([net.forward(f) for f in frames])


def _decode_metric(net, ds: SequenceDataset) -> float:
    angles = _all_ground_truth(ds)
    outputs = _forward_all(net, _all_frames(ds))
    return decode_angle(outputs, angles).total_abs_error


def _localize_metric(net, ds: SequenceDataset) -> float:
    centroids = _all_ground_truth(ds)
    outputs = _forward_all(net, _all_frames(ds))
    return localize(outputs, centroids).corr_mean


def _eval_fn(cfg: ExperimentConfig, ds: SequenceDataset):
    if cfg.eval_kind == "decode-angle":
        _all_ground_truth(ds)  # fail at setup, not after an epoch
        return lambda net: _decode_metric(net, ds)
    if cfg.eval_kind == "localize":
        _all_ground_truth(ds)
        return lambda net: _localize_metric(net, ds)
    return None


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    if args.generator == "rotating":
        spec = RotatingPointsSpec(
            num_points=args.points,
            degrees_per_frame=args.deg,
            num_revolutions=args.revolutions,
            noise_level=args.noise,
            seed=args.seed,
        )
        ds = gen_rotating_points(spec)
    else:
        spec = MovingSquareSpec(
            image_size=args.image_size,
            square_size=args.square_size,
            trajectory=args.trajectory,
            frames_per_sequence=args.frames,
            num_sequences=args.sequences,
            seed=args.seed,
        )
        ds = gen_moving_square(spec)
    save_dataset(ds, args.out)
    print(
        f"wrote {len(ds.sequences)} sequence(s), {ds.n_frames} frames, "
        f"frame shape {ds.frame_shape} to {args.out}"
    )
    return EXIT_OK


def _load_raw_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(raw, dict) and "seed" not in raw and os.environ.get("TCOH_SEED"):
        raw["seed"] = _env_seed()
    return parse_config(raw)


def cmd_train(args) -> int:
    cfg = _load_raw_config(args.config)
    ds = dataset_from_config(cfg)
    if ds.frame_shape is None:
        raise ConfigError("dataset is empty")
    net = build_network(cfg, ds.frame_shape)
    epochs_done = 0
    if args.resume:
        epochs_done = load_checkpoint(args.resume, net)
        if epochs_done > cfg.epochs:
            raise ConfigError(
                f"checkpoint already at epoch {epochs_done} > configured {cfg.epochs}"
            )
    os.makedirs(args.out, exist_ok=True)
    try:
        metrics = train_online(
            net,
            ds,
            cfg.sgd,
            epochs=cfg.epochs - epochs_done,
            grad_sign=cfg.grad_sign,
            reset_per_sequence=cfg.reset_per_sequence,
            noise_level=cfg.noise_level,
            seed=cfg.seed,
            eval_fn=_eval_fn(cfg, ds),
            epoch_offset=epochs_done,
        )
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    n_ul = sum(1 for a in net.ul if a is not None)
    write_metrics(os.path.join(args.out, "metrics.csv"), metrics, n_ul)
    save_checkpoint(os.path.join(args.out, "checkpoint.bin"), net, cfg.epochs)
    for row in metrics:
        norms = ",".join(f"{v:.3e}" for v in row.ul_grad_norms)
        extra = "" if row.eval_metric is None else f" eval={row.eval_metric:.6g}"
        print(f"epoch {row.epoch}: ul_grad_norms=[{norms}]{extra} ({row.seconds:.2f}s)")
    print(f"wrote {os.path.join(args.out, 'checkpoint.bin')}")
    return EXIT_OK


def cmd_closed_form(args) -> int:
    ds = load_dataset(args.dataset)
    frame_lists = [seq.frames for seq in ds.sequences if len(seq.frames) >= 2]
    if not frame_lists:
        raise ConfigError("dataset has no sequence with at least two frames")
    state_seqs, n_states = states_from_frames(frame_lists)
    stats = stats_from_sequences(state_seqs, n_states)
    rotation = None
    if args.rotate_deg is not None:
        if args.components != 2:
            raise ConfigError("--rotate-deg only applies to 2-component embeddings")
        theta = np.deg2rad(args.rotate_deg)
        c, s = np.cos(theta), np.sin(theta)
        rotation = np.array([[c, -s], [s, c]])
    try:
        result = closed_form_embedding(stats, args.components, rotation=rotation)
    except (ValueError, SingularMatrixError) as exc:
        raise ConfigError(str(exc)) from exc
    residual = stationarity_residual(result, stats)
    np.savetxt(args.out, result.embedding, fmt="%.17g", delimiter=",")
    eigs = ", ".join(f"{v:.6g}" for v in result.eigenvalues)
    print(f"states: {n_states}")
    print(f"eigenvalues: [{eigs}]")
    print(f"objective: {result.objective:.12g}")
    print(f"stationarity residual: {residual:.3e}")
    print(f"wrote {args.out}")
    if args.diagnostics:
        with open(args.diagnostics, "w") as fh:
            json.dump(
                {
                    "n_states": n_states,
                    "eigenvalues": result.eigenvalues.tolist(),
                    "objective": result.objective,
                    "stationarity_residual": residual,
                },
                fh,
                indent=2,
            )
            fh.write("\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_all(args.seed, corrupt=args.corrupt)
    failed = [r for r in results if not r.passed]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: max rel err {r.max_rel_err:.3e} (tol {r.tol:g})")
    if failed:
        names = ", ".join(r.name for r in failed)
        print(f"error: gradient checks failed: {names}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_raw_config(args.config)
    ds = load_dataset(args.dataset) if args.dataset else dataset_from_config(cfg)
    if ds.frame_shape is None:
        raise ConfigError("dataset is empty")
    kind = args.eval or cfg.eval_kind
    if kind == "none":
        raise ConfigError("no eval kind: pass --eval or set it in the config")
    net = build_network(cfg, ds.frame_shape)
    load_checkpoint(args.checkpoint, net)
    truth = _all_ground_truth(ds)
    outputs = _forward_all(net, _all_frames(ds))
    if kind == "decode-angle":
        res = decode_angle(outputs, truth)
        print(f"r2_sin: {res.r2_sin:.6f}")
        print(f"r2_cos: {res.r2_cos:.6f}")
        print(f"abs_error_sin: {res.abs_error_sin:.6g}")
        print(f"abs_error_cos: {res.abs_error_cos:.6g}")
        print(f"total_abs_error: {res.total_abs_error:.6g}")
    else:
        res = localize(outputs, truth)
        print(f"corr_row: {res.corr_row:.6f}")
        print(f"corr_col: {res.corr_col:.6f}")
        print(f"corr_mean: {res.corr_mean:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser.
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tcoh",
        description="Temporal-coherence representation learning from frame sequences.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset")
    gen_sub = gen.add_subparsers(dest="generator", required=True)
    rot = gen_sub.add_parser("rotating", help="rigidly rotating 2-D point cloud")
    rot.add_argument("--points", type=int, default=28)
    rot.add_argument("--deg", type=float, default=5.0, help="degrees per frame")
    rot.add_argument("--revolutions", type=int, default=1)
    rot.add_argument("--noise", type=float, default=0.0)
    rot.add_argument("--seed", type=int, default=None)
    rot.add_argument("--out", required=True)
    sq = gen_sub.add_parser("moving-square", help="bright square on a dark image")
    sq.add_argument("--image-size", type=int, default=64)
    sq.add_argument("--square-size", type=int, default=8)
    sq.add_argument("--trajectory", choices=("bounce", "walk", "static"), default="bounce")
    sq.add_argument("--frames", type=int, default=64)
    sq.add_argument("--sequences", type=int, default=1)
    sq.add_argument("--seed", type=int, default=None)
    sq.add_argument("--out", required=True)

    train = sub.add_parser("train", help="train a network online from a config")
    train.add_argument("--config", required=True)
    train.add_argument("--out", required=True, help="output directory")
    train.add_argument("--resume", help="checkpoint to continue from")

    cf = sub.add_parser("closed-form", help="solve the chain embedding exactly")
    cf.add_argument("--dataset", required=True)
    cf.add_argument("-d", "--components", type=int, default=2)
    cf.add_argument("--out", required=True, help="embedding CSV path")
    cf.add_argument("--diagnostics", help="optional JSON diagnostics path")
    cf.add_argument(
        "--rotate-deg",
        type=float,
        help="rotate a 2-component embedding by this angle (degrees)",
    )

    gc = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    gc.add_argument("--seed", type=int, default=None)
    gc.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--config", required=True)
    ev.add_argument("--dataset", help="dataset directory (default: from config)")
    ev.add_argument("--eval", choices=("decode-angle", "localize"))
    return parser


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "closed-form": cmd_closed_form,
    "gradcheck": cmd_gradcheck,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is None and hasattr(args, "seed"):
        try:
            args.seed = _env_seed()
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
