"""Synthetic sequence generators, PGM/CSV persistence, and dataset loading.

Two generators cover the experiments: a rigid set of 2-D points rotating
about its centroid (vector frames), and a bright square moving over a dark
image (single-channel image frames). Datasets round-trip through a
directory layout of one JSON manifest plus per-sequence frame files: binary
PGM (P5) images or one CSV of stacked row vectors, with ground truth in a
CSV alongside.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RotatingPointsSpec",
    "MovingSquareSpec",
    "Sequence",
    "SequenceDataset",
    "gen_rotating_points",
    "gen_moving_square",
    "read_pgm",
    "write_pgm",
    "load_image_sequence",
    "load_dataset",
    "save_dataset",
]


@dataclass(frozen=True)
class RotatingPointsSpec:
    """Rigidly rotating 2-D point cloud observed as flattened coordinates.

    A revolution is sampled every ``degrees_per_frame`` degrees, so the
    defaults give 72 frames per revolution and frame dimension 56. The
    noise level is the ratio of the noise standard deviation to the clean
    per-coordinate standard deviation.
    """

    num_points: int = 28
    degrees_per_frame: float = 5.0
    num_revolutions: int = 1
    noise_level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_points < 1:
            raise ValueError("num_points must be positive")
        if not 0.0 < self.degrees_per_frame <= 360.0:
            raise ValueError("degrees_per_frame must be in (0, 360]")
        ratio = 360.0 / self.degrees_per_frame
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("degrees_per_frame must divide 360")
        if self.num_revolutions < 1:
            raise ValueError("num_revolutions must be positive")
        if not 0.0 <= self.noise_level <= 0.5:
            raise ValueError("noise_level must be in [0, 0.5]")

    @property
    def frames_per_revolution(self) -> int:
        return round(360.0 / self.degrees_per_frame)


_TRAJECTORIES = ("bounce", "walk", "static")


@dataclass(frozen=True)
class MovingSquareSpec:
    """Bright square moving inside a dark square image.

    Trajectories: ``bounce`` moves with a constant integer velocity and
    reflects off the image borders, ``walk`` takes unit random steps
    clamped to the border, ``static`` keeps one random position.
    """

    image_size: int = 64
    square_size: int = 8
    trajectory: str = "bounce"
    frames_per_sequence: int = 64
    num_sequences: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 1:
            raise ValueError("image_size must be positive")
        if self.square_size < 1:
            raise ValueError("square_size must be positive")
        if self.square_size > self.image_size:
            raise ValueError("square does not fit inside the image")
        if self.trajectory not in _TRAJECTORIES:
            raise ValueError(f"trajectory must be one of {_TRAJECTORIES}")
        if self.frames_per_sequence < 1:
            raise ValueError("frames_per_sequence must be positive")
        if self.num_sequences < 1:
            raise ValueError("num_sequences must be positive")


@dataclass
class Sequence:
    """One ordered clip: frames plus optional per-frame ground truth."""

    frames: list
    ground_truth: np.ndarray | None = None

    def __post_init__(self):
        self.frames = [np.asarray(f, dtype=np.float64) for f in self.frames]
        if self.frames:
            shape = self.frames[0].shape
            for i, f in enumerate(self.frames):
                if f.shape != shape:
                    raise ValueError(
                        f"frame {i} has shape {f.shape}, expected {shape}"
                    )
        if self.ground_truth is not None:
            self.ground_truth = np.asarray(self.ground_truth, dtype=np.float64)
            if len(self.ground_truth) != len(self.frames):
                raise ValueError(
                    f"ground truth has {len(self.ground_truth)} entries "
                    f"for {len(self.frames)} frames"
                )


@dataclass
class SequenceDataset:
    """A list of sequences sharing one frame shape, plus provenance."""

    sequences: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = {f.shape for s in self.sequences for f in s.frames}
        if len(shapes) > 1:
            raise ValueError(f"sequences mix frame shapes: {sorted(shapes)}")

    @property
    def frame_shape(self):
        for s in self.sequences:
            if s.frames:
                return s.frames[0].shape
        return None

    @property
    def n_frames(self) -> int:
        return sum(len(s.frames) for s in self.sequences)


def gen_rotating_points(spec: RotatingPointsSpec) -> SequenceDataset:
    """Sample a point cloud and rotate it rigidly, one sequence per dataset.

    Points are drawn uniformly in [-1, 1]^2 and centered on their centroid,
    so every clean frame has zero mean per coordinate pair. Frame t holds
    the cloud rotated by t * degrees_per_frame, flattened as
    (x1, y1, x2, y2, ...); the ground truth is the angle in radians,
    wrapped to [0, 2*pi). Gaussian noise, when enabled, is scaled per
    coordinate by the clean dataset's standard deviation and drawn fresh
    for every frame.
    """
    rng = np.random.default_rng(spec.seed)
    points = rng.uniform(-1.0, 1.0, size=(spec.num_points, 2))
    points -= points.mean(axis=0)

    n_frames = spec.num_revolutions * spec.frames_per_revolution
    frames = []
    angles = np.empty(n_frames)
    for t in range(n_frames):
        deg = (t * spec.degrees_per_frame) % 360.0
        theta = np.deg2rad(deg)
        rot = np.array(
            [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
        )
        frames.append((points @ rot.T).reshape(-1))
        angles[t] = theta

    if spec.noise_level > 0.0:
        clean = np.stack(frames)
        scale = spec.noise_level * clean.std(axis=0)
        frames = [f + rng.normal(0.0, 1.0, size=f.shape) * scale for f in frames]

    meta = {
        "generator": "rotating_points",
        "num_points": spec.num_points,
        "degrees_per_frame": spec.degrees_per_frame,
        "num_revolutions": spec.num_revolutions,
        "noise_level": spec.noise_level,
        "seed": spec.seed,
    }
    return SequenceDataset([Sequence(frames, angles)], meta)


def _bounce_positions(rng, n_frames: int, max_pos: int) -> np.ndarray:
    pos = rng.integers(0, max_pos + 1, size=2).astype(np.int64)
    if max_pos == 0:
        return np.tile(pos, (n_frames, 1))
    speed = min(2, max_pos)
    vel = rng.integers(1, speed + 1, size=2) * rng.choice([-1, 1], size=2)
    out = np.empty((n_frames, 2), dtype=np.int64)
    for t in range(n_frames):
        out[t] = pos
        for ax in range(2):
            p = pos[ax] + vel[ax]
            if p < 0:
                p, vel[ax] = -p, -vel[ax]
            elif p > max_pos:
                p, vel[ax] = 2 * max_pos - p, -vel[ax]
            pos[ax] = p
    return out


def _walk_positions(rng, n_frames: int, max_pos: int) -> np.ndarray:
    pos = rng.integers(0, max_pos + 1, size=2).astype(np.int64)
    out = np.empty((n_frames, 2), dtype=np.int64)
    for t in range(n_frames):
        out[t] = pos
        pos = np.clip(pos + rng.integers(-1, 2, size=2), 0, max_pos)
    return out


def gen_moving_square(spec: MovingSquareSpec) -> SequenceDataset:
    """Render unit-intensity squares on zero backgrounds, one channel.

    Positions are pixel-aligned, so the total intensity is constant and
    the centroid is the square center: top-left + (square_size - 1) / 2.
    Ground truth is that centroid as (row, col) per frame.
    """
    rng = np.random.default_rng(spec.seed)
    size, s = spec.image_size, spec.square_size
    max_pos = size - s
    sequences = []
    for _ in range(spec.num_sequences):
        if spec.trajectory == "bounce":
            positions = _bounce_positions(rng, spec.frames_per_sequence, max_pos)
        elif spec.trajectory == "walk":
            positions = _walk_positions(rng, spec.frames_per_sequence, max_pos)
        else:
            pos = rng.integers(0, max_pos + 1, size=2)
            positions = np.tile(pos, (spec.frames_per_sequence, 1))
        frames = []
        for r, c in positions:
            img = np.zeros((1, size, size))
            img[0, r : r + s, c : c + s] = 1.0
            frames.append(img)
        centroids = positions.astype(np.float64) + (s - 1) / 2.0
        sequences.append(Sequence(frames, centroids))
    meta = {
        "generator": "moving_square",
        "image_size": spec.image_size,
        "square_size": spec.square_size,
        "trajectory": spec.trajectory,
        "frames_per_sequence": spec.frames_per_sequence,
        "num_sequences": spec.num_sequences,
        "seed": spec.seed,
    }
    return SequenceDataset(sequences, meta)


# ---------------------------------------------------------------------------
# PGM (P5) image files.
# ---------------------------------------------------------------------------


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2-D array with values in [0, 1] as an 8-bit binary PGM."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {image.shape}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("pixel values must lie in [0, 1]")
    data = np.rint(image * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _pgm_tokens(raw: bytes, path, count: int) -> list[int]:
    # Header tokens may be separated by any whitespace; '#' starts a
    # comment running to end of line. Returns the token values and the
    # offset of the pixel data (one whitespace byte after the last token).
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(raw):
            raise ValueError(f"{path}: truncated PGM header")
        ch = raw[i : i + 1]
        if ch.isspace():
            i += 1
        elif ch == b"#":
            while i < len(raw) and raw[i : i + 1] not in (b"\n", b"\r"):
                i += 1
        elif ch.isdigit():
            j = i
            while j < len(raw) and raw[j : j + 1].isdigit():
                j += 1
            tokens.append(int(raw[i:j]))
            i = j
        else:
            raise ValueError(f"{path}: malformed PGM header")
    if i >= len(raw) or not raw[i : i + 1].isspace():
        raise ValueError(f"{path}: malformed PGM header")
    return tokens + [i + 1]


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM file into a float array scaled to [0, 1]."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ValueError(f"{path}: cannot read PGM file ({exc})") from exc
    if raw[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (missing P5 magic)")
    w, h, maxval, offset = _pgm_tokens(raw[2:], path, 3)
    offset += 2
    if w < 1 or h < 1:
        raise ValueError(f"{path}: bad PGM dimensions {w}x{h}")
    if not 1 <= maxval <= 255:
        raise ValueError(f"{path}: unsupported PGM maxval {maxval}")
    pixels = raw[offset : offset + w * h]
    if len(pixels) != w * h:
        raise ValueError(f"{path}: PGM pixel data truncated")
    img = np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)
    return img.astype(np.float64) / maxval


# ---------------------------------------------------------------------------
# Dataset directory layout: manifest.json + per-sequence files.
# ---------------------------------------------------------------------------


def _manifest_path(path) -> str:
    if os.path.isdir(path):
        return os.path.join(path, "manifest.json")
    return os.fspath(path)


def save_dataset(ds: SequenceDataset, dir_path) -> None:
    """Write a dataset as manifest.json plus frame and ground-truth files.

    Image sequences (frames shaped (1, H, W)) become one PGM per frame;
    vector sequences become one CSV per sequence with one frame per row.
    Ground truth, when present, is a CSV next to the frames. Paths in the
    manifest are relative to the dataset directory.
    """
    os.makedirs(dir_path, exist_ok=True)
    manifest = {"sequences": []}
    for i, seq in enumerate(ds.sequences):
        seq_dir = f"seq{i:03d}"
        os.makedirs(os.path.join(dir_path, seq_dir), exist_ok=True)
        entry = {}
        if seq.frames and seq.frames[0].ndim == 3:
            if seq.frames[0].shape[0] != 1:
                raise ValueError("only single-channel image frames can be saved")
            names = []
            for j, frame in enumerate(seq.frames):
                name = f"{seq_dir}/frame{j:04d}.pgm"
                write_pgm(os.path.join(dir_path, name), frame[0])
                names.append(name)
            entry["frames"] = names
        elif seq.frames:
            if seq.frames[0].ndim != 1:
                raise ValueError(
                    f"cannot save frames of rank {seq.frames[0].ndim}; "
                    "expected vectors or (1, H, W) images"
                )
            name = f"{seq_dir}/frames.csv"
            np.savetxt(
                os.path.join(dir_path, name),
                np.stack(seq.frames),
                fmt="%.17g",
                delimiter=",",
            )
            entry["frames"] = [name]
        else:
            entry["frames"] = []
        if seq.ground_truth is not None:
            gt_name = f"{seq_dir}/ground_truth.csv"
            gt = seq.ground_truth
            np.savetxt(
                os.path.join(dir_path, gt_name),
                gt.reshape(len(gt), -1),
                fmt="%.17g",
                delimiter=",",
            )
            entry["ground_truth"] = gt_name
        manifest["sequences"].append(entry)
    if ds.meta:
        manifest["meta"] = ds.meta
    with open(os.path.join(dir_path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _load_ground_truth(path) -> np.ndarray:
    gt = np.loadtxt(path, delimiter=",", ndmin=2)
    if gt.shape[1] == 1:
        return gt[:, 0]
    return gt


def _load_manifest(path):
    manifest_file = _manifest_path(path)
    try:
        with open(manifest_file) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise ValueError(f"{manifest_file}: cannot read manifest ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"{manifest_file}: invalid JSON ({exc})") from exc
    if not isinstance(manifest, dict) or "sequences" not in manifest:
        raise ValueError(f"{manifest_file}: manifest must contain a 'sequences' list")
    return manifest, os.path.dirname(os.path.abspath(manifest_file))


def load_dataset(path) -> SequenceDataset:
    """Load a dataset saved by ``save_dataset`` (or a matching manifest).

    ``path`` may be the dataset directory or the manifest file itself.
    Frame entries ending in .pgm load as (1, H, W) images, entries ending
    in .csv as one vector frame per row.
    """
    manifest, base = _load_manifest(path)
    sequences = []
    for entry in manifest["sequences"]:
        frames = []
        for name in entry.get("frames", []):
            full = os.path.join(base, name)
            if name.endswith(".pgm"):
                frames.append(read_pgm(full)[None, :, :])
            elif name.endswith(".csv"):
                try:
                    rows = np.loadtxt(full, delimiter=",", ndmin=2)
                except OSError as exc:
                    raise ValueError(f"{full}: cannot read frames ({exc})") from exc
                frames.extend(rows)
            else:
                raise ValueError(f"{full}: unsupported frame file type")
        gt = None
        if "ground_truth" in entry:
            gt_path = os.path.join(base, entry["ground_truth"])
            try:
                gt = _load_ground_truth(gt_path)
            except OSError as exc:
                raise ValueError(f"{gt_path}: cannot read ground truth ({exc})") from exc
        sequences.append(Sequence(frames, gt))
    return SequenceDataset(sequences, manifest.get("meta", {}))


def load_image_sequence(manifest_path) -> SequenceDataset:
    """Load grayscale PGM sequences listed in a manifest.

    Every frame entry must be a PGM file; sizes must agree across the whole
    dataset. Errors name the offending file.
    """
    manifest, base = _load_manifest(manifest_path)
    for entry in manifest["sequences"]:
        for name in entry.get("frames", []):
            if not name.endswith(".pgm"):
                raise ValueError(
                    f"{os.path.join(base, name)}: image manifests may only list PGM files"
                )
    ds = load_dataset(manifest_path)
    return ds
