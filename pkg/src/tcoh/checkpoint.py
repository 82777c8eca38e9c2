"""Binary checkpoints for networks and their UL statistics.

Layout (all integers little-endian uint32, all floats little-endian
float64, arrays row-major):

    magic "TCOH" | version | n_sections
    per section:
        4-byte tag | n_meta | meta ints | n_arrays
        per array: rank | extents | raw float64 payload

Section tags: ``LIN `` and ``CNV `` for the trainable layers, ``TNH `` for
activations, ``ULV `` / ``ULC `` for UL statistics (written directly after
the layer they attach to), and one trailing ``META`` section carrying the
number of completed epochs. Optimizer velocities are stored alongside the
parameters so a resumed run continues bit-identically.

Loading restores state into an already-built network of the same
architecture; tags and meta are checked field by field and any mismatch
raises ``CheckpointError``.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .nn import Conv2dLayer, LinearLayer, Network, TanhLayer
from .ul import UlConvState, UlVecState

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint", "FORMAT_VERSION"]

MAGIC = b"TCOH"
FORMAT_VERSION = 1

_TAG_LINEAR = b"LIN "
_TAG_CONV = b"CNV "
_TAG_TANH = b"TNH "
_TAG_UL_VEC = b"ULV "
_TAG_UL_CONV = b"ULC "
_TAG_META = b"META"

_PADDING_CODES = {"valid": 0, "same": 1}


class CheckpointError(RuntimeError):
    """Malformed checkpoint data or a mismatch with the target network."""


def _write_u32(fh: BinaryIO, *values: int) -> None:
    for v in values:
        if v < 0 or v > 0xFFFFFFFF:
            raise CheckpointError(f"value {v} does not fit in uint32")
        fh.write(struct.pack("<I", v))


def _read_u32s(fh: BinaryIO, count: int) -> list[int]:
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise CheckpointError("truncated checkpoint")
    return list(struct.unpack(f"<{count}I", raw))


def _read_u32(fh: BinaryIO) -> int:
    return _read_u32s(fh, 1)[0]


def _write_array(fh: BinaryIO, a: np.ndarray) -> None:
    a = np.ascontiguousarray(a, dtype="<f8")
    _write_u32(fh, a.ndim, *a.shape)
    fh.write(a.tobytes())


def _read_array(fh: BinaryIO) -> np.ndarray:
    rank = _read_u32(fh)
    if rank > 8:
        raise CheckpointError(f"implausible array rank {rank}")
    shape = _read_u32s(fh, rank)
    n = int(np.prod(shape)) if shape else 1
    raw = fh.read(8 * n)
    if len(raw) != 8 * n:
        raise CheckpointError("truncated checkpoint")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def _write_section(fh: BinaryIO, tag: bytes, meta, arrays) -> None:
    fh.write(tag)
    _write_u32(fh, len(meta), *meta)
    _write_u32(fh, len(arrays))
    for a in arrays:
        _write_array(fh, a)


def _read_section(fh: BinaryIO):
    tag = fh.read(4)
    if len(tag) != 4:
        raise CheckpointError("truncated checkpoint")
    n_meta = _read_u32(fh)
    if n_meta > 64:
        raise CheckpointError(f"implausible meta count {n_meta}")
    meta = _read_u32s(fh, n_meta)
    n_arrays = _read_u32(fh)
    if n_arrays > 64:
        raise CheckpointError(f"implausible array count {n_arrays}")
    arrays = [_read_array(fh) for _ in range(n_arrays)]
    return tag, meta, arrays


def _layer_section(layer):
    if isinstance(layer, LinearLayer):
        return (
            _TAG_LINEAR,
            [layer.in_dim, layer.out_dim],
            [layer.weight, layer.bias, layer.v_weight, layer.v_bias],
        )
    if isinstance(layer, Conv2dLayer):
        return (
            _TAG_CONV,
            [
                layer.in_channels,
                layer.out_channels,
                layer.kernel_size,
                _PADDING_CODES[layer.padding],
            ],
            [layer.kernels, layer.bias, layer.v_kernels, layer.v_bias],
        )
    if isinstance(layer, TanhLayer):
        return _TAG_TANH, [], []
    raise CheckpointError(f"cannot checkpoint layer of type {type(layer).__name__}")


def _ul_section(state):
    if isinstance(state, UlVecState):
        return (
            _TAG_UL_VEC,
            [state.dim, int(state.initialized), state.t],
            state.state_arrays(),
        )
    if isinstance(state, UlConvState):
        c, h, w = state.shape
        return (
            _TAG_UL_CONV,
            [c, h, w, int(state.full_cov), int(state.initialized), state.t],
            state.state_arrays(),
        )
    raise CheckpointError(f"cannot checkpoint UL state of type {type(state).__name__}")


def save_checkpoint(path, net: Network, epochs_completed: int) -> None:
    """Write the full trainable and UL state of ``net`` to ``path``."""
    if epochs_completed < 0:
        raise ValueError("epochs_completed must be non-negative")
    sections = []
    for layer, att in zip(net.layers, net.ul):
        sections.append(_layer_section(layer))
        if att is not None:
            sections.append(_ul_section(att.state))
    sections.append((_TAG_META, [epochs_completed], []))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        _write_u32(fh, FORMAT_VERSION, len(sections))
        for tag, meta, arrays in sections:
            _write_section(fh, tag, meta, arrays)


def _restore_layer(layer, tag, meta, arrays):
    want_tag, want_meta, targets = _layer_section(layer)
    if tag != want_tag:
        raise CheckpointError(
            f"section tag {tag!r} does not match layer {type(layer).__name__}"
        )
    if list(meta) != list(want_meta):
        raise CheckpointError(f"layer meta mismatch: file {meta}, network {want_meta}")
    if len(arrays) != len(targets):
        raise CheckpointError("wrong number of arrays for layer")
    for target, loaded in zip(targets, arrays):
        if target.shape != loaded.shape:
            raise CheckpointError(
                f"array shape mismatch: file {loaded.shape}, network {target.shape}"
            )
        target[...] = loaded


def _restore_ul(state, tag, meta, arrays):
    want_tag, want_meta, targets = _ul_section(state)
    if tag != want_tag:
        raise CheckpointError(
            f"section tag {tag!r} does not match UL state {type(state).__name__}"
        )
    # Structural meta must agree; the initialized flag and step counter are
    # restored from the file.
    if isinstance(state, UlVecState):
        structural = slice(0, 1)
    else:
        structural = slice(0, 4)
    if list(meta[structural]) != list(want_meta[structural]):
        raise CheckpointError(f"UL meta mismatch: file {meta}, network {want_meta}")
    if len(arrays) != len(targets):
        raise CheckpointError("wrong number of arrays for UL state")
    for target, loaded in zip(targets, arrays):
        if target.shape != loaded.shape:
            raise CheckpointError(
                f"array shape mismatch: file {loaded.shape}, network {target.shape}"
            )
    if isinstance(state, UlVecState):
        state.y_hat, state.y_bar, state.W, state.B = (a.copy() for a in arrays)
        state.initialized = bool(meta[1])
        state.t = int(meta[2])
    else:
        state.y_hat, state.y_bar, state.w_var, state.b_var = (a.copy() for a in arrays)
        state.initialized = bool(meta[4])
        state.t = int(meta[5])


def load_checkpoint(path, net: Network) -> int:
    """Restore ``net`` from ``path`` in place; returns epochs completed.

    The network must already have the architecture the checkpoint was saved
    from (same layer kinds, sizes, and UL attachment positions).
    """
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError("bad magic; not a checkpoint file")
        version = _read_u32(fh)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported format version {version}")
        n_sections = _read_u32(fh)
        sections = [_read_section(fh) for _ in range(n_sections)]
        if fh.read(1):
            raise CheckpointError("trailing bytes after last section")

    expected = len(net.layers) + sum(1 for a in net.ul if a is not None) + 1
    if len(sections) != expected:
        raise CheckpointError(
            f"checkpoint has {len(sections)} sections, network needs {expected}"
        )
    it = iter(sections)
    for layer, att in zip(net.layers, net.ul):
        _restore_layer(layer, *next(it))
        if att is not None:
            _restore_ul(att.state, *next(it))
    tag, meta, arrays = next(it)
    if tag != _TAG_META or len(meta) != 1 or arrays:
        raise CheckpointError("malformed trailing META section")
    return int(meta[0])
