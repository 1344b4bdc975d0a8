"""Binary checkpoints for model parameters and optimizer state.

A checkpoint is a single little-endian file carrying everything needed to
resume or evaluate a run without the original command line: a config
snapshot (opaque text blob, ``key = value`` lines), the training phase and
plateau bookkeeping, every named parameter array, and zero or more Adam
states (first and second moments plus hyperparameters). Arrays are stored
as raw IEEE bytes, so save followed by load reproduces values bit for bit.

Layout (all integers little-endian):

    magic     8 bytes  b"CRNNDNZC"
    version   u32
    config    u64 length + UTF-8 text
    phase     u8 (0 = denoise-only, 1 = joint)
    epoch     u32  epochs completed
    best_val  f64  best validation score so far
    since     u32  epochs since that best
    params    u32 count, then per entry: name (u16 + UTF-8), array
    adam      u8 count, then per state: five f64 hyperparameters, u64 step,
              and two param tables (first and second moments)

where ``array`` is dtype code u8 (0 = float32, 1 = float64), ndim u8,
each dim u32, then the raw data bytes.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import CheckpointError, CheckpointMismatchError
from .optim import AdamState

__all__ = [
    "Checkpoint",
    "AdamSnapshot",
    "save_checkpoint",
    "load_checkpoint",
    "snapshot_adam",
    "restore_adam",
    "apply_params",
    "PHASE_DENOISE_ONLY",
    "PHASE_JOINT",
]

_MAGIC = b"CRNNDNZC"
_VERSION = 1

PHASE_DENOISE_ONLY = "denoise_only"
PHASE_JOINT = "joint"
_PHASE_CODES = {PHASE_DENOISE_ONLY: 0, PHASE_JOINT: 1}
_PHASE_NAMES = {code: name for name, code in _PHASE_CODES.items()}

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPE_NAMES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


@dataclass
class AdamSnapshot:
    """Plain-data image of one optimizer state."""

    lr: float
    beta1: float
    beta2: float
    epsilon: float
    weight_decay: float
    step: int
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class Checkpoint:
    config_text: str
    phase: str
    epoch: int
    best_val: float
    epochs_since_improvement: int
    params: dict[str, np.ndarray]
    adam: list[AdamSnapshot] = field(default_factory=list)


def snapshot_adam(state: AdamState) -> AdamSnapshot:
    return AdamSnapshot(
        lr=state.lr,
        beta1=state.beta1,
        beta2=state.beta2,
        epsilon=state.epsilon,
        weight_decay=state.weight_decay,
        step=state.step,
        m={k: np.array(v, copy=True) for k, v in state.m.items()},
        v={k: np.array(v, copy=True) for k, v in state.v.items()},
    )


def restore_adam(snap: AdamSnapshot) -> AdamState:
    state = AdamState(
        lr=snap.lr,
        beta1=snap.beta1,
        beta2=snap.beta2,
        epsilon=snap.epsilon,
        weight_decay=snap.weight_decay,
    )
    state.step = snap.step
    state.m = {k: np.array(v, copy=True) for k, v in snap.m.items()}
    state.v = {k: np.array(v, copy=True) for k, v in snap.v.items()}
    return state


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------


def _pack_array(out: list[bytes], arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    code = _DTYPE_CODES.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise CheckpointError(f"cannot store array of dtype {arr.dtype}; use float32 or float64")
    if arr.ndim > 255:
        raise CheckpointError(f"array rank {arr.ndim} too large to store")
    out.append(struct.pack("<BB", code, arr.ndim))
    out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    out.append(arr.astype(_DTYPE_NAMES[code], copy=False).tobytes())


def _pack_table(out: list[bytes], table: dict[str, np.ndarray]) -> None:
    out.append(struct.pack("<I", len(table)))
    for name, arr in table.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"parameter name too long: {name[:40]}...")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        _pack_array(out, arr)


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    """Write atomically: the file appears complete or not at all."""
    if ckpt.phase not in _PHASE_CODES:
        raise CheckpointError(f"unknown training phase {ckpt.phase!r}")
    out: list[bytes] = [_MAGIC, struct.pack("<I", _VERSION)]
    blob = ckpt.config_text.encode("utf-8")
    out.append(struct.pack("<Q", len(blob)))
    out.append(blob)
    out.append(
        struct.pack(
            "<BIdI",
            _PHASE_CODES[ckpt.phase],
            ckpt.epoch,
            ckpt.best_val,
            ckpt.epochs_since_improvement,
        )
    )
    _pack_table(out, ckpt.params)
    out.append(struct.pack("<B", len(ckpt.adam)))
    for snap in ckpt.adam:
        out.append(
            struct.pack(
                "<dddddQ", snap.lr, snap.beta1, snap.beta2, snap.epsilon, snap.weight_decay, snap.step
            )
        )
        _pack_table(out, snap.m)
        _pack_table(out, snap.v)
    data = b"".join(out)
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# reading
# ---------------------------------------------------------------------------


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint file")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_array(cur: _Cursor) -> np.ndarray:
    code, ndim = cur.unpack("<BB")
    dtype = _DTYPE_NAMES.get(code)
    if dtype is None:
        raise CheckpointError(f"unknown array dtype code {code}")
    shape = cur.unpack(f"<{ndim}I")
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    raw = cur.take(count * dtype.itemsize)
    return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def _read_table(cur: _Cursor) -> dict[str, np.ndarray]:
    (count,) = cur.unpack("<I")
    table: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = cur.unpack("<H")
        name = cur.take(name_len).decode("utf-8")
        table[name] = _read_array(cur)
    return table


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    # unreadable paths are I/O errors; CheckpointError is reserved for files
    # whose contents cannot be decoded
    with open(path, "rb") as fh:
        data = fh.read()
    cur = _Cursor(data)
    if cur.take(len(_MAGIC)) != _MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file (bad magic)")
    (version,) = cur.unpack("<I")
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {_VERSION})")
    (blob_len,) = cur.unpack("<Q")
    config_text = cur.take(blob_len).decode("utf-8")
    phase_code, epoch, best_val, since = cur.unpack("<BIdI")
    phase = _PHASE_NAMES.get(phase_code)
    if phase is None:
        raise CheckpointError(f"unknown training phase code {phase_code}")
    params = _read_table(cur)
    (n_adam,) = cur.unpack("<B")
    adam: list[AdamSnapshot] = []
    for _ in range(n_adam):
        lr, beta1, beta2, epsilon, weight_decay, step = cur.unpack("<dddddQ")
        m = _read_table(cur)
        v = _read_table(cur)
        adam.append(
            AdamSnapshot(
                lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon,
                weight_decay=weight_decay, step=step, m=m, v=v,
            )
        )
    if cur.pos != len(data):
        raise CheckpointError(f"{len(data) - cur.pos} trailing bytes after checkpoint payload")
    return Checkpoint(
        config_text=config_text,
        phase=phase,
        epoch=epoch,
        best_val=best_val,
        epochs_since_improvement=since,
        params=params,
        adam=adam,
    )


def apply_params(stored: dict[str, np.ndarray], model: dict[str, Tensor]) -> None:
    """Copy stored arrays into live model tensors, validating the fit."""
    missing = sorted(set(model) - set(stored))
    extra = sorted(set(stored) - set(model))
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing parameters: {', '.join(missing[:5])}")
        if extra:
            parts.append(f"unexpected parameters: {', '.join(extra[:5])}")
        raise CheckpointMismatchError("checkpoint does not match the model (" + "; ".join(parts) + ")")
    for name, tensor in model.items():
        arr = stored[name]
        if arr.shape != tensor.shape:
            raise CheckpointMismatchError(
                f"checkpoint parameter {name} has shape {arr.shape}, model expects {tensor.shape}"
            )
        tensor.data[...] = arr.astype(tensor.dtype, copy=False)
