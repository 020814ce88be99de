"""Binary CNN checkpoints.

Layout (little-endian)::

    magic        8 bytes  b"EHRCNN1\\0"
    version      u32      1
    input_mode   u8       index into MODE_CODES
    V, D         u64, u64 vocabulary size, embedding width
    n_banks      u32
    (F, K)       u32, u32 per bank
    dense        u32, u32 input width, output width
    body         float64 arrays, C order: frozen table (W2vFixed/Both),
                 trainable table (all but W2vFixed), per bank weights
                 (K x F x D_in) then bias (K), dense weight, dense bias

A ``.json`` sidecar repeats the header for people.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .cnn import CnnModel, Conv1dBank, InputMode

MAGIC = b"EHRCNN1\0"
VERSION = 1
MODE_CODES = (InputMode.W2V_FIXED, InputMode.W2V_FINETUNE, InputMode.RAND,
              InputMode.RAW, InputMode.BOTH)
_F8 = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def header(model: CnnModel) -> dict:
    return {
        "magic": MAGIC.decode("ascii").rstrip("\0"),
        "version": VERSION,
        "input_mode": model.input_mode.value,
        "vocab_size": model.vocab_size,
        "embed_dim": model.embed_dim,
        "banks": [{"filter_size": b.filter_size, "filter_count": b.filter_count}
                  for b in model.banks],
        "dense": list(model.dense_weight.shape),
    }


def save_model(model: CnnModel, path) -> Path:
    path = Path(path)
    parts = [MAGIC, struct.pack("<IB", VERSION, MODE_CODES.index(model.input_mode)),
             struct.pack("<QQ", model.vocab_size, model.embed_dim),
             struct.pack("<I", len(model.banks))]
    parts += [struct.pack("<II", b.filter_size, b.filter_count) for b in model.banks]
    parts.append(struct.pack("<II", *model.dense_weight.shape))
    arrays = [a for a in (model.frozen, model.table) if a is not None]
    for b in model.banks:
        arrays += [b.weights, b.bias]
    arrays += [model.dense_weight, model.dense_bias]
    parts += [np.ascontiguousarray(a, dtype=_F8).tobytes() for a in arrays]
    path.write_bytes(b"".join(parts))
    side = path.with_name(path.name + ".json")
    side.write_text(json.dumps(header(model), indent=2) + "\n", encoding="utf-8")
    return side


def load_model(path) -> CnnModel:
    data = Path(path).read_bytes()
    pos = 0

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise CheckpointError(f"{path}: truncated header")
        out = struct.unpack_from(fmt, data, pos)
        pos += size
        return out

    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a CNN checkpoint")
    pos = 8
    version, mode_code = take("<IB")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if mode_code >= len(MODE_CODES):
        raise CheckpointError(f"{path}: unknown input mode {mode_code}")
    mode = MODE_CODES[mode_code]
    vocab_size, dim = take("<QQ")
    (n_banks,) = take("<I")
    shapes = [take("<II") for _ in range(n_banks)]
    d_out = take("<II")
    d_in = 2 * dim if mode is InputMode.BOTH else dim

    def array(shape):
        nonlocal pos
        n = int(np.prod(shape)) * 8
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated body")
        a = np.frombuffer(data, dtype=_F8, count=n // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += n
        return a

    frozen = array((vocab_size, dim)) if mode in (InputMode.W2V_FIXED, InputMode.BOTH) else None
    table = array((vocab_size, dim)) if mode is not InputMode.W2V_FIXED else None
    banks = []
    for f, k in shapes:
        w = array((k, f, d_in))
        banks.append(Conv1dBank(w, array((k,))))
    dense_w = array(tuple(d_out))
    dense_b = array((d_out[1],))
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return CnnModel(mode, vocab_size, banks, dense_w, dense_b, table, frozen)
