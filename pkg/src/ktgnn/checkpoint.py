"""Flat binary checkpoints: an 8-byte little-endian header length, a JSON
header (parameter names, shapes, dtype, training config), then the raw
parameter bytes concatenated in header order."""

import json
import struct

import numpy as np

from .errors import DataError

MAGIC = "ktgnn-checkpoint"


def save_checkpoint(path, state, config):
    names = list(state.keys())
    dtype = str(next(iter(state.values())).dtype) if state else "float64"
    header = {"magic": MAGIC, "dtype": dtype, "config": config,
              "params": [{"name": n, "shape": list(state[n].shape)} for n in names]}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(state[n]).tobytes())


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}")
    if len(raw) < 8:
        raise DataError(f"{path}: truncated checkpoint")
    (hlen,) = struct.unpack("<Q", raw[:8])
    try:
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise DataError(f"{path}: corrupt checkpoint header")
    if header.get("magic") != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    dtype = np.dtype(header["dtype"])
    state = {}
    offset = 8 + hlen
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * dtype.itemsize
        chunk = raw[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise DataError(f"{path}: truncated parameter {entry['name']}")
        state[entry["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
        offset += nbytes
    return state, header["config"]
