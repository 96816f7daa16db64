"""Binary container formats.

ckpt-v1
    magic "ckpt-v1\\0", uint64-LE header length, JSON header, then the raw
    little-endian float64 arrays in the order declared by the header.  Each
    ParamStore entry contributes value, Adam m, Adam v (in that order) so a
    round-trip is bit-exact including optimizer state.

refstates-v1
    magic "refstates-v1\\0", uint64-LE header length, JSON header listing
    (L, lambda, N, names, d0_bar), then one complex coefficient array per
    reference state as interleaved little-endian f64 (re, im) pairs.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .autodiff import ParamStore

CKPT_MAGIC = b"ckpt-v1\x00"
REFSTATES_MAGIC = b"refstates-v1\x00"


def _write_atomic(path, payload):
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)


def _pack(magic, header, arrays):
    blob = json.dumps(header).encode()
    out = [magic, struct.pack("<Q", len(blob)), blob]
    for a in arrays:
        out.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(out)


def _unpack(path, magic):
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(magic):
        raise ValueError(f"{path}: bad magic, expected {magic!r}")
    off = len(magic)
    (hlen,) = struct.unpack_from("<Q", data, off)
    off += 8
    header = json.loads(data[off : off + hlen].decode())
    return header, data, off + hlen


def save_checkpoint(path, stores, scalars=None, meta=None, rng_state=None):
    """Write a dict of named ParamStores plus scalar values and metadata."""
    header = {"format": "ckpt-v1", "stores": {}, "scalars": scalars or {}}
    if meta is not None:
        header["meta"] = meta
    if rng_state is not None:
        header["rng_state"] = rng_state
    arrays = []
    for sname, store in stores.items():
        entries = []
        for name in store.names():
            e = store.entry(name)
            entries.append(
                {
                    "name": name,
                    "shape": list(e["value"].shape),
                    "trainable": e["trainable"],
                    "step": e["step"],
                }
            )
            arrays.extend([e["value"], e["m"], e["v"]])
        header["stores"][sname] = entries
    _write_atomic(path, _pack(CKPT_MAGIC, header, arrays))


def load_checkpoint(path):
    """Returns (stores: {name: ParamStore}, scalars, meta, rng_state)."""
    header, data, off = _unpack(path, CKPT_MAGIC)
    stores = {}
    for sname, entries in header["stores"].items():
        store = ParamStore()
        for ent in entries:
            shape = tuple(ent["shape"])
            n = int(np.prod(shape)) if shape else 1
            vals = []
            for _ in range(3):
                arr = np.frombuffer(data, dtype="<f8", count=n, offset=off)
                off += n * 8
                vals.append(arr.reshape(shape).astype(np.float64))
            store.add(ent["name"], vals[0], trainable=ent["trainable"])
            e = store.entry(ent["name"])
            e["m"], e["v"], e["step"] = vals[1], vals[2], ent["step"]
        stores[sname] = store
    return (
        stores,
        header.get("scalars", {}),
        header.get("meta"),
        header.get("rng_state"),
    )


def save_refstates(path, L, lam, N, states):
    """`states`: list of (name, coeffs complex array, d0_bar or None)."""
    header = {
        "format": "refstates-v1",
        "L": L,
        "lambda": lam,
        "N": N,
        "states": [
            {"name": name, "n_coeffs": len(c), "d0_bar": d0}
            for name, c, d0 in states
        ],
    }
    arrays = []
    for _, coeffs, _ in states:
        inter = np.empty(2 * len(coeffs))
        inter[0::2] = coeffs.real
        inter[1::2] = coeffs.imag
        arrays.append(inter)
    _write_atomic(path, _pack(REFSTATES_MAGIC, header, arrays))


def load_refstates(path):
    """Returns (L, lambda, N, [(name, coeffs, d0_bar), ...])."""
    header, data, off = _unpack(path, REFSTATES_MAGIC)
    states = []
    for ent in header["states"]:
        n = ent["n_coeffs"]
        inter = np.frombuffer(data, dtype="<f8", count=2 * n, offset=off)
        off += 16 * n
        coeffs = inter[0::2] + 1j * inter[1::2]
        states.append((ent["name"], coeffs, ent["d0_bar"]))
    return header["L"], header["lambda"], header["N"], states
