"""Binary checkpoint of a :class:`SurrogateModel` and its scaler.

Byte layout (all integers little-endian uint32, all reals little-endian float64)::

    offset 0   magic      8 bytes  b"IFGRU\\x00\\x00\\x01"
    offset 8   version    u32      (currently 1)
               n_in       u32
               n_out      u32
               n_layers   u32
               hidden     u32 * n_layers
    then for each layer:  W (n_in_l * 3H), U (H * 3H), b (3H)   row-major f64
    then head:            head_W (H_last * n_out), head_b (n_out)
               has_scaler u32      (0 or 1)
    if has_scaler:        in_mean, in_std, in_lo, in_hi (n_in each),
                          out_mean, out_std (n_out each)
"""
from __future__ import annotations

import struct

import numpy as np

from ..dataset import ScalerParams
from .gru import GruLayer, SurrogateModel

MAGIC = b"IFGRU\x00\x00\x01"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _f64(a):
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def save_checkpoint(path, model: SurrogateModel, scaler: ScalerParams = None):
    parts = [MAGIC, struct.pack("<4I", VERSION, model.n_in, model.n_out, len(model.layers)),
             struct.pack(f"<{len(model.layers)}I", *model.hidden_sizes)]
    for p in model.parameters():
        parts.append(_f64(p))
    if scaler is None:
        parts.append(struct.pack("<I", 0))
    else:
        parts.append(struct.pack("<I", 1))
        lo = scaler.in_lo if scaler.in_lo is not None else np.full(model.n_in, -np.inf)
        hi = scaler.in_hi if scaler.in_hi is not None else np.full(model.n_in, np.inf)
        for a in (scaler.in_mean, scaler.in_std, lo, hi, scaler.out_mean, scaler.out_std):
            parts.append(_f64(a))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path):
    """Returns ``(model, scaler_or_None)``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a surrogate checkpoint")
    version, n_in, n_out, n_layers = struct.unpack_from("<4I", buf, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 24
    hidden = struct.unpack_from(f"<{n_layers}I", buf, pos)
    pos += 4 * n_layers

    def take(*shape):
        nonlocal pos
        n = int(np.prod(shape))
        a = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).astype(float).reshape(shape)
        pos += 8 * n
        return a

    layers = []
    prev = n_in
    for H in hidden:
        layers.append(GruLayer(take(prev, 3 * H), take(H, 3 * H), take(3 * H)))
        prev = H
    model = SurrogateModel(layers, take(prev, n_out), take(n_out))
    (has_scaler,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    scaler = None
    if has_scaler:
        im, isd, lo, hi = take(n_in), take(n_in), take(n_in), take(n_in)
        om, osd = take(n_out), take(n_out)
        scaler = ScalerParams(im, isd, om, osd, lo, hi)
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return model, scaler
