"""Binary model checkpoints.

Layout (little-endian)::

    b"GMEM" | u32 version | u64 header_len | header (UTF-8 JSON) | payload

The JSON header carries the model spec, the ordered array directory
(name, shape) and free-form metadata.  The payload is the float64
concatenation of, in order: parameters, running statistics, optional
normalization mean/scale, optional Adam first and second moments.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..featurize import NormStats
from .model import Model, ModelSpec
from .optim import AdamState

MAGIC = b"GMEM"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: Model
    norm: NormStats | None = None
    adam: AdamState | None = None
    meta: dict = field(default_factory=dict)


def checkpoint_bytes(
    model: Model,
    norm: NormStats | None = None,
    adam: AdamState | None = None,
    meta: dict | None = None,
) -> bytes:
    arrays: list[tuple[str, np.ndarray]] = []
    arrays += [(f"param/{k}", v) for k, v in model.param_dict().items()]
    arrays += [(f"state/{k}", v) for k, v in model.state_dict().items()]
    if norm is not None:
        arrays += [("norm/mean", norm.mean), ("norm/scale", norm.scale)]
    adam_info = None
    if adam is not None:
        names = list(model.param_dict())
        if adam.m:
            arrays += [(f"adam_m/{k}", adam.m[k]) for k in names]
            arrays += [(f"adam_v/{k}", adam.v[k]) for k in names]
        adam_info = {**adam.hyperparameters(), "t": adam.t, "has_moments": bool(adam.m)}
    header = {
        "model": model.spec.to_dict(),
        "arrays": [[name, list(np.shape(a))] for name, a in arrays],
        "adam": adam_info,
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    return MAGIC + struct.pack("<IQ", VERSION, len(hbytes)) + hbytes + payload


def parse_checkpoint(data: bytes) -> Checkpoint:
    if data[:4] != MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    try:
        version, hlen = struct.unpack_from("<IQ", data, 4)
    except struct.error:
        raise CheckpointError("truncated checkpoint header") from None
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = 16
    try:
        header = json.loads(data[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    offset = start + hlen
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointError("truncated checkpoint payload")
        arrays[name] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    if offset != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")

    model = Model(ModelSpec.from_dict(header["model"]))

    def group(prefix):
        return {k[len(prefix) :]: v for k, v in arrays.items() if k.startswith(prefix)}

    model.load_state(group("param/"), group("state/"))
    norm = None
    if "norm/mean" in arrays:
        norm = NormStats(arrays["norm/mean"], arrays["norm/scale"])
    adam = None
    info = header.get("adam")
    if info is not None:
        adam = AdamState(info["lr"], info["beta1"], info["beta2"], info["eps"], info["t"])
        if info["has_moments"]:
            adam.m = group("adam_m/")
            adam.v = group("adam_v/")
    return Checkpoint(model, norm, adam, header.get("meta", {}))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())
