"""Binary checkpoint holding a flow and its latent mixture.

Layout: 8-byte magic, little-endian uint32 format version, uint64 header
length, a UTF-8 JSON header, then every tensor as raw little-endian float64
in header order.  Values round-trip bit-exactly.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .flow import PARAM_NAMES, FlowModel
from .latent_gmm import GaussianMixture

__all__ = ["CheckpointError", "load_checkpoint", "save_checkpoint", "dump_checkpoint", "parse_checkpoint"]

MAGIC = b"FLOWGMM\x00"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


def _tensors(flow: FlowModel, gmm: GaussianMixture):
    for i, layer in enumerate(flow.layers):
        for name in PARAM_NAMES:
            yield f"layer{i}.{name}", getattr(layer, name).values
    yield "means", gmm.means
    yield "log_priors", gmm.log_priors


def dump_checkpoint(flow: FlowModel, gmm: GaussianMixture, extra: dict | None = None) -> bytes:
    if gmm.dim != flow.dim:
        raise CheckpointError(f"mixture dim {gmm.dim} does not match flow dim {flow.dim}")
    tensors = list(_tensors(flow, gmm))
    header = {
        "dim": flow.dim,
        "n_layers": flow.n_layers,
        "hidden": flow.hidden,
        "masks": [layer.mask.astype(int).tolist() for layer in flow.layers],
        "n_classes": gmm.n_classes,
        # float.hex keeps the exact bits through JSON
        "log_var": float(gmm.log_var).hex(),
        "tensors": [[name, list(arr.shape)] for name, arr in tensors],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in tensors)
    return _PREFIX.pack(MAGIC, VERSION, len(blob)) + blob + body


def parse_checkpoint(data: bytes) -> tuple[FlowModel, GaussianMixture, dict]:
    if len(data) < _PREFIX.size:
        raise CheckpointError("file too short to be a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    offset = start + hlen

    arrays = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointError(f"checkpoint truncated while reading {name}")
        arrays[name] = np.frombuffer(data[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(data):
        raise CheckpointError("trailing bytes after last tensor")

    masks = [np.asarray(m, dtype=bool) for m in header["masks"]]
    flow = FlowModel(header["dim"], header["n_layers"], header["hidden"], masks=masks)
    for i, layer in enumerate(flow.layers):
        for name in PARAM_NAMES:
            target = getattr(layer, name).values
            src = arrays[f"layer{i}.{name}"]
            if src.shape != target.shape:
                raise CheckpointError(f"layer{i}.{name}: shape {src.shape} != {target.shape}")
            target[...] = src
    gmm = GaussianMixture(arrays["means"], float.fromhex(header["log_var"]), arrays["log_priors"])
    return flow, gmm, header.get("extra", {})


def save_checkpoint(path, flow: FlowModel, gmm: GaussianMixture, extra: dict | None = None) -> None:
    data = dump_checkpoint(flow, gmm, extra)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[FlowModel, GaussianMixture, dict]:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    return parse_checkpoint(data)
