"""Binary containers for checkpoints, extractor weights and class-embedding tables.

Blob container layout (all integers little-endian)::

    offset 0   4 bytes   magic
    offset 4   u32       format version
    offset 8   u64       header length H in bytes
    offset 16  H bytes   UTF-8 JSON header
    offset 16+H          blob data; each header entry gives its dtype, shape,
                         offset (relative to the start of blob data) and nbytes

The JSON header has keys ``kind``, ``meta`` (free-form, e.g. the run config
and growth schedule) and ``blobs`` (list of entries in file order).

Embedding sidecar layout::

    offset 0   4 bytes   magic ``SGXE``
    offset 4   u32       format version
    offset 8   u32       class_count
    offset 12  u32       embedding dimension d_e
    offset 16  u16       length L of the source identifier
    offset 18  L bytes   UTF-8 source identifier
    offset 18+L          class_count * d_e float32 values, row-major, one row per class
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

CHECKPOINT_MAGIC = b"SGXL"
EMBEDDING_MAGIC = b"SGXE"
FORMAT_VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "uint8": "u1", "bool": "u1"}


class ContainerError(IOError):
    pass


class VersionMismatchError(ContainerError):
    pass


def _as_numpy(value):
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu()
        if value.dtype == torch.bfloat16 or value.dtype == torch.float16:
            value = value.float()
        value = value.numpy()
    return np.asarray(value)


def write_container(path, kind: str, meta: dict, blobs: dict, version: int = FORMAT_VERSION):
    """Write named arrays plus a JSON ``meta`` dict to ``path``."""
    entries, chunks, offset = [], [], 0
    for name, value in blobs.items():
        arr = _as_numpy(value)
        dtype = "bool" if arr.dtype == np.bool_ else str(arr.dtype)
        if dtype not in _DTYPES:
            raise TypeError(f"blob {name!r}: unsupported dtype {dtype}")
        raw = np.ascontiguousarray(arr.astype(_DTYPES[dtype])).tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"kind": kind, "meta": meta, "blobs": entries}).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IQ", version, len(header)))
        f.write(header)
        for c in chunks:
            f.write(c)
    tmp.replace(path)
    return path


def read_container(path, kind: str | None = None):
    """Return ``(meta, blobs)``; blobs are numpy arrays keyed by name."""
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise ContainerError(f"{path}: truncated file ({len(data)} bytes)")
    if data[:4] != CHECKPOINT_MAGIC:
        raise ContainerError(f"{path}: bad magic {data[:4]!r}")
    version, hlen = struct.unpack("<IQ", data[4:16])
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: container version {version}, this build reads {FORMAT_VERSION}")
    if len(data) < 16 + hlen:
        raise ContainerError(f"{path}: truncated header")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except ValueError as exc:
        raise ContainerError(f"{path}: corrupt header") from exc
    if kind is not None and header.get("kind") != kind:
        raise ContainerError(f"{path}: expected a {kind!r} container, found {header.get('kind')!r}")
    base = 16 + hlen
    blobs = {}
    for e in header["blobs"]:
        start, end = base + e["offset"], base + e["offset"] + e["nbytes"]
        if end > len(data):
            raise ContainerError(f"{path}: truncated at blob {e['name']!r}")
        arr = np.frombuffer(data[start:end], dtype=_DTYPES[e["dtype"]]).reshape(e["shape"])
        if e["dtype"] == "bool":
            arr = arr.astype(bool)
        blobs[e["name"]] = arr.copy()
    return header["meta"], blobs


def state_dict_blobs(module: torch.nn.Module, prefix: str) -> dict:
    return {f"{prefix}/{k}": v for k, v in module.state_dict().items()}


def load_state_blobs(module: torch.nn.Module, blobs: dict, prefix: str):
    state = {k[len(prefix) + 1:]: torch.from_numpy(v) for k, v in blobs.items() if k.startswith(prefix + "/")}
    module.load_state_dict(state)


# --- feature-network weights ---------------------------------------------------

def save_extractor_weights(net, path):
    meta = {"name": net.name, "taps": list(net.tap_names), "input_resolution": net.input_resolution}
    return write_container(path, "extractor", meta, state_dict_blobs(net, "weights"))


def load_extractor_weights(net, path):
    """Load weights into ``net``; the stored name and tap list must match."""
    meta, blobs = read_container(path, "extractor")
    if meta["name"] != net.name or list(meta["taps"]) != list(net.tap_names):
        raise ContainerError(f"{path}: weights for {meta['name']} {meta['taps']}, "
                             f"network is {net.name} {list(net.tap_names)}")
    load_state_blobs(net, blobs, "weights")
    return net


# --- class-embedding sidecar ---------------------------------------------------

def write_embeddings(path, table: np.ndarray, source: str):
    table = np.ascontiguousarray(_as_numpy(table), dtype="<f4")
    if table.ndim != 2:
        raise ValueError("embedding table must be 2-D")
    src = source.encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(EMBEDDING_MAGIC)
        f.write(struct.pack("<IIIH", FORMAT_VERSION, table.shape[0], table.shape[1], len(src)))
        f.write(src)
        f.write(table.tobytes())
    return path


def read_embeddings(path):
    """Return ``(table [C, d_e] float32, source)``."""
    data = Path(path).read_bytes()
    if len(data) < 18 or data[:4] != EMBEDDING_MAGIC:
        raise ContainerError(f"{path}: not an embedding sidecar")
    version, count, dim, slen = struct.unpack("<IIIH", data[4:18])
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: sidecar version {version}, this build reads {FORMAT_VERSION}")
    start = 18 + slen
    need = start + 4 * count * dim
    if len(data) < need:
        raise ContainerError(f"{path}: truncated ({len(data)} of {need} bytes)")
    source = data[18:start].decode("utf-8")
    table = np.frombuffer(data[start:need], dtype="<f4").reshape(count, dim).copy()
    return table, source
