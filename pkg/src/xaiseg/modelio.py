"""Model container: magic, JSON manifest, little-endian float32 blob.

Layout::

    b"XAISEG01" | u32 manifest length | manifest (UTF-8 JSON) | blob

The manifest lists the format version, input shape, and for every layer its
spec plus the shapes and byte offsets (relative to the blob start) of its
weight and bias. The blob stores weight then bias per layer, row-major.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .imageio import FormatError
from .net import Network, layer_from_dict

MAGIC = b"XAISEG01"
FORMAT_VERSION = 1


class IntegrityError(FormatError):
    pass


def model_bytes(net: Network, extra: dict | None = None) -> bytes:
    layers, chunks, offset = [], [], 0
    for layer, p in zip(net.layers, net.params):
        entry = {"spec": layer.to_dict()}
        if p is not None:
            tensors = []
            for a in p:
                raw = np.ascontiguousarray(a, dtype="<f4").tobytes()
                tensors.append({"shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
                chunks.append(raw)
                offset += len(raw)
            entry["weight"], entry["bias"] = tensors
        layers.append(entry)
    manifest = {
        "format_version": FORMAT_VERSION,
        "input_shape": list(net.input_shape),
        "layers": layers,
        "blob_bytes": offset,
        "extra": extra or {},
    }
    text = json.dumps(manifest, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(text)) + text + b"".join(chunks)


def save_model(net: Network, path, extra: dict | None = None) -> None:
    Path(path).write_bytes(model_bytes(net, extra))


def read_manifest(buf: bytes) -> tuple[dict, bytes]:
    if buf[: len(MAGIC)] != MAGIC:
        raise FormatError("not a model file (bad magic)")
    head = len(MAGIC) + 4
    if len(buf) < head:
        raise FormatError("truncated model header")
    (n,) = struct.unpack("<I", buf[len(MAGIC) : head])
    try:
        manifest = json.loads(buf[head : head + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable model manifest: {exc}") from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {version!r}")
    return manifest, buf[head + n :]


def load_model(path) -> Network:
    return model_from_bytes(Path(path).read_bytes())


def model_from_bytes(buf: bytes) -> Network:
    manifest, blob = read_manifest(buf)
    if len(blob) != manifest.get("blob_bytes"):
        raise IntegrityError(f"blob holds {len(blob)} bytes, manifest declares {manifest.get('blob_bytes')}")
    layers, params, used = [], [], 0
    for entry in manifest["layers"]:
        layer = layer_from_dict(entry["spec"])
        layers.append(layer)
        if "weight" not in entry:
            params.append(None)
            continue
        pair = []
        for key in ("weight", "bias"):
            t = entry[key]
            shape, off, nbytes = tuple(t["shape"]), t["offset"], t["nbytes"]
            if nbytes != 4 * int(np.prod(shape)) or off + nbytes > len(blob):
                raise IntegrityError(f"{layer.kind} {key}: shape {shape} inconsistent with blob")
            pair.append(np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=off).reshape(shape).astype(np.float32))
            used += nbytes
        params.append(tuple(pair))
    if used != len(blob):
        raise IntegrityError(f"manifest accounts for {used} of {len(blob)} blob bytes")
    try:
        return Network(tuple(layers), params, tuple(manifest["input_shape"]))
    except ValueError as exc:
        raise IntegrityError(str(exc)) from None


def load_extra(path) -> dict:
    manifest, _ = read_manifest(Path(path).read_bytes())
    return manifest.get("extra", {})
