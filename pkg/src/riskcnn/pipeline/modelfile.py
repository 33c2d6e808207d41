"""Binary model file.

Layout: 8-byte magic ``RISKCNN1``, little-endian uint32 header length, a
JSON header (architecture, layer manifest), then little-endian float32
parameter blobs in manifest order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import BadMagicError, ModelFormatError, ShapeMismatchError, TruncatedModelError
from ..nn import Architecture, check_params

MAGIC = b"RISKCNN1"
FORMAT_VERSION = 1


def save_model(path, params: dict[str, np.ndarray], arch: Architecture, disparity_scale: float) -> None:
    check_params(params, arch)
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": arch.to_dict(),
        "disparity_scale": disparity_scale,
        "layers": [{"name": k, "shape": list(v.shape), "dtype": "float32"} for k, v in params.items()],
    }
    blob = json.dumps(header, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for v in params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_model(path) -> tuple[dict[str, np.ndarray], Architecture, dict]:
    """Returns ``(params, architecture, header)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:len(MAGIC)]!r}")
    if len(data) < len(MAGIC) + 4:
        raise TruncatedModelError(f"{path}: truncated before header length")
    (hlen,) = struct.unpack_from("<I", data, len(MAGIC))
    off = len(MAGIC) + 4
    if len(data) < off + hlen:
        raise TruncatedModelError(f"{path}: truncated header")
    try:
        header = json.loads(data[off : off + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"{path}: unreadable header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {header.get('format_version')}")
    arch = Architecture.from_dict(header["architecture"])
    expected = arch.param_shapes()
    layers = header["layers"]
    if [l["name"] for l in layers] != list(expected):
        raise ShapeMismatchError(f"{path}: layer manifest does not match the architecture")
    off += hlen
    params = {}
    for layer in layers:
        shape = tuple(layer["shape"])
        if shape != expected[layer["name"]]:
            raise ShapeMismatchError(f"{path}: {layer['name']} has shape {shape}, architecture needs {expected[layer['name']]}")
        n = int(np.prod(shape))
        if len(data) < off + 4 * n:
            raise TruncatedModelError(f"{path}: truncated in {layer['name']}")
        params[layer["name"]] = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape).astype(np.float32)
        off += 4 * n
    if off != len(data):
        raise ModelFormatError(f"{path}: {len(data) - off} trailing bytes")
    return params, arch, header
