"""
GEC1 checkpoint persistence.

Layout:
    b"GEC1" | uint32 LE header length | UTF-8 JSON header | float64 LE blobs

The header declares the architecture, the tensor order with shapes, the
training config and seed. Blobs follow in header order with no padding.
"""

import json
import logging
import math
import os
import struct
import tempfile
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ml.exceptions import ConfigError, FormatError
from ml.nn import Network, NetworkSpec
from ml.tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"GEC1"
FORMAT_VERSION = 1
_PREFIX = len(MAGIC) + 4


def _header_for(net: Network, config: Optional[Dict[str, Any]], seed: Optional[int]) -> Dict[str, Any]:
    return {
        "format": "GEC1",
        "version": FORMAT_VERSION,
        "architecture": net.spec.to_dict(),
        "tensors": [{"name": info.name, "shape": list(info.shape)} for info in net.spec.params()],
        "config": config or {},
        "seed": seed,
        "created_by": "ge_toolkit",
        "parameter_hash": net.parameter_hash(),
    }


def save_checkpoint(net: Network, path: str, config: Optional[Dict[str, Any]] = None,
                    seed: Optional[int] = None) -> str:
    """Write ``net`` atomically (temp file in the target directory, then rename)."""
    header = json.dumps(_header_for(net, config, seed), sort_keys=True, default=str).encode("utf-8")
    params = net.params

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".gec_", dir=directory)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", len(header)))
            f.write(header)
            for info in net.spec.params():
                f.write(np.ascontiguousarray(params[info.name].data, dtype="<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    logger.info(f"Saved {net.spec.label} checkpoint to {path}")
    return path


def read_header(path: str) -> Tuple[Dict[str, Any], int]:
    """Return the parsed header and the byte offset where blobs start."""
    with open(path, "rb") as f:
        prefix = f.read(_PREFIX)
        if len(prefix) < len(MAGIC) or prefix[:len(MAGIC)] != MAGIC:
            raise FormatError(f"{path}: not a GEC1 checkpoint (bad magic)", offset=0)
        if len(prefix) < _PREFIX:
            raise FormatError(f"{path}: truncated header length", offset=len(MAGIC))
        (length,) = struct.unpack("<I", prefix[len(MAGIC):])
        raw = f.read(length)
    if len(raw) != length:
        raise FormatError(f"{path}: header declares {length} bytes, file has {len(raw)}", offset=_PREFIX)
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: header is not valid UTF-8 JSON ({e})", offset=_PREFIX) from e
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header must be a JSON object", offset=_PREFIX)
    for key in ("architecture", "tensors"):
        if key not in header:
            raise FormatError(f"{path}: header lacks '{key}'", offset=_PREFIX)
    return header, _PREFIX + length


def _declared_tensors(path: str, entries: Any) -> List[Tuple[str, Tuple[int, ...]]]:
    if not isinstance(entries, list):
        raise FormatError(f"{path}: header 'tensors' must be a list", offset=_PREFIX)
    declared = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or not {"name", "shape"} <= set(entry):
            raise FormatError(f"{path}: tensor entry {i} needs a name and a shape", offset=_PREFIX)
        shape = entry["shape"]
        if not isinstance(shape, list) or not all(isinstance(n, int) and n >= 0 for n in shape):
            raise FormatError(f"{path}: tensor entry {i} has an invalid shape {shape!r}", offset=_PREFIX,
                              tensor=str(entry["name"]))
        declared.append((entry["name"], tuple(shape)))
    return declared


def load_checkpoint(path: str) -> Network:
    """Load a frozen Network; any size or layout inconsistency raises FormatError."""
    if not os.path.exists(path):
        raise ConfigError(f"checkpoint not found: {path}")
    header, offset = read_header(path)
    try:
        spec = NetworkSpec.from_dict(header["architecture"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: invalid architecture in header ({e})", offset=_PREFIX) from e

    declared = _declared_tensors(path, header["tensors"])
    expected = [(info.name, tuple(info.shape)) for info in spec.params()]
    if declared != expected:
        raise FormatError(f"{path}: declared tensors do not match the architecture", offset=_PREFIX)

    with open(path, "rb") as f:
        f.seek(offset)
        body = f.read()

    params = {}
    pos = 0
    for name, shape in declared:
        nbytes = 8 * math.prod(shape)
        if pos + nbytes > len(body):
            raise FormatError(f"{path}: truncated blob for tensor '{name}' "
                              f"(needs {nbytes} bytes, {len(body) - pos} left)",
                              offset=offset + pos, tensor=name)
        arr = np.frombuffer(body, dtype="<f8", count=math.prod(shape), offset=pos).reshape(shape)
        params[name] = Tensor(arr.astype(np.float64))
        pos += nbytes
    if pos != len(body):
        raise FormatError(f"{path}: {len(body) - pos} trailing bytes after last tensor", offset=offset + pos)

    logger.info(f"Loaded {spec.label} checkpoint from {path}")
    return Network(spec, params, frozen=True)
