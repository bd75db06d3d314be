"""Binary checkpoint layout.

::

    bytes 0-7    magic  b"CDRBCKPT"
    bytes 8-11   format version, uint32 little-endian
    bytes 12-15  header length n, uint32 little-endian
    n bytes      UTF-8 JSON header
    then         named float64 little-endian arrays, in the order listed
                 under header["arrays"] as [name, shape] pairs

The header carries the architecture descriptor, horizon, state dim, the
normalisation bounds and whatever method-specific settings are needed to plan
(distance schedule, noise schedule, buffer metadata). The parameter vector is
always the first array, stored in the network's declared layout order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"CDRBCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sII")


@dataclass
class Checkpoint:
    header: dict
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def params(self) -> np.ndarray:
        return self.arrays["params"]


def save_checkpoint(path: str | Path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    if "params" not in arrays:
        raise ValueError("checkpoint needs a 'params' array")
    names = ["params"] + sorted(n for n in arrays if n != "params")
    header = dict(header)
    header["arrays"] = [[n, list(np.shape(arrays[n]))] for n in names]
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: truncated checkpoint")
    magic, version, n = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    if version != VERSION:
        raise FormatError(f"{path}: checkpoint version {version}, this build reads {VERSION}")
    try:
        header = json.loads(raw[_PREFIX.size : _PREFIX.size + n].decode())
        specs = header["arrays"]
    except (UnicodeDecodeError, ValueError, KeyError) as exc:
        raise FormatError(f"{path}: corrupt header: {exc}") from exc
    off = _PREFIX.size + n
    arrays = {}
    for name, shape in specs:
        count = int(np.prod(shape)) if shape else 1
        end = off + 8 * count
        if end > len(raw):
            raise FormatError(f"{path}: truncated array {name!r}")
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).astype(float)
        off = end
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return Checkpoint(header, arrays)
