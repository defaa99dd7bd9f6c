"""Manifest + payload checkpoint format.

Layout (all text lines end in ``\\n``, ASCII)::

    CTN-CHECKPOINT v1
    config <single-line JSON object>
    params <N>
    <name> <d0> <d1> ...        # N lines, manifest order; a scalar has no dims
    <payload>

The payload is the concatenation of every parameter, in manifest order, as
row-major little-endian float64 (``<f8``). Nothing follows the payload.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .autograd import ContractViolation

MAGIC = "CTN-CHECKPOINT v1"


def dumps(params: Mapping[str, np.ndarray], config: Mapping | None = None) -> bytes:
    lines = [MAGIC, "config " + json.dumps(dict(config or {}), sort_keys=True, separators=(",", ":"))]
    lines.append(f"params {len(params)}")
    for name, arr in params.items():
        if not name or any(ch.isspace() for ch in name):
            raise ContractViolation(f"checkpoint: parameter name {name!r} must be non-empty without whitespace")
        lines.append(" ".join([name, *map(str, np.shape(arr))]))
    head = ("\n".join(lines) + "\n").encode("ascii")
    body = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in params.values())
    return head + body


def loads(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(config, params)`` decoded from :func:`dumps` output."""
    pos = 0

    def line() -> str:
        nonlocal pos
        end = blob.find(b"\n", pos)
        if end < 0:
            raise ContractViolation("checkpoint: truncated manifest")
        text = blob[pos:end].decode("ascii")
        pos = end + 1
        return text

    if line() != MAGIC:
        raise ContractViolation("checkpoint: bad magic line")
    cfg_line = line()
    if not cfg_line.startswith("config "):
        raise ContractViolation("checkpoint: missing config line")
    config = json.loads(cfg_line[len("config "):])
    count_line = line().split()
    if len(count_line) != 2 or count_line[0] != "params":
        raise ContractViolation("checkpoint: missing params line")
    manifest = []
    for _ in range(int(count_line[1])):
        name, *dims = line().split(" ")
        manifest.append((name, tuple(int(d) for d in dims)))
    params = {}
    for name, shape in manifest:
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(blob):
            raise ContractViolation(f"checkpoint: payload truncated at {name}")
        params[name] = np.frombuffer(blob, dtype="<f8", count=nbytes // 8, offset=pos).astype(np.float64).reshape(shape)
        pos += nbytes
    if pos != len(blob):
        raise ContractViolation(f"checkpoint: {len(blob) - pos} trailing bytes")
    return config, params


def save(path, params: Mapping[str, np.ndarray], config: Mapping | None = None) -> None:
    Path(path).write_bytes(dumps(params, config))


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
