"""Weight persistence: a tab-separated manifest plus a raw little-endian float32 blob.

Manifest lines (after a ``#`` header)::

    name <TAB> shape (e.g. 16x3x3x3) <TAB> offset <TAB> nbytes <TAB> sha256 <TAB> frozen (0|1)
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from pcbdet.errors import ConfigError
from pcbdet.nn.params import ParamStore

HEADER = "# pcbdet-weights v1"


def _shape_str(shape: tuple[int, ...]) -> str:
    return "x".join(str(d) for d in shape) if shape else "scalar"


def _parse_shape(s: str) -> tuple[int, ...]:
    return () if s == "scalar" else tuple(int(d) for d in s.split("x"))


def save_weights(params: ParamStore, manifest_path: str | Path, blob_path: str | Path) -> str:
    """Write ``params``; returns the sha256 of the blob (a content hash of all weights)."""
    lines = [HEADER]
    chunks = []
    offset = 0
    for name, t in params.items():
        raw = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        digest = hashlib.sha256(raw).hexdigest()
        frozen = int(params.is_frozen(name))
        lines.append(f"{name}\t{_shape_str(t.shape)}\t{offset}\t{len(raw)}\t{digest}\t{frozen}")
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    Path(blob_path).write_bytes(blob)
    Path(manifest_path).write_text("\n".join(lines) + "\n")
    return hashlib.sha256(blob).hexdigest()


def load_weights(manifest_path: str | Path, blob_path: str | Path, expected: ParamStore | None = None) -> ParamStore:
    """Read weights back, verifying sizes, checksums and (optionally) shapes against ``expected``."""
    manifest_path, blob_path = Path(manifest_path), Path(blob_path)
    text = manifest_path.read_text().splitlines()
    if not text or text[0].strip() != HEADER:
        raise ConfigError(f"{manifest_path}: not a weights manifest")
    blob = blob_path.read_bytes()
    params = ParamStore()
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        try:
            name, shape_s, off_s, nbytes_s, digest, frozen_s = line.split("\t")
            shape, off, nbytes = _parse_shape(shape_s), int(off_s), int(nbytes_s)
        except ValueError:
            raise ConfigError(f"{manifest_path}:{lineno}: malformed entry") from None
        if nbytes != 4 * int(np.prod(shape, dtype=np.int64)):
            raise ConfigError(f"{manifest_path}:{lineno}: {name} byte length does not match shape {shape}")
        raw = blob[off : off + nbytes]
        if len(raw) != nbytes or hashlib.sha256(raw).hexdigest() != digest:
            raise ConfigError(f"{blob_path}: checksum mismatch for {name}")
        if expected is not None and name in expected and expected[name].shape != shape:
            raise ConfigError(f"{name}: stored shape {shape} != expected {expected[name].shape}")
        params.add(name, np.frombuffer(raw, dtype="<f4").reshape(shape), frozen=frozen_s == "1")
    if expected is not None and set(expected.names()) != set(params.names()):
        missing = sorted(set(expected.names()) ^ set(params.names()))
        raise ConfigError(f"weights do not match the model: differing entries {missing[:5]}")
    return params
