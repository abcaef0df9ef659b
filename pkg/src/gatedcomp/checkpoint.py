"""Versioned binary checkpoints.

Layout::

    magic  b"GCKPT\\0"         6 bytes
    major, minor             2 x uint16 LE
    header_len               uint32 LE
    header                   UTF-8 JSON
    payload                  float64 LE arrays, in the order listed in the header
    digest                   sha256 over everything above

The header carries the config hash, the RNG cursor, the curriculum state and
the file offsets of the metrics/trace streams at save time.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .curriculum import CurriculumState
from .policy import PolicyParams

MAGIC = b"GCKPT\0"
VERSION = (1, 0)
_ARRAYS = ("logit", "log_length", "floor")
_SCALARS = ("sigma", "skill", "verbosity", "coupling", "softness")


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    params: PolicyParams
    curriculum: CurriculumState
    rng_cursor: int
    config_hash: str
    extra: dict = field(default_factory=dict)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        a, b = self.params, other.params
        same_params = a.sample_ids == b.sample_ids and all(
            np.array_equal(getattr(a, k), getattr(b, k)) for k in _ARRAYS
        ) and all(getattr(a, k) == getattr(b, k) for k in _SCALARS)
        return (
            same_params
            and self.curriculum.to_dict() == other.curriculum.to_dict()
            and self.rng_cursor == other.rng_cursor
            and self.config_hash == other.config_hash
            and self.extra == other.extra
        )


def to_bytes(ckpt: Checkpoint) -> bytes:
    p = ckpt.params
    header = {
        "config_hash": ckpt.config_hash,
        "rng_cursor": ckpt.rng_cursor,
        "sample_ids": list(p.sample_ids),
        "scalars": {k: getattr(p, k) for k in _SCALARS},
        "arrays": [[k, len(getattr(p, k))] for k in _ARRAYS],
        "curriculum": ckpt.curriculum.to_dict(),
        "extra": ckpt.extra,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(getattr(p, k), dtype="<f8").tobytes() for k in _ARRAYS)
    blob = MAGIC + struct.pack("<HHI", *VERSION, len(head)) + head + body
    return blob + hashlib.sha256(blob).digest()


def from_bytes(data: bytes) -> Checkpoint:
    fixed = len(MAGIC) + 8
    if len(data) < fixed + 32 or not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic or truncated)")
    blob, digest = data[:-32], data[-32:]
    if hashlib.sha256(blob).digest() != digest:
        raise CheckpointError("checkpoint is corrupted (digest mismatch)")
    major, minor, head_len = struct.unpack("<HHI", data[len(MAGIC) : fixed])
    if major != VERSION[0]:
        raise CheckpointError(f"checkpoint format {major}.{minor} is not readable by {VERSION[0]}.{VERSION[1]}")
    try:
        header = json.loads(blob[fixed : fixed + head_len].decode("utf-8"))
        offset = fixed + head_len
        arrays = {}
        for name, n in header["arrays"]:
            arrays[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).astype(np.float64)
            offset += 8 * n
        if offset != len(blob):
            raise CheckpointError("checkpoint payload size does not match its header")
        params = PolicyParams(sample_ids=header["sample_ids"], **arrays, **header["scalars"])
        curriculum = CurriculumState.from_dict(header["curriculum"])
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint header is malformed: {exc}") from None
    return Checkpoint(params, curriculum, int(header["rng_cursor"]), header["config_hash"], header["extra"])


def checkpoint_save(ckpt: Checkpoint, path: os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    os.replace(tmp, path)


def checkpoint_load(path: os.PathLike, expected_hash: str | None = None) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    ckpt = from_bytes(data)
    if expected_hash is not None and ckpt.config_hash != expected_hash:
        raise CheckpointError(
            f"config hash mismatch: checkpoint {ckpt.config_hash[:12]} vs config {expected_hash[:12]}; refusing to resume"
        )
    return ckpt
