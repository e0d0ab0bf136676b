"""Versioned binary checkpoint format.

Layout::

    b"QBEM" | u32 version | u64 header length | UTF-8 JSON header | tensors

Tensors are little-endian float32, concatenated in the order listed in the
header's ``tensors`` array.  All integers are little-endian.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frontend import FrontendConfig
from .mixer import MixerConfig, Params

MAGIC = b"QBEM"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    params: Params
    mixer_config: MixerConfig
    frontend_config: FrontendConfig = field(default_factory=FrontendConfig)
    labels: list[str] = field(default_factory=list)
    step: int = 0

    def encoder_params(self) -> Params:
        return {k: v for k, v in self.params.items() if not k.startswith("decoder.")}

    @property
    def fingerprint(self) -> str:
        return model_fingerprint(self.params)


def model_fingerprint(params: Params) -> str:
    """64-bit hex digest of the encoder tensors (names, shapes and bytes).

    The decoder is excluded so an inference export of a trained model keeps
    the fingerprint of the checkpoint it came from.
    """
    h = hashlib.blake2b(digest_size=8)
    for name, value in params.items():
        if name.startswith("decoder."):
            continue
        arr = np.ascontiguousarray(value, dtype="<f4")
        h.update(name.encode())
        h.update(repr(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def to_bytes(ckpt: Checkpoint) -> bytes:
    tensors = []
    payload = []
    for name, value in ckpt.params.items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        tensors.append({"name": name, "shape": list(arr.shape)})
        payload.append(arr.tobytes())
    header = {
        "mixer_config": ckpt.mixer_config.to_dict(),
        "frontend_config": ckpt.frontend_config.to_dict(),
        "labels": list(ckpt.labels),
        "step": int(ckpt.step),
        "tensors": tensors,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(header_bytes)) + header_bytes + b"".join(payload)


def from_bytes(data: bytes) -> Checkpoint:
    if len(data) < _PREFIX.size:
        raise TruncatedCheckpointError("file shorter than checkpoint prefix")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    start = _PREFIX.size
    if len(data) < start + header_len:
        raise TruncatedCheckpointError("header extends past end of file")
    try:
        header = json.loads(data[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from exc
    offset = start + header_len
    params: Params = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if len(data) < offset + nbytes:
            raise TruncatedCheckpointError(
                f"tensor {spec['name']} needs {nbytes} bytes, only {len(data) - offset} left")
        arr = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=offset)
        params[spec["name"]] = arr.reshape(shape).astype(np.float32)
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"{len(data) - offset} trailing bytes after tensors")
    return Checkpoint(
        params=params,
        mixer_config=MixerConfig.from_dict(header["mixer_config"]),
        frontend_config=FrontendConfig.from_dict(header["frontend_config"]),
        labels=list(header["labels"]),
        step=int(header["step"]),
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
