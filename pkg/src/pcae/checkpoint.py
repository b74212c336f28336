"""Binary checkpoint format: `PCAE-CKPT v1`.

Layout: a magic line, a key/value metadata block, then each tensor as a
header line (name, comma-separated shape, byte length) followed by raw
row-major little-endian float32 data. Loading then saving a file is
byte-identical; volatile data (wall-clock) is kept off the byte stream
so seeded reruns reproduce files exactly.
"""
from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"PCAE-CKPT v1"


@dataclass
class Checkpoint:
    """Named float32 tensors plus textual metadata (mode, config, vocab hash, step)."""

    metadata: dict[str, str] = field(default_factory=dict)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    seconds: float = 0.0  # measured wall-clock of the producing run; not serialized

    def step(self) -> int:
        return int(self.metadata.get("step", "0"))


def _check_value(key: str, value: str) -> None:
    if "\n" in key or "\t" in key or "\n" in value or "\t" in value:
        raise ValueError(f"metadata entry {key!r} contains a tab or newline")


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC + b"\n")
    buf.write(f"meta {len(ckpt.metadata)}\n".encode("utf-8"))
    for key, value in ckpt.metadata.items():
        _check_value(key, value)
        buf.write(f"{key}\t{value}\n".encode("utf-8"))
    buf.write(f"tensors {len(ckpt.tensors)}\n".encode("utf-8"))
    for name, tensor in ckpt.tensors.items():
        data = np.ascontiguousarray(tensor, dtype="<f4")
        if data.ndim == 0:
            data = data.reshape(1)
        shape = ",".join(str(d) for d in data.shape)
        raw = data.tobytes()
        buf.write(f"{name} {shape} {len(raw)}\n".encode("utf-8"))
        buf.write(raw)
    return buf.getvalue()


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def checkpoint_hash(ckpt: Checkpoint) -> str:
    return hashlib.sha256(checkpoint_bytes(ckpt)).hexdigest()


def _read_line(buf: io.BufferedReader | io.BytesIO) -> str:
    line = buf.readline()
    if not line.endswith(b"\n"):
        raise ValueError("truncated checkpoint")
    return line[:-1].decode("utf-8")


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    buf = io.BytesIO(data)
    if buf.readline() != MAGIC + b"\n":
        raise ValueError("not a PCAE-CKPT v1 file")
    head = _read_line(buf)
    if not head.startswith("meta "):
        raise ValueError("malformed metadata header")
    metadata: dict[str, str] = {}
    for _ in range(int(head.split()[1])):
        key, value = _read_line(buf).split("\t", 1)
        metadata[key] = value
    head = _read_line(buf)
    if not head.startswith("tensors "):
        raise ValueError("malformed tensor header")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(int(head.split()[1])):
        name, shape_s, nbytes_s = _read_line(buf).rsplit(" ", 2)
        shape = tuple(int(d) for d in shape_s.split(","))
        raw = buf.read(int(nbytes_s))
        if len(raw) != int(nbytes_s):
            raise ValueError(f"truncated tensor data for {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return Checkpoint(metadata=metadata, tensors=tensors)


def load_checkpoint(path: str | Path) -> Checkpoint:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(str(p))
    return checkpoint_from_bytes(p.read_bytes())
