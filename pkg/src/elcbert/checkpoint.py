"""Binary checkpoint files.

Layout::

    b"ELCB" | u32 version | u64 header length | UTF-8 JSON header | payload

The header carries the encoder and training configs, the step counter, the
vocabulary and a tensor table of ``{name, shape, offset, length}`` entries,
with offsets and lengths in bytes relative to the payload start. Payloads
are little-endian float64. All integers are little-endian.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig
from .errors import CorruptCheckpoint, VersionMismatch

MAGIC = b"ELCB"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


@dataclass
class Checkpoint:
    encoder: EncoderConfig
    params: dict[str, np.ndarray]
    step: int = 0
    train: object = None
    opt_step: int = 0
    opt_m: dict[str, np.ndarray] = field(default_factory=dict)
    opt_v: dict[str, np.ndarray] = field(default_factory=dict)
    vocab: list[str] | None = None

    def tensors(self):
        yield from (("param." + k, v) for k, v in self.params.items())
        yield from (("adam_m." + k, v) for k, v in self.opt_m.items())
        yield from (("adam_v." + k, v) for k, v in self.opt_v.items())


def to_bytes(ckpt: Checkpoint) -> bytes:
    table, chunks, offset = [], [], 0
    for name, arr in ckpt.tensors():
        buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "length": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    header = {
        "encoder": ckpt.encoder.to_dict(),
        "train": None if ckpt.train is None else ckpt.train.to_dict(),
        "step": ckpt.step,
        "opt_step": ckpt.opt_step,
        "vocab": ckpt.vocab,
        "tensors": table,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + b"".join(chunks)


def save_checkpoint(path, ckpt: Checkpoint):
    """Write atomically: a temporary sibling is renamed over ``path``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    os.replace(tmp, path)


def from_bytes(blob: bytes) -> Checkpoint:
    from .training import TrainConfig

    if len(blob) < _PREFIX.size:
        raise CorruptCheckpoint("file too short for a checkpoint header")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptCheckpoint(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, this build reads {VERSION}")
    start = _PREFIX.size + hlen
    if start > len(blob):
        raise CorruptCheckpoint("truncated header")
    try:
        header = json.loads(blob[_PREFIX.size:start].decode("utf-8"))
        encoder = EncoderConfig.from_dict(header["encoder"])
        train = None if header["train"] is None else TrainConfig.from_dict(header["train"])
        table = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"unreadable header: {exc}") from None
    payload = memoryview(blob)[start:]
    expected = sum(e["length"] for e in table)
    if expected != len(payload):
        raise CorruptCheckpoint(f"payload is {len(payload)} bytes, table declares {expected}")
    groups = {"param": {}, "adam_m": {}, "adam_v": {}}
    for e in table:
        shape = tuple(e["shape"])
        if e["length"] != 8 * int(np.prod(shape, dtype=np.int64)):
            raise CorruptCheckpoint(f"tensor {e['name']} length does not match its shape")
        if e["offset"] < 0 or e["offset"] + e["length"] > len(payload):
            raise CorruptCheckpoint(f"tensor {e['name']} lies outside the payload")
        kind, _, name = e["name"].partition(".")
        if kind not in groups:
            raise CorruptCheckpoint(f"unknown tensor group in {e['name']!r}")
        raw = payload[e["offset"]:e["offset"] + e["length"]]
        groups[kind][name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    return Checkpoint(
        encoder=encoder,
        params=groups["param"],
        step=header["step"],
        train=train,
        opt_step=header["opt_step"],
        opt_m=groups["adam_m"],
        opt_v=groups["adam_v"],
        vocab=header["vocab"],
    )


def load_checkpoint(path, expect_wiring=None) -> Checkpoint:
    """Read and validate a checkpoint; nothing is returned unless every check passes.

    With ``expect_wiring`` set, a checkpoint trained under different wiring
    raises ``WiringMismatch``.
    """
    from .errors import WiringMismatch

    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CorruptCheckpoint(f"cannot read {path}: {exc}") from exc
    ckpt = from_bytes(blob)
    if expect_wiring is not None and ckpt.encoder.wiring != expect_wiring:
        raise WiringMismatch(
            f"checkpoint has {ckpt.encoder.wiring.scheme} wiring, requested {expect_wiring.scheme}")
    return ckpt
