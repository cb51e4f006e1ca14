"""
LDSeg - Checkpoints
LDSC container for trained parameter sets.

Layout:
    b"LDSC" | u16 format version | u16 reserved | u32 header length |
    UTF-8 JSON header | raw little-endian f32 tensors | u32 CRC-32 of all preceding bytes

The JSON header holds the checkpoint kind, the architecture config, the
noise schedule, the ablation variant, training metadata and the tensor
table (name, group, shape, byte offset into the payload).
"""

import json
import logging
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from src.dataio.formats import PathLike, atomic_write, check_magic, read_bytes
from src.diffusion.schedule import NoiseSchedule, from_betas
from src.errors import CheckpointError, FormatError, HeaderError, RangeError, TruncationError, VersionError

logger = logging.getLogger("LDSeg.DataIO")

LDSC_MAGIC = b"LDSC"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sHHI")
_CRC = struct.Struct("<I")
TENSOR_GROUPS = ("param", "moment")


@dataclass
class Checkpoint:
    """Trained parameters plus everything needed to rebuild and resume the model."""
    kind: str
    model: dict
    params: Dict[str, np.ndarray]
    schedule: Optional[NoiseSchedule] = None
    variant: Optional[dict] = None
    metadata: dict = field(default_factory=dict)
    moments: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def step_count(self) -> int:
        return int(self.metadata.get("step_count", 0))

    def require(self, kind: str, variant: Optional[dict] = None) -> "Checkpoint":
        """Raise CheckpointError unless this checkpoint has the expected kind (and variant)."""
        if self.kind != kind:
            raise CheckpointError(f"expected a '{kind}' checkpoint, got '{self.kind}'")
        if variant is not None and self.variant is not None and self.variant != variant:
            raise CheckpointError(f"checkpoint trained for variant {self.variant}, requested {variant}")
        return self


# ============ Encoding ============

def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def _schedule_header(sched: Optional[NoiseSchedule]) -> Optional[dict]:
    if sched is None:
        return None
    return {**sched.describe(), "betas": [float(b) for b in sched.betas[1:]]}


def _schedule_from_header(entry: Optional[dict]) -> Optional[NoiseSchedule]:
    if entry is None:
        return None
    params = {k: v for k, v in entry.items() if k not in ("kind", "T", "betas")}
    return from_betas(entry["betas"], kind=entry["kind"], params=params)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    table, chunks, offset = [], [], 0
    groups = (("param", ckpt.params), ("moment", ckpt.moments))
    for group, tensors in groups:
        for name, value in tensors.items():
            raw = np.ascontiguousarray(value, dtype="<f4").tobytes()
            table.append({"name": name, "group": group, "shape": list(np.shape(value)), "offset": offset})
            chunks.append(raw)
            offset += len(raw)
    header = {
        "kind": ckpt.kind,
        "model": ckpt.model,
        "schedule": _schedule_header(ckpt.schedule),
        "variant": ckpt.variant,
        "metadata": ckpt.metadata,
        "tensors": table,
        "payload_bytes": offset,
    }
    header_bytes = json.dumps(header, sort_keys=True, default=_json_default).encode("utf-8")
    body = _PREAMBLE.pack(LDSC_MAGIC, FORMAT_VERSION, 0, len(header_bytes)) + header_bytes + b"".join(chunks)
    return body + _CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


def _read_tensor_table(table, payload: bytes) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """Slice (params, moments) out of the payload; every entry must lie inside it."""
    if not isinstance(table, list):
        raise HeaderError("LDSC: tensor table is not a list")
    params, moments = {}, {}
    for position, entry in enumerate(table):
        try:
            name = entry["name"]
            group = entry["group"]
            shape = tuple(int(d) for d in entry["shape"])
            start = int(entry["offset"])
        except (KeyError, TypeError, ValueError) as e:
            raise HeaderError(f"LDSC: tensor table entry {position} is malformed: {e!r}") from e
        if not isinstance(name, str) or group not in TENSOR_GROUPS:
            raise HeaderError(f"LDSC: tensor table entry {position} has name {name!r} and group {group!r}")
        if any(d < 0 for d in shape) or start < 0:
            raise HeaderError(f"LDSC: tensor '{name}' has shape {shape} at offset {start}")
        end = start + 4 * int(np.prod(shape, dtype=np.int64))
        if end > len(payload):
            raise HeaderError(f"LDSC: tensor '{name}' exceeds the payload")
        value = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape).astype(np.float32)
        (params if group == "param" else moments)[name] = value
    return params, moments


def decode_checkpoint(data: bytes) -> Checkpoint:
    check_magic(data, LDSC_MAGIC, "LDSC")
    if len(data) < _PREAMBLE.size:
        raise TruncationError("LDSC: file ends inside the preamble")
    _, version, _, header_len = _PREAMBLE.unpack_from(data, 0)
    if version != FORMAT_VERSION:
        raise VersionError(f"LDSC: unsupported format version {version} (expected {FORMAT_VERSION})")
    header_end = _PREAMBLE.size + header_len
    if len(data) < header_end:
        raise TruncationError("LDSC: file ends inside the JSON header")
    try:
        header = json.loads(data[_PREAMBLE.size:header_end].decode("utf-8"))
        payload_bytes = int(header["payload_bytes"])
        table = header["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise HeaderError(f"LDSC: malformed JSON header: {e}") from e

    total = header_end + payload_bytes + _CRC.size
    if len(data) < total:
        raise TruncationError(f"LDSC: file has {len(data)} bytes, expected {total}")
    if len(data) > total:
        raise HeaderError(f"LDSC: {len(data) - total} trailing bytes")
    (stored_crc,) = _CRC.unpack_from(data, total - _CRC.size)
    if zlib.crc32(data[:total - _CRC.size]) & 0xFFFFFFFF != stored_crc:
        raise FormatError("LDSC: checksum mismatch")

    params, moments = _read_tensor_table(table, data[header_end:header_end + payload_bytes])
    try:
        return Checkpoint(
            kind=header["kind"],
            model=header["model"],
            params=params,
            schedule=_schedule_from_header(header.get("schedule")),
            variant=header.get("variant"),
            metadata=header.get("metadata", {}),
            moments=moments,
        )
    except (KeyError, TypeError, AttributeError) as e:
        raise HeaderError(f"LDSC: incomplete header: {e!r}") from e
    except RangeError as e:
        raise HeaderError(f"LDSC: invalid schedule: {e}") from e


# ============ Files ============

def save_checkpoint(path: PathLike, ckpt: Checkpoint) -> Path:
    path = atomic_write(path, encode_checkpoint(ckpt))
    logger.info(f"💾 Saved {ckpt.kind} checkpoint ({len(ckpt.params)} tensors) -> {path}")
    return path


def load_checkpoint(path: PathLike, kind: Optional[str] = None) -> Checkpoint:
    """
    Read an LDSC file.

    Raises:
        FormatError subclasses for malformed/truncated files, VersionError for
        another format version, CheckpointError if `kind` does not match.
    """
    try:
        data = read_bytes(path)
    except FileNotFoundError as e:
        raise CheckpointError(f"checkpoint not found: {path}") from e
    ckpt = decode_checkpoint(data)
    if kind is not None:
        ckpt.require(kind)
    logger.debug(f"📂 Loaded {ckpt.kind} checkpoint from {path}")
    return ckpt
