"""
LDSeg - File Formats
TNSR tensor files and 8-bit binary greymaps (P5) for images and masks.

All readers decode from bytes and raise typed FormatError subclasses;
all writers go through `atomic_write`.

TNSR layout: b"TNSR", u8 dtype code (0 = f32 little-endian), u8 rank,
rank x u32 little-endian dims, raw row-major payload.
"""

import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from src.config import Config
from src.errors import DtypeError, HeaderError, MagicError, RangeError, TruncationError

logger = logging.getLogger("LDSeg.DataIO")

PathLike = Union[str, Path]

TNSR_MAGIC = b"TNSR"
DTYPE_CODES = {0: np.dtype("<f4")}
P5_MAGIC = b"P5"
P5_MAX_SIDE = 65535
_WHITESPACE = b" \t\r\n"


# ============ Atomic Writes ============

@retry(
    stop=stop_after_attempt(Config.IO_RETRIES),
    wait=wait_exponential(multiplier=0.1, min=0.1, max=2),
    retry=retry_if_exception_type(OSError),
    reraise=True,
    before_sleep=lambda rs: logger.warning(f"⚠️ Write failed, retrying ({rs.attempt_number}/{Config.IO_RETRIES})..."),
)
def atomic_write(path: PathLike, payload: bytes) -> Path:
    """Write bytes to a temp file next to `path`, then rename over it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_bytes(path: PathLike) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def check_magic(data: bytes, magic: bytes, what: str) -> None:
    if len(data) < len(magic):
        if magic.startswith(data):
            raise TruncationError(f"{what}: file ends inside the magic bytes")
        raise MagicError(f"{what}: bad magic {data!r}")
    if data[:len(magic)] != magic:
        raise MagicError(f"{what}: bad magic {data[:len(magic)]!r}, expected {magic!r}")


# ============ TNSR ============

def encode_tensor(array) -> bytes:
    array = np.asarray(array, dtype="<f4")
    if array.ndim > 255:
        raise RangeError(f"rank {array.ndim} does not fit in a u8")
    header = TNSR_MAGIC + struct.pack("<BB", 0, array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array).tobytes()


def decode_tensor(data: bytes) -> np.ndarray:
    check_magic(data, TNSR_MAGIC, "TNSR")
    if len(data) < 6:
        raise TruncationError("TNSR: file ends inside the dtype/rank header")
    code, rank = struct.unpack_from("<BB", data, 4)
    if code not in DTYPE_CODES:
        raise DtypeError(f"TNSR: unsupported dtype code {code}")
    dims_end = 6 + 4 * rank
    if len(data) < dims_end:
        raise TruncationError(f"TNSR: file ends inside the {rank} dims")
    shape = struct.unpack_from(f"<{rank}I", data, 6)
    dtype = DTYPE_CODES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = data[dims_end:]
    if len(payload) < expected:
        raise TruncationError(f"TNSR: payload has {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise HeaderError(f"TNSR: {len(payload) - expected} trailing bytes after payload")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(np.float32)


def write_tensor(path: PathLike, array) -> Path:
    return atomic_write(path, encode_tensor(array))


def read_tensor(path: PathLike) -> np.ndarray:
    return decode_tensor(read_bytes(path))


# ============ P5 Greymaps ============

def encode_greymap(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise RangeError(f"greymaps are 2-D, got shape {pixels.shape}")
    h, w = pixels.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()


def _parse_greymap_header(data: bytes) -> Tuple[int, int, int, int]:
    """Returns (width, height, maxval, payload offset)."""
    check_magic(data, P5_MAGIC, "P5")
    pos = len(P5_MAGIC)
    values = []
    while len(values) < 3:
        while True:
            if pos >= len(data):
                raise TruncationError("P5: file ends inside the header")
            char = data[pos:pos + 1]
            if char in _WHITESPACE:
                pos += 1
            elif char == b"#":
                newline = data.find(b"\n", pos)
                if newline < 0:
                    raise TruncationError("P5: file ends inside a header comment")
                pos = newline + 1
            else:
                break
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise HeaderError(f"P5: expected a number at byte {start}")
        if pos >= len(data):
            raise TruncationError("P5: file ends inside the header")
        values.append(int(data[start:pos]))
    if data[pos:pos + 1] not in _WHITESPACE:
        raise HeaderError("P5: header must end with a single whitespace byte")
    width, height, maxval = values
    if not (1 <= width <= P5_MAX_SIDE and 1 <= height <= P5_MAX_SIDE):
        raise HeaderError(f"P5: dimension overflow ({width}x{height})")
    if not 1 <= maxval <= 255:
        raise HeaderError(f"P5: only 8-bit maxval is supported, got {maxval}")
    return width, height, maxval, pos + 1


def decode_greymap(data: bytes) -> Tuple[np.ndarray, int]:
    """Returns (uint8 pixels (H, W), maxval)."""
    width, height, maxval, offset = _parse_greymap_header(data)
    payload = data[offset:]
    expected = width * height
    if len(payload) < expected:
        raise TruncationError(f"P5: payload has {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise HeaderError(f"P5: {len(payload) - expected} trailing bytes after payload")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    if pixels.max(initial=0) > maxval:
        raise HeaderError(f"P5: pixel value above maxval {maxval}")
    return pixels.copy(), maxval


def write_image(path: PathLike, image) -> Path:
    """Intensities in [0, 1] quantized to bytes (1.0 -> 255); out-of-range values clip."""
    quantized = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255)
    return atomic_write(path, encode_greymap(quantized.astype(np.uint8)))


def read_image(path: PathLike) -> np.ndarray:
    pixels, maxval = decode_greymap(read_bytes(path))
    return (pixels.astype(np.float32) / np.float32(maxval)).astype(np.float32)


def write_mask(path: PathLike, labels) -> Path:
    """Raw class indices as bytes."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise RangeError("mask labels must lie in [0, 255]")
    return atomic_write(path, encode_greymap(labels.astype(np.uint8)))


def read_mask(path: PathLike) -> np.ndarray:
    pixels, _ = decode_greymap(read_bytes(path))
    return pixels.astype(np.int64)
