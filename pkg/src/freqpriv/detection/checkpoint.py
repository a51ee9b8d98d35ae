"""
Binary checkpoint format (little-endian):

    b"FPRV"                      magic
    u32 version
    u32 meta_len, meta bytes     canonical JSON {hparams, frozen, extra}
    u32 n_groups
    per group: u16 name_len, name utf-8, u8 ndim, u32 dims[ndim], u64 offset, u64 count
    f64 values                   all groups back to back, offsets in doubles
    32-byte sha256 of everything above
"""

import hashlib
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from freqpriv.core.errors import CheckpointError
from freqpriv.detection.model import DetectorHParams, DetectorModel
from freqpriv.utils.helpers import canonical_json

logger = logging.getLogger(__name__)

MAGIC = b"FPRV"
VERSION = 1
_DIGEST_BYTES = 32


def encode_checkpoint(model: DetectorModel, extra: Optional[Dict[str, Any]] = None) -> bytes:
    meta = canonical_json({
        "hparams": model.hparams.to_dict(),
        "frozen": sorted(model.frozen),
        "extra": extra or {},
    }).encode("utf-8")

    names = list(model.params)
    header = bytearray()
    header += MAGIC
    header += struct.pack("<I", VERSION)
    header += struct.pack("<I", len(meta)) + meta
    header += struct.pack("<I", len(names))

    payload = bytearray()
    offset = 0
    for name in names:
        values = np.ascontiguousarray(model.params[name], dtype="<f8")
        raw_name = name.encode("utf-8")
        header += struct.pack("<H", len(raw_name)) + raw_name
        header += struct.pack("<B", values.ndim)
        header += struct.pack(f"<{values.ndim}I", *values.shape)
        header += struct.pack("<QQ", offset, values.size)
        payload += values.tobytes()
        offset += values.size

    body = bytes(header + payload)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(
    model: DetectorModel,
    path: Union[str, Path],
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    data = encode_checkpoint(model, extra)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        logger.exception("Failed writing checkpoint %s", path)
        raise CheckpointError(f"Cannot write checkpoint {path}: {exc}") from exc
    logger.info("Saved checkpoint %s (%d groups, %d bytes)", path, len(model.params), len(data))
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise CheckpointError("Checkpoint truncated inside the header")
        values = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return values

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("Checkpoint truncated inside the header")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk


def _decode(data: bytes) -> Tuple[DetectorModel, Dict[str, Any]]:
    if len(data) < len(MAGIC) + 4 + _DIGEST_BYTES:
        raise CheckpointError(f"Checkpoint truncated ({len(data)} bytes)")
    if data[:4] != MAGIC:
        raise CheckpointError(f"Bad magic {data[:4]!r}, expected {MAGIC!r}")
    body, digest = data[:-_DIGEST_BYTES], data[-_DIGEST_BYTES:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("Checkpoint checksum mismatch (truncated or corrupted file)")

    reader = _Reader(body)
    reader.raw(4)
    (version,) = reader.take("<I")
    if version != VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}, expected {VERSION}")

    (meta_len,) = reader.take("<I")
    try:
        meta = json.loads(reader.raw(meta_len).decode("utf-8"))
        hparams = DetectorHParams(**meta["hparams"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"Invalid checkpoint metadata: {exc}") from exc

    (n_groups,) = reader.take("<I")
    table = []
    for _ in range(n_groups):
        (name_len,) = reader.take("<H")
        name = reader.raw(name_len).decode("utf-8")
        (ndim,) = reader.take("<B")
        dims = reader.take(f"<{ndim}I") if ndim else ()
        offset, count = reader.take("<QQ")
        if int(np.prod(dims, dtype=np.int64)) != count:
            raise CheckpointError(f"Group '{name}' dims {dims} disagree with count {count}")
        table.append((name, tuple(dims), offset, count))

    if (len(body) - reader.pos) % 8:
        raise CheckpointError("Checkpoint payload is not a whole number of doubles")
    values = np.frombuffer(body, dtype="<f8", offset=reader.pos)
    params: Dict[str, np.ndarray] = {}
    for name, dims, offset, count in table:
        if offset + count > values.size:
            raise CheckpointError(f"Group '{name}' extends past the end of the payload")
        params[name] = values[offset:offset + count].astype(np.float64).reshape(dims)
    expected = sum(count for *_, count in table)
    if expected != values.size:
        raise CheckpointError(f"Payload holds {values.size} values, table declares {expected}")

    model = DetectorModel(hparams=hparams, params=params, frozen=list(meta.get("frozen", [])))
    return model, meta


def decode_checkpoint(data: bytes) -> DetectorModel:
    return _decode(data)[0]


def load_checkpoint(path: Union[str, Path]) -> DetectorModel:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"Cannot read checkpoint {path}: {exc}") from exc
    model = decode_checkpoint(data)
    logger.info("Loaded checkpoint %s (%d groups)", path, len(model.params))
    return model


def read_metadata(path: Union[str, Path]) -> Dict[str, Any]:
    """Header metadata plus the parameter table (names and dims)."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"Cannot read checkpoint {path}: {exc}") from exc
    model, meta = _decode(data)
    meta["groups"] = {name: list(p.shape) for name, p in model.params.items()}
    return meta
