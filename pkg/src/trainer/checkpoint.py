"""
Checkpoint container.

Byte layout (all integers little-endian):

    magic           8 bytes  b'CASCKPT\\x00'
    version         u32
    digest          u32 length + UTF-8 hex string
    digest fields   u32 length + UTF-8 JSON {field: repr(value)}
    step            u64
    params          u32 count, then count named arrays
    quantizer       u8 frozen flag, u64 seed, then 2 named arrays (projection, codebook)
    optimizer       u32 count, then count named arrays
    rng             u32 length + UTF-8 JSON
    checksum        32 bytes SHA-256 of everything above

A named array is: u16 name length + UTF-8 name, u8 dtype-tag length + ASCII
numpy dtype string, u8 ndim, ndim x u64 shape, then the raw little-endian payload.
"""
import io
import os
import json
import struct
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from config.settings import Settings
from src.core.model import ModelParams
from src.ssl.bestrq import Quantizer
from src.utils.errors import CheckpointError

logger = logging.getLogger('Cascade.Checkpoint')

MAGIC = b'CASCKPT\x00'
VERSION = 1
CHECKSUM_BYTES = 32


@dataclass
class Checkpoint:
    step: int
    params: Dict[str, np.ndarray]
    quantizer: Quantizer
    optimizer: Dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: Dict[str, Any] = field(default_factory=dict)
    digest: str = ''
    digest_items: Dict[str, str] = field(default_factory=dict)


def _write_array(out: io.BytesIO, name: str, array: np.ndarray) -> None:
    array = np.asarray(array)
    array = array.astype(array.dtype.newbyteorder('<'), copy=False)
    name_bytes = name.encode('utf-8')
    tag = array.dtype.str.encode('ascii')
    out.write(struct.pack('<H', len(name_bytes)))
    out.write(name_bytes)
    out.write(struct.pack('<B', len(tag)))
    out.write(tag)
    out.write(struct.pack('<B', array.ndim))
    out.write(struct.pack(f'<{array.ndim}Q', *array.shape))
    out.write(np.ascontiguousarray(array).tobytes())


def _write_blob(out: io.BytesIO, text: str) -> None:
    data = text.encode('utf-8')
    out.write(struct.pack('<I', len(data)))
    out.write(data)


def save_checkpoint(ckpt: Checkpoint, path: str) -> str:
    """
    Write a checkpoint atomically (temporary file, then rename).

    Returns:
        The checkpoint path
    """
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack('<I', VERSION))
    _write_blob(out, ckpt.digest)
    _write_blob(out, json.dumps(ckpt.digest_items, sort_keys=True))
    out.write(struct.pack('<Q', ckpt.step))

    out.write(struct.pack('<I', len(ckpt.params)))
    for name in sorted(ckpt.params):
        _write_array(out, name, ckpt.params[name])

    out.write(struct.pack('<B', 1 if ckpt.quantizer.frozen else 0))
    out.write(struct.pack('<Q', ckpt.quantizer.seed))
    _write_array(out, 'projection', ckpt.quantizer.projection)
    _write_array(out, 'codebook', ckpt.quantizer.codebook)

    out.write(struct.pack('<I', len(ckpt.optimizer)))
    for name in sorted(ckpt.optimizer):
        _write_array(out, name, ckpt.optimizer[name])

    _write_blob(out, json.dumps(ckpt.rng_state, sort_keys=True))
    body = out.getvalue()

    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    tmp = path + '.tmp'
    with open(tmp, 'wb') as f:
        f.write(body)
        f.write(hashlib.sha256(body).digest())
    os.replace(tmp, path)
    logger.info(f"Saved checkpoint at step {ckpt.step} to {path}")
    return path


def verify_digest(digest: str, digest_items: Dict[str, str], settings: Settings) -> None:
    """Raise CheckpointError naming the first model-shaping field that differs."""
    if settings.digest() == digest:
        return
    differing = settings.diff(digest_items) or ['digest']
    raise CheckpointError(
        f"checkpoint config digest differs from the current configuration in field "
        f"'{differing[0]}' (checkpoint {digest_items.get(differing[0])}, "
        f"config {settings.digest_items().get(differing[0])})", field=differing[0])


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated", field='length')
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self) -> str:
        (n,) = self.unpack('<I')
        return self.take(n).decode('utf-8')

    def array(self) -> Tuple[str, np.ndarray]:
        (n,) = self.unpack('<H')
        name = self.take(n).decode('utf-8')
        (n,) = self.unpack('<B')
        dtype = np.dtype(self.take(n).decode('ascii'))
        (ndim,) = self.unpack('<B')
        shape = self.unpack(f'<{ndim}Q') if ndim else ()
        count = int(np.prod(shape)) if ndim else 1
        payload = self.take(count * dtype.itemsize)
        return name, np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def load_checkpoint(path: str, settings: Optional[Settings] = None) -> Checkpoint:
    """
    Read and verify a checkpoint.

    Args:
        path: Checkpoint file
        settings: When given, the checkpoint's config digest must match its digest

    Returns:
        Checkpoint

    Raises:
        CheckpointError: bad magic, version, checksum or digest (naming the differing field)
    """
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}", field='path')
    if len(raw) < len(MAGIC) + CHECKSUM_BYTES or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)", field='magic')
    body, checksum = raw[:-CHECKSUM_BYTES], raw[-CHECKSUM_BYTES:]
    if hashlib.sha256(body).digest() != checksum:
        raise CheckpointError(f"{path} is corrupted or truncated (checksum mismatch)", field='checksum')

    reader = _Reader(body)
    reader.take(len(MAGIC))
    (version,) = reader.unpack('<I')
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {VERSION})",
                              field='version')
    digest = reader.blob()
    digest_items = json.loads(reader.blob())
    if settings is not None:
        verify_digest(digest, digest_items, settings)

    (step,) = reader.unpack('<Q')
    (count,) = reader.unpack('<I')
    params = dict(reader.array() for _ in range(count))
    (frozen,) = reader.unpack('<B')
    (seed,) = reader.unpack('<Q')
    _, projection = reader.array()
    _, codebook = reader.array()
    quantizer = Quantizer(projection, codebook, int(seed), bool(frozen))
    if quantizer.frozen:
        quantizer.freeze()
    (count,) = reader.unpack('<I')
    optimizer = dict(reader.array() for _ in range(count))
    rng_state = json.loads(reader.blob())
    if reader.pos != len(body):
        raise CheckpointError(f"{path} has {len(body) - reader.pos} unexpected trailing bytes", field='length')
    logger.info(f"Loaded checkpoint {path} (step {step})")
    return Checkpoint(step, params, quantizer, optimizer, rng_state, digest, digest_items)


def params_from_checkpoint(ckpt: Checkpoint, settings: Settings) -> ModelParams:
    """Model parameters of a checkpoint, after checking it fits the configuration."""
    if ckpt.digest:
        verify_digest(ckpt.digest, ckpt.digest_items, settings)
    return ModelParams.from_arrays(ckpt.params, ckpt.quantizer, settings)
