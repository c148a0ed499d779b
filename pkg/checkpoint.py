"""
Checkpoint persistence

Layout (little-endian):
    b"MVNT" | u32 version
    parameter table | optimizer table
    u32 length | ModelConfig as UTF-8 key=value lines

A table is a u32 entry count followed by, per entry, u32 name length, UTF-8
name, u32 rank, rank x u32 extents and the float32 payload. Parameter tables
also carry batch-norm running statistics; the optimizer table carries Adam
moments, the step count and trainer state as rank-0 entries.
"""
import os
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from config import ModelConfig
from errors import CheckpointError, ConfigError
from models import MVNet

MAGIC = b'MVNT'
VERSION = 1
_U32 = struct.Struct('<I')


@dataclass
class Checkpoint:
    model: MVNet
    optimizer_state: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def config(self) -> ModelConfig:
        return self.model.cfg


def encode_table(entries: Dict[str, np.ndarray]) -> bytes:
    chunks = [_U32.pack(len(entries))]
    for name, value in entries.items():
        array = np.ascontiguousarray(value, dtype='<f4')
        encoded = name.encode('utf-8')
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(array.ndim))
        chunks.extend(_U32.pack(extent) for extent in array.shape)
        chunks.append(array.tobytes())
    return b''.join(chunks)


class _Reader:
    def __init__(self, buf: bytes, path: str):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def decode_table(reader: _Reader) -> Dict[str, np.ndarray]:
    entries = {}
    for _ in range(reader.u32()):
        try:
            name = reader.take(reader.u32()).decode('utf-8')
        except UnicodeDecodeError:
            raise CheckpointError(f"{reader.path}: tensor name is not UTF-8") from None
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        count = int(np.prod(shape)) if shape else 1
        entries[name] = np.frombuffer(reader.take(4 * count), dtype='<f4').reshape(shape).astype(np.float32)
    return entries


def save_checkpoint(path: str, model: MVNet, optimizer_state: Optional[Dict[str, np.ndarray]] = None):
    """Write atomically: temp file in the target directory, then rename"""
    config_block = model.cfg.dumps().encode('utf-8')
    payload = b''.join([
        MAGIC, _U32.pack(VERSION),
        encode_table(model.state_dict()),
        encode_table(optimizer_state or {}),
        _U32.pack(len(config_block)), config_block,
    ])
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix='.tmp')
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(payload)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def read_checkpoint(path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray], ModelConfig]:
    try:
        with open(path, 'rb') as f:
            buf = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    reader = _Reader(buf, path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not an MVNet checkpoint (bad magic)")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    params = decode_table(reader)
    optimizer = decode_table(reader)
    try:
        text = reader.take(reader.u32()).decode('utf-8')
        cfg = ModelConfig.loads(text)
    except (UnicodeDecodeError, ConfigError) as e:
        raise CheckpointError(f"{path}: bad model config block: {e}") from None
    if reader.pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - reader.pos} trailing bytes")
    return params, optimizer, cfg


def load_checkpoint(path: str) -> Checkpoint:
    params, optimizer, cfg = read_checkpoint(path)
    model = MVNet(cfg)
    try:
        model.load_state_dict(params)
    except Exception as e:
        raise CheckpointError(f"{path}: parameters do not match the stored config: {e}") from None
    return Checkpoint(model, optimizer)
