"""Binary checkpoint format.

Layout (little-endian): magic, format version (u32), config block length (u32), config
JSON (architecture, shapes and seed), tensor count (u32), then per tensor: name length
(u16), UTF-8 name, ndim (u8), extents (u32 each), float64 values.
"""
import json
import os
import struct
from collections import OrderedDict
from typing import Optional

import numpy as np
from logzero import logger

from hsat.exceptions import DataError
from hsat.model.encoder import EncoderConfig, EncoderConfigError, ModelParams

MAGIC = b'HSATCKPT'
FORMAT_VERSION = 1


class CheckpointError(DataError):
    pass


class _Reader:
    def __init__(self, payload: bytes, path: str):
        self._payload = payload
        self._offset = 0
        self._path = path

    def take(self, size: int) -> bytes:
        end = self._offset + size
        if end > len(self._payload):
            raise CheckpointError(f'{self._path}: truncated checkpoint at byte {self._offset}')
        chunk = self._payload[self._offset:end]
        self._offset = end
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    @property
    def exhausted(self) -> bool:
        return self._offset == len(self._payload)


def to_bytes(params: ModelParams) -> bytes:
    header = json.dumps({'config': params.config.to_json(), 'seed': params.seed}, sort_keys=True).encode('utf-8')
    chunks = [MAGIC, struct.pack('<II', FORMAT_VERSION, len(header)), header, struct.pack('<I', len(params.names))]
    for name, array in params.items():
        encoded = name.encode('utf-8')
        chunks.append(struct.pack('<H', len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f'<B{array.ndim}I', array.ndim, *array.shape))
        chunks.append(array.astype('<f8').tobytes())
    return b''.join(chunks)


def from_bytes(payload: bytes, path: str = '<memory>', config: Optional[EncoderConfig] = None) -> ModelParams:
    reader = _Reader(payload, path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f'{path}: corrupt header, not an hsat checkpoint')
    version, header_length = reader.unpack('<II')
    if version != FORMAT_VERSION:
        raise CheckpointError(f'{path}: unsupported checkpoint format version {version}')
    try:
        header = json.loads(reader.take(header_length).decode('utf-8'))
        declared = EncoderConfig.from_json(header['config'])
        seed = header.get('seed')
    except (ValueError, KeyError, TypeError, EncoderConfigError) as e:
        raise CheckpointError(f'{path}: corrupt config block ({e})')

    if config is not None and config != declared:
        raise CheckpointError(
            f'{path}: checkpoint was written for {declared.to_json()}, expected {config.to_json()}')

    (count,) = reader.unpack('<I')
    expected = declared.param_shapes()
    arrays = OrderedDict()
    for _ in range(count):
        (name_length,) = reader.unpack('<H')
        name = reader.take(name_length).decode('utf-8')
        (ndim,) = reader.unpack('<B')
        shape = reader.unpack(f'<{ndim}I')
        if expected.get(name) != tuple(shape):
            raise CheckpointError(
                f'{path}: tensor {name} has shape {tuple(shape)}, declared config expects {expected.get(name)}')
        size = int(np.prod(shape))
        arrays[name] = np.frombuffer(reader.take(8 * size), dtype='<f8').astype(np.float64).reshape(shape)
    if not reader.exhausted:
        raise CheckpointError(f'{path}: trailing bytes after {count} tensors')
    if list(arrays) != list(expected):
        raise CheckpointError(f'{path}: tensor set {list(arrays)} does not match declared config')
    return ModelParams(declared, arrays, seed)


def save_checkpoint(params: ModelParams, path: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp_path = f'{path}.tmp'
    with open(tmp_path, 'wb') as fp:
        fp.write(to_bytes(params))
    os.replace(tmp_path, path)
    logger.info(f'Saved checkpoint: {path}')


def load_checkpoint(path: str, config: Optional[EncoderConfig] = None) -> ModelParams:
    try:
        with open(path, 'rb') as fp:
            payload = fp.read()
    except OSError as e:
        raise CheckpointError(f'{path}: cannot read checkpoint ({e})')
    params = from_bytes(payload, path, config)
    logger.debug(f'Loaded checkpoint: {path}')
    return params
