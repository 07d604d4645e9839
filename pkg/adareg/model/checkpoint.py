"""
Checkpoint Module
Versioned binary container for a trained model.

Layout::

    b"ADAREGCK"                 magic
    uint32 LE                   format version
    uint64 LE                   header length in bytes
    header                      UTF-8 JSON, sorted keys, no whitespace
    payload                     little-endian float64 arrays, concatenated

The header holds the configuration echo, the iteration counter, the number of
identities and one entry per array (name, kind, shape, offset, count and the
category or owning parameter). Writing the same model twice yields identical bytes.
"""

from dataclasses import dataclass, field
import json
import os
import struct
from typing import Any, Dict, List

import numpy as np

from adareg.config.run_config import RunConfig, from_flat, to_flat
from adareg.model.topology import ReIDModel
from adareg.utils.exceptions import CheckpointError
from adareg.utils.logger import setup_logger

logger = setup_logger('Checkpoint')

MAGIC = b"ADAREGCK"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct('<IQ')


@dataclass
class Checkpoint:
    config: RunConfig
    iteration: int
    num_classes: int
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)
    entries: List[Dict[str, Any]] = field(default_factory=list)


def _collect(model: ReIDModel) -> List[Dict[str, Any]]:
    categories = {f.param_id: f.category for f in model.factors}
    owners = {f.theta.name: f.param_id for f in model.factors}
    items = []
    for entry in model.registry.entries():
        record = {'name': entry.name, 'array': entry.tensor.data}
        if entry.name in owners:
            record.update(kind='factor', param=owners[entry.name],
                          category=categories[owners[entry.name]])
        else:
            record.update(kind='parameter', category=categories.get(entry.name, ''))
        items.append(record)
    for prefix, bn in model.batchnorms().items():
        items.append({'name': f"{prefix}.running_mean", 'kind': 'running_mean', 'array': bn.running_mean})
        items.append({'name': f"{prefix}.running_var", 'kind': 'running_var', 'array': bn.running_var})
    return items


def encode_checkpoint(model: ReIDModel, config: RunConfig, iteration: int) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for item in _collect(model):
        array = np.asarray(item.pop('array'), dtype='<f8')
        item.update(shape=list(array.shape), offset=offset, count=int(array.size))
        entries.append(item)
        chunks.append(np.ascontiguousarray(array).tobytes())
        offset += array.size
    header = {
        'config': to_flat(config),
        'entries': entries,
        'format_version': FORMAT_VERSION,
        'iteration': int(iteration),
        'num_classes': model.num_classes,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')
    return MAGIC + _PREAMBLE.pack(FORMAT_VERSION, len(header_bytes)) + header_bytes + b''.join(chunks)


def save_checkpoint(path: str, model: ReIDModel, config: RunConfig, iteration: int) -> str:
    """Write a checkpoint file.

    Raises:
        CheckpointError: If the file cannot be written.
    """
    blob = encode_checkpoint(model, config, iteration)
    try:
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(path, 'wb') as file:
            file.write(blob)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    logger.info(f"Saved checkpoint at iteration {iteration} to {path}")
    return path


def decode_checkpoint(blob: bytes, source: str = '<bytes>') -> Checkpoint:
    head = len(MAGIC) + _PREAMBLE.size
    if len(blob) < head or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint file")
    version, header_len = _PREAMBLE.unpack(blob[len(MAGIC):head])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    if len(blob) < head + header_len:
        raise CheckpointError(f"{source}: header truncated")
    try:
        header = json.loads(blob[head:head + header_len].decode('utf-8'))
    except (UnicodeDecodeError, ValueError) as e:
        raise CheckpointError(f"{source}: corrupt header: {e}") from e
    for key in ('config', 'entries', 'iteration', 'num_classes'):
        if key not in header:
            raise CheckpointError(f"{source}: missing checkpoint field '{key}'")

    if (len(blob) - head - header_len) % 8:
        raise CheckpointError(f"{source}: payload is not a whole number of float64 values")
    payload = np.frombuffer(blob, dtype='<f8', offset=head + header_len)
    expected = sum(int(e['count']) for e in header['entries'])
    if payload.size != expected:
        raise CheckpointError(f"{source}: payload holds {payload.size} values, header declares {expected}")

    arrays = {}
    for entry in header['entries']:
        start, count = int(entry['offset']), int(entry['count'])
        arrays[entry['name']] = payload[start:start + count].astype(np.float64).reshape(entry['shape'])
    return Checkpoint(from_flat(header['config']), int(header['iteration']),
                      int(header['num_classes']), arrays, header['entries'])


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, 'rb') as file:
            blob = file.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return decode_checkpoint(blob, path)


def restore_model(checkpoint: Checkpoint) -> ReIDModel:
    """Rebuild the network described by a checkpoint and load every array into it."""
    cfg = checkpoint.config
    model = ReIDModel.build(cfg.model, cfg.reg, checkpoint.num_classes)
    missing = [name for name in model.registry if name not in checkpoint.arrays]
    for prefix in model.batchnorms():
        for stat in ('running_mean', 'running_var'):
            if f"{prefix}.{stat}" not in checkpoint.arrays:
                missing.append(f"{prefix}.{stat}")
    if missing:
        raise CheckpointError(f"checkpoint is missing fields: {', '.join(missing)}")

    for name, tensor in model.registry.items():
        array = checkpoint.arrays[name]
        if array.shape != tensor.shape:
            raise CheckpointError(f"checkpoint array '{name}' has shape {array.shape}, model expects {tensor.shape}")
        tensor.data = array.copy()
    for prefix, bn in model.batchnorms().items():
        bn.running_mean = checkpoint.arrays[f"{prefix}.running_mean"].copy()
        bn.running_var = checkpoint.arrays[f"{prefix}.running_var"].copy()
    return model
