"""
Dataset Storage Module
Directory format: ``manifest.csv`` (index,identity,camera,split,file_offset),
``images.bin`` (little-endian float64 rasters, row-major, concatenated) and a
``dataset.json`` sidecar with the raster size.
"""

import json
import os

import numpy as np

from adareg.data.synth import SPLITS, Dataset
from adareg.utils.exceptions import DatasetFormatError, StorageError
from adareg.utils.logger import setup_logger
from adareg.utils.results_handler import read_csv, save_json, write_csv

logger = setup_logger('DatasetStorage')

MANIFEST = 'manifest.csv'
BLOB = 'images.bin'
SIDECAR = 'dataset.json'
MANIFEST_HEADER = ('index', 'identity', 'camera', 'split', 'file_offset')
FORMAT_VERSION = 1


def save_dataset(dataset: Dataset, directory: str) -> str:
    """Write a dataset directory; saving the same dataset twice gives identical bytes."""
    height, width = dataset.height, dataset.width
    stride = height * width * 8
    rows = [(i, int(dataset.identities[i]), int(dataset.cameras[i]), str(dataset.splits[i]), i * stride)
            for i in range(len(dataset))]
    os.makedirs(directory, exist_ok=True)
    write_csv(os.path.join(directory, MANIFEST), MANIFEST_HEADER, rows)
    try:
        with open(os.path.join(directory, BLOB), 'wb') as file:
            file.write(np.ascontiguousarray(dataset.images, dtype='<f8').tobytes())
    except OSError as e:
        raise StorageError(f"Failed to write {os.path.join(directory, BLOB)}: {e}") from e
    save_json({'count': len(dataset), 'format_version': FORMAT_VERSION, 'height': height, 'width': width},
              os.path.join(directory, SIDECAR))
    logger.info(f"Saved {len(dataset)} samples to {directory}")
    return directory


def load_dataset(directory: str) -> Dataset:
    """Read a dataset directory bit-exactly.

    Raises:
        DatasetFormatError: On corrupt manifests or blob size mismatches.
    """
    sidecar_path = os.path.join(directory, SIDECAR)
    try:
        with open(sidecar_path) as file:
            meta = json.load(file)
        height, width, count = int(meta['height']), int(meta['width']), int(meta['count'])
    except OSError as e:
        raise StorageError(f"Failed to read {sidecar_path}: {e}") from e
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetFormatError(f"{sidecar_path}: corrupt dataset description: {e}") from e
    if meta.get('format_version') != FORMAT_VERSION:
        raise DatasetFormatError(f"{sidecar_path}: unsupported format version {meta.get('format_version')}")

    manifest_path = os.path.join(directory, MANIFEST)
    try:
        rows = read_csv(manifest_path, MANIFEST_HEADER)
    except StorageError as e:
        raise DatasetFormatError(e.message) from e
    if len(rows) != count:
        raise DatasetFormatError(f"{manifest_path}: expected {count} rows, found {len(rows)}")

    stride = height * width * 8
    identities = np.zeros(count, dtype=np.int64)
    cameras = np.zeros(count, dtype=np.int64)
    splits = np.empty(count, dtype=object)
    for position, row in enumerate(rows):
        try:
            index, offset = int(row['index']), int(row['file_offset'])
            identities[position] = int(row['identity'])
            cameras[position] = int(row['camera'])
        except (KeyError, ValueError) as e:
            raise DatasetFormatError(f"{manifest_path}: malformed row {position + 1}: {row}") from e
        if index != position or offset != position * stride:
            raise DatasetFormatError(
                f"{manifest_path}: row {position + 1} has index {index} and offset {offset}, "
                f"expected {position} and {position * stride}")
        if row['split'] not in SPLITS:
            raise DatasetFormatError(f"{manifest_path}: row {position + 1} has unknown split '{row['split']}'")
        splits[position] = row['split']

    blob_path = os.path.join(directory, BLOB)
    try:
        with open(blob_path, 'rb') as file:
            blob = file.read()
    except OSError as e:
        raise StorageError(f"Failed to read {blob_path}: {e}") from e
    expected = count * stride
    if len(blob) != expected:
        raise DatasetFormatError(f"{blob_path}: expected {expected} bytes, found {len(blob)}")

    images = np.frombuffer(blob, dtype='<f8').astype(np.float64).reshape(count, height, width)
    return Dataset(images=images, identities=identities, cameras=cameras, splits=splits)
