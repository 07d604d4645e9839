"""
Synthetic Dataset Module
Deterministic multi-camera re-identification benchmark.

Every identity is a fixed low-frequency pattern; every camera applies a fixed
intensity gain/offset and a small fixed shift; every sample adds its own noise.
Training identities are 1..num_train_ids and test identities follow them. For
each (test identity, camera) pair the first sample is a query and the rest
belong to the gallery.
"""

from dataclasses import dataclass
from typing import Dict, Iterator, List, Tuple

import numpy as np

from adareg.config.run_config import DataConfig
from adareg.utils.exceptions import ValidationError
from adareg.utils.logger import setup_logger

logger = setup_logger('SynthData')

GenConfig = DataConfig

SPLITS = ('train', 'query', 'gallery')

# sub-stream tags
_IDENTITY, _CAMERA, _SAMPLE = 0, 1, 2


@dataclass(frozen=True)
class Sample:
    index: int
    image: np.ndarray
    identity: int
    camera: int
    split: str


@dataclass
class Dataset:
    """Samples stored column-wise; ``images`` is N x H x W with values in [0, 1]."""
    images: np.ndarray
    identities: np.ndarray
    cameras: np.ndarray
    splits: np.ndarray

    def __post_init__(self):
        n = len(self.images)
        if self.images.ndim != 3:
            raise ValidationError(f"dataset images must be N x H x W, got {self.images.shape}")
        if not (len(self.identities) == len(self.cameras) == len(self.splits) == n):
            raise ValidationError("dataset columns have different lengths")
        unknown = set(self.splits.tolist()) - set(SPLITS)
        if unknown:
            raise ValidationError(f"unknown split labels: {', '.join(sorted(unknown))}")

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, index: int) -> Sample:
        return Sample(index, self.images[index], int(self.identities[index]),
                      int(self.cameras[index]), str(self.splits[index]))

    def __iter__(self) -> Iterator[Sample]:
        return (self[i] for i in range(len(self)))

    @property
    def height(self) -> int:
        return self.images.shape[1]

    @property
    def width(self) -> int:
        return self.images.shape[2]

    def indices(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ValidationError(f"unknown split '{split}'")
        return np.flatnonzero(self.splits == split)

    def identity_groups(self, split: str = 'train') -> Dict[int, List[int]]:
        """Sample indices per identity, identities and indices ascending."""
        groups: Dict[int, List[int]] = {}
        for i in self.indices(split):
            groups.setdefault(int(self.identities[i]), []).append(int(i))
        return dict(sorted(groups.items()))

    def num_classes(self) -> int:
        """Number of training identities; they must be exactly 1..N."""
        ids = sorted(self.identity_groups('train'))
        if ids != list(range(1, len(ids) + 1)):
            raise ValidationError("training identities must be the contiguous labels 1..N")
        return len(ids)


def _basis(height: int, width: int, count: int) -> np.ndarray:
    ys = (np.arange(height) + 0.5) / height
    xs = (np.arange(width) + 0.5) / width
    freqs = sorted(((u, v) for u in range(4) for v in range(4) if (u, v) != (0, 0)),
                   key=lambda f: (f[0] + f[1], f[0]))
    freqs = [(0, 0)] + freqs
    return np.stack([np.outer(np.cos(np.pi * u * ys), np.cos(np.pi * v * xs)) for u, v in freqs[:count]])


def identity_pattern(cfg: GenConfig, identity: int, basis: np.ndarray) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, _IDENTITY, identity])
    coeffs = rng.normal(size=len(basis))
    mix = np.tensordot(coeffs, basis, axes=1) / np.sqrt(len(basis))
    return np.clip(0.5 + 0.25 * mix, 0.0, 1.0)


def camera_transform(cfg: GenConfig, camera: int) -> Tuple[float, float, int, int]:
    """(gain, offset, row shift, column shift) of one camera."""
    strength = cfg.camera_strength * (2.0 if cfg.difficulty == 'hard' else 1.0)
    rng = np.random.default_rng([cfg.seed, _CAMERA, camera])
    gain_z, offset_z, dy_z, dx_z = rng.normal(size=4)
    dy = int(np.clip(np.rint(strength * 2.0 * dy_z), -2, 2))
    dx = int(np.clip(np.rint(strength * 2.0 * dx_z), -2, 2))
    return 1.0 + strength * gain_z, 0.5 * strength * offset_z, dy, dx


def render(pattern: np.ndarray, transform: Tuple[float, float, int, int], noise: float,
           rng: np.random.Generator) -> np.ndarray:
    gain, offset, dy, dx = transform
    image = gain * np.roll(pattern, (dy, dx), axis=(0, 1)) + offset
    if noise > 0:
        image = image + noise * rng.normal(size=pattern.shape)
    return np.clip(image, 0.0, 1.0)


def generate(cfg: GenConfig) -> Dataset:
    """Generate a dataset; identical configs give byte-identical datasets."""
    if cfg.cameras < 2:
        raise ValidationError("cameras must be >= 2 so every test identity appears in at least two cameras")
    noise = cfg.noise * (2.0 if cfg.difficulty == 'hard' else 1.0)
    basis = _basis(cfg.height, cfg.width, cfg.latent_dim)
    transforms = {c: camera_transform(cfg, c) for c in range(1, cfg.cameras + 1)}

    images, identities, cameras, splits = [], [], [], []
    total_ids = cfg.num_train_ids + cfg.num_test_ids
    for identity in range(1, total_ids + 1):
        pattern = identity_pattern(cfg, identity, basis)
        is_train = identity <= cfg.num_train_ids
        for camera in range(1, cfg.cameras + 1):
            for k in range(cfg.samples_per_id_per_camera):
                rng = np.random.default_rng([cfg.seed, _SAMPLE, identity, camera, k])
                images.append(render(pattern, transforms[camera], noise, rng))
                identities.append(identity)
                cameras.append(camera)
                splits.append('train' if is_train else ('query' if k == 0 else 'gallery'))

    dataset = Dataset(
        images=np.stack(images) if images else np.zeros((0, cfg.height, cfg.width)),
        identities=np.asarray(identities, dtype=np.int64),
        cameras=np.asarray(cameras, dtype=np.int64),
        splits=np.asarray(splits, dtype=object),
    )
    logger.info(f"Generated {len(dataset)} samples: {len(dataset.indices('train'))} train, "
                f"{len(dataset.indices('query'))} query, {len(dataset.indices('gallery'))} gallery "
                f"({cfg.difficulty})")
    return dataset


def nearest_centroid_accuracy(dataset: Dataset) -> Tuple[float, float]:
    """Raw-pixel nearest-centroid identification of queries against gallery centroids.

    Returns:
        (accuracy, chance level)
    """
    query = dataset.indices('query')
    groups = dataset.identity_groups('gallery')
    if len(query) == 0 or not groups:
        raise ValidationError("nearest-centroid oracle needs query and gallery samples")
    labels = np.array(list(groups))
    centroids = np.stack([dataset.images[idx].reshape(len(idx), -1).mean(axis=0) for idx in groups.values()])
    flat = dataset.images[query].reshape(len(query), -1)
    dist = ((flat[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
    predicted = labels[np.argmin(dist, axis=1)]
    accuracy = float(np.mean(predicted == dataset.identities[query]))
    return accuracy, 1.0 / len(labels)
