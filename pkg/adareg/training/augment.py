"""
Augmentation Module
Horizontal flip, zero-pad + random crop and random erasing for H x W images.
"""

import math
from typing import Optional

import numpy as np

from adareg.config.run_config import AugConfig
from adareg.utils.logger import setup_logger

logger = setup_logger('Augment')

MAX_ERASE_ATTEMPTS = 100


def hflip(image: np.ndarray) -> np.ndarray:
    return image[:, ::-1].copy()


def pad_crop(image: np.ndarray, pad: int, rng: np.random.Generator) -> np.ndarray:
    """Zero-pad every side by ``pad`` pixels and crop a random window of the original size."""
    height, width = image.shape
    top = int(rng.integers(0, 2 * pad + 1))
    left = int(rng.integers(0, 2 * pad + 1))
    if pad == 0:
        return image.copy()
    padded = np.pad(image, pad)
    return padded[top:top + height, left:left + width].copy()


def erase_rectangle(height: int, width: int, area_range, aspect_range,
                    rng: np.random.Generator) -> Optional[tuple]:
    """Pick (top, left, h, w) of an erase rectangle clipped to the image.

    Only zero-size draws are resampled; None after 100 of them.
    """
    for _ in range(MAX_ERASE_ATTEMPTS):
        target = rng.uniform(*area_range) * height * width
        aspect = rng.uniform(*aspect_range)
        h = min(int(round(math.sqrt(target * aspect))), height)
        w = min(int(round(math.sqrt(target / aspect))), width)
        if h >= 1 and w >= 1:
            top = int(rng.integers(0, height - h + 1))
            left = int(rng.integers(0, width - w + 1))
            return top, left, h, w
    return None


def random_erase(image: np.ndarray, cfg: AugConfig, rng: np.random.Generator) -> np.ndarray:
    """Overwrite one random rectangle with uniform noise in [0, 1]."""
    box = erase_rectangle(image.shape[0], image.shape[1], cfg.erase_area, cfg.erase_aspect, rng)
    if box is None:
        logger.debug(f"No valid erase rectangle after {MAX_ERASE_ATTEMPTS} attempts; image left unerased")
        return image
    top, left, h, w = box
    out = image.copy()
    out[top:top + h, left:left + w] = rng.uniform(0.0, 1.0, size=(h, w))
    return out


def augment(image: np.ndarray, cfg: AugConfig, rng: np.random.Generator) -> np.ndarray:
    """flip -> pad -> crop -> erase, for a single training image."""
    out = image
    if rng.random() < cfg.flip_prob:
        out = hflip(out)
    out = pad_crop(out, cfg.pad, rng)
    if rng.random() < cfg.erase_prob:
        out = random_erase(out, cfg, rng)
    return out


def augment_batch(images: np.ndarray, cfg: AugConfig, seed: int, iteration: int) -> np.ndarray:
    """Augment a batch; image i uses its own stream derived from (seed, iteration, i)."""
    return np.stack([
        augment(image, cfg, np.random.default_rng([seed, iteration, position]))
        for position, image in enumerate(images)
    ])
