"""Synthetic re-identification data and its on-disk format."""

from adareg.data.storage import load_dataset, save_dataset
from adareg.data.synth import Dataset, GenConfig, Sample, generate, nearest_centroid_accuracy

__all__ = ['Dataset', 'GenConfig', 'Sample', 'generate', 'load_dataset', 'nearest_centroid_accuracy', 'save_dataset']
