"""Switching filter for impulsive noise in color images.

A convolutional detector estimates the probability that each pixel is an
impulse, a threshold turns that into a binary map, and an adaptive mean
filter replaces only the flagged pixels.
"""

__version__ = "0.1.0"

from .dataset import PatchSet, augment, bicubic_resize, build_training_set, extract_patches
from .idcnn import IdcnnModel, TrainConfig, build_model, detect, forward, load_model, save_model, train
from .images import load_map, load_ppm, save_map, save_ppm
from .metrics import (
    AimDiagram,
    ConfusionCounts,
    aim_diagram,
    confusion,
    fnr,
    fpr,
    mae,
    psnr,
    ssim_c,
    wacc,
)
from .noise import NoiseSpec, corrupt, corrupt_ctri, corrupt_spin
from .restore import RestoreConfig, adaptive_mean_restore, switching_filter

__all__ = [
    "AimDiagram", "ConfusionCounts", "IdcnnModel", "NoiseSpec", "PatchSet", "RestoreConfig",
    "TrainConfig", "adaptive_mean_restore", "aim_diagram", "augment", "bicubic_resize",
    "build_model", "build_training_set", "confusion", "corrupt", "corrupt_ctri", "corrupt_spin",
    "detect", "extract_patches", "fnr", "forward", "fpr", "load_map", "load_model", "load_ppm",
    "mae", "psnr", "save_map", "save_model", "save_ppm", "ssim_c", "switching_filter", "train",
    "wacc",
]
