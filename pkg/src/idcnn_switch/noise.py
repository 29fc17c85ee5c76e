"""Impulsive noise models producing a noisy image and its ground-truth map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .images import as_color_image

MODELS = ("ctri", "spin")


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _check_rho(rho: float) -> float:
    rho = float(rho)
    if not 0.0 <= rho <= 1.0:
        raise ContractError(f"noise density must lie in [0, 1], got {rho}")
    return rho


def _select(shape, rho, rng) -> np.ndarray:
    # one Bernoulli draw per pixel in raster order
    return rng.random(shape) < rho


def corrupt_ctri(image, rho: float, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Channel-together random impulses.

    Each pixel is selected with probability ``rho``; a selected pixel gets
    three independent values drawn uniformly from the 256 integers 0..255.
    The map marks selection, so a draw that happens to reproduce the
    original triple is still labelled noisy.
    """
    img = as_color_image(image)
    rho = _check_rho(rho)
    rng = as_rng(rng)
    mask = _select(img.shape[:2], rho, rng)
    noisy = img.copy()
    noisy[mask] = rng.integers(0, 256, size=(int(mask.sum()), 3), dtype=np.uint8)
    return noisy, mask


def corrupt_spin(image, rho: float, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Salt-and-pepper impulses: each channel of a selected pixel becomes 0 or 255."""
    img = as_color_image(image)
    rho = _check_rho(rho)
    rng = as_rng(rng)
    mask = _select(img.shape[:2], rho, rng)
    noisy = img.copy()
    noisy[mask] = rng.integers(0, 2, size=(int(mask.sum()), 3), dtype=np.uint8) * np.uint8(255)
    return noisy, mask


def corrupt(image, rho: float, model: str = "ctri", rng=None) -> tuple[np.ndarray, np.ndarray]:
    if model == "ctri":
        return corrupt_ctri(image, rho, rng)
    if model == "spin":
        return corrupt_spin(image, rho, rng)
    raise ContractError(f"unknown noise model {model!r}; expected one of {MODELS}")


@dataclass(frozen=True)
class NoiseSpec:
    """Noise used when building training data.

    ``rho=None`` draws a fresh density uniformly from ``rho_range`` for
    every patch.
    """

    model: str = "ctri"
    rho: float | None = 0.3
    rho_range: tuple[float, float] = (0.1, 0.5)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ContractError(f"unknown noise model {self.model!r}")
        if self.rho is not None:
            _check_rho(self.rho)
        lo, hi = self.rho_range
        _check_rho(lo), _check_rho(hi)
        if lo > hi:
            raise ContractError(f"empty density range {self.rho_range}")

    @property
    def is_random(self) -> bool:
        return self.rho is None

    def label(self) -> str:
        return "random" if self.rho is None else f"{self.rho:g}"

    @classmethod
    def parse(cls, text: str, model: str = "ctri") -> "NoiseSpec":
        """'0.3' for a fixed density, 'random' for the per-patch range mode."""
        if text.strip().lower() == "random":
            return cls(model=model, rho=None)
        return cls(model=model, rho=float(text))
