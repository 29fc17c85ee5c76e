"""Natural 8-bit photographs bundled under ``tests/data`` (see ATTRIBUTION.md)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

DATA = Path(__file__).parent / "data"


def _load(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def training_tiles(count: int = 20) -> list[np.ndarray]:
    """200x200 tiles from four photographs."""
    return [_load(p) for p in sorted((DATA / "train").glob("*.png"))[:count]]


def held_out_photos() -> dict[str, np.ndarray]:
    """256x256 crops of five photographs that share no source with the tiles."""
    return {p.stem: _load(p) for p in sorted((DATA / "held_out").glob("*.png"))}


def center_crop(image: np.ndarray, size: int) -> np.ndarray:
    h, w, _ = image.shape
    r, c = (h - size) // 2, (w - size) // 2
    return image[r:r + size, c:c + size].copy()
