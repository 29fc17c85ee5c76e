"""Training-set construction: multi-scale resizing, augmentation and patching."""

from __future__ import annotations

import logging
import math
import struct
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError
from .images import as_binary_map, as_color_image, load_ppm
from .noise import NoiseSpec, corrupt

log = logging.getLogger(__name__)

SCALES = (1.0, 0.9, 0.8, 0.7)

# -- bicubic resize ----------------------------------------------------------


def _cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def _resize_taps(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Source indices and weights ``(n_out, 4)``, pixel-centre aligned, edge clamped."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    offsets = np.arange(-1, 3)
    idx = np.clip(base[:, None] + offsets, 0, n_in - 1)
    return idx, _cubic((src - base)[:, None] - offsets)


def _resample(arr: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    idx, wts = _resize_taps(arr.shape[axis], n_out)
    shape = [1] * arr.ndim
    shape[axis] = n_out
    out = np.zeros(arr.shape[:axis] + (n_out,) + arr.shape[axis + 1:])
    for k in range(4):
        out += np.take(arr, idx[:, k], axis=axis) * wts[:, k].reshape(shape)
    return out


def scaled_size(n: int, scale: float) -> int:
    # nearest integer, halves rounded up
    return int(math.floor(n * scale + 0.5))


def bicubic_resize(image, scale: float) -> np.ndarray:
    """Resize by ``scale`` with the Catmull-Rom kernel (a = -0.5).

    Output size is ``round(scale * h) x round(scale * w)``. Samples outside
    the image are clamped to the border and results are rounded and
    clipped to [0, 255]. Scale 1 returns an exact copy.
    """
    img = as_color_image(image)
    if not 0 < scale <= 1:
        raise ContractError(f"scale must lie in (0, 1], got {scale}")
    if scale == 1:
        return img.copy()
    h, w, _ = img.shape
    ho, wo = scaled_size(h, scale), scaled_size(w, scale)
    if ho < 1 or wo < 1:
        raise ContractError(f"scale {scale} shrinks a {h}x{w} image to nothing")
    out = _resample(_resample(img.astype(np.float64), 0, ho), 1, wo)
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


# -- augmentation ------------------------------------------------------------

AUGMENTATIONS = ("rot90", "rot180", "rot270", "flipud")


def apply_augmentation(arr: np.ndarray, name: str) -> np.ndarray:
    if name == "none":
        return arr
    if name == "rot90":
        return np.rot90(arr, 1)
    if name == "rot180":
        return np.rot90(arr, 2)
    if name == "rot270":
        return np.rot90(arr, 3)
    if name == "flipud":
        return arr[::-1]
    raise ContractError(f"unknown augmentation {name!r}")


def augment(image) -> list[np.ndarray]:
    """Rotations by 90, 180 and 270 degrees and an up-down flip, in that order."""
    img = as_color_image(image)
    return [np.ascontiguousarray(apply_augmentation(img, name)) for name in AUGMENTATIONS]


# -- patches -----------------------------------------------------------------


@dataclass
class PatchSet:
    """Noisy patches ``(n, p, p, 3)`` uint8 with binary maps ``(n, p, p)`` uint8.

    ``provenance`` holds one ``(source, scale, augmentation, row, col)``
    tuple per patch when known.
    """

    noisy: np.ndarray
    maps: np.ndarray
    p: int
    provenance: list[tuple] = field(default_factory=list)

    def __post_init__(self):
        n = self.noisy.shape[0]
        if self.noisy.shape != (n, self.p, self.p, 3) or self.maps.shape != (n, self.p, self.p):
            raise ContractError(
                f"patch arrays {self.noisy.shape} / {self.maps.shape} do not match p={self.p}"
            )

    def __len__(self) -> int:
        return self.noisy.shape[0]

    @classmethod
    def empty(cls, p: int) -> "PatchSet":
        return cls(np.zeros((0, p, p, 3), np.uint8), np.zeros((0, p, p), np.uint8), p)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[np.ndarray, np.ndarray]]) -> "PatchSet":
        pairs = list(pairs)
        if not pairs:
            raise ContractError("no patches given")
        p = pairs[0][0].shape[0]
        noisy, maps = [], []
        for img, m in pairs:
            img = as_color_image(img)
            m = as_binary_map(m)
            if img.shape != (p, p, 3) or m.shape != (p, p):
                raise ContractError(f"patch {img.shape} / map {m.shape} is not {p}x{p}")
            noisy.append(img)
            maps.append(m)
        return cls(np.stack(noisy), np.stack(maps).astype(np.uint8), p)

    @classmethod
    def concatenate(cls, sets: list["PatchSet"], p: int) -> "PatchSet":
        if not sets:
            return cls.empty(p)
        return cls(
            np.concatenate([s.noisy for s in sets]),
            np.concatenate([s.maps for s in sets]),
            p,
            [prov for s in sets for prov in s.provenance],
        )

    def subset(self, idx) -> "PatchSet":
        idx = np.asarray(idx)
        prov = [self.provenance[i] for i in idx] if self.provenance else []
        return PatchSet(self.noisy[idx], self.maps[idx], self.p, prov)


def grid_count(h: int, w: int, p: int) -> int:
    return (h // p) * (w // p)


def extract_patches(image, noise_map, p: int, source=None, scale: float = 1.0, aug: str = "none") -> PatchSet:
    """Non-overlapping ``p x p`` tiles anchored at the top-left corner.

    Rows and columns that do not fill a whole tile are discarded; image and
    map are cut identically.
    """
    img = as_color_image(image)
    m = as_binary_map(noise_map, img.shape[:2])
    h, w, _ = img.shape
    if p < 1 or p > min(h, w):
        raise ContractError(f"patch size {p} does not fit a {h}x{w} image")
    gh, gw = h // p, w // p
    crop = img[: gh * p, : gw * p]
    mcrop = m[: gh * p, : gw * p]
    noisy = crop.reshape(gh, p, gw, p, 3).transpose(0, 2, 1, 3, 4).reshape(-1, p, p, 3)
    maps = mcrop.reshape(gh, p, gw, p).transpose(0, 2, 1, 3).reshape(-1, p, p).astype(np.uint8)
    prov = [(source, scale, aug, r * p, c * p) for r in range(gh) for c in range(gw)]
    return PatchSet(np.ascontiguousarray(noisy), np.ascontiguousarray(maps), p, prov)


def image_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(index)])


def patches_from_image(
    image,
    p: int,
    noise: NoiseSpec,
    rng,
    scales: Iterable[float] = SCALES,
    augmentation: bool = False,
    source=None,
) -> PatchSet:
    """Resize, optionally augment, corrupt and tile one clean image.

    Every geometric variant gets its own noise realisation. In the random
    density mode the clean variant is tiled first and each tile is
    corrupted with its own density; corruption is per pixel, so for a fixed
    density both orders give the same distribution.
    """
    img = as_color_image(image)
    rng = np.random.default_rng(rng)
    sets = []
    for scale in scales:
        resized = bicubic_resize(img, scale)
        variants = [("none", resized)]
        if augmentation:
            variants += list(zip(AUGMENTATIONS, augment(resized)))
        for aug, variant in variants:
            if min(variant.shape[:2]) < p:
                continue
            if noise.is_random:
                clean = extract_patches(variant, np.zeros(variant.shape[:2], bool), p, source, scale, aug)
                for i in range(len(clean)):
                    rho = rng.uniform(*noise.rho_range)
                    clean.noisy[i], clean.maps[i] = corrupt(clean.noisy[i], rho, noise.model, rng)
                sets.append(clean)
            else:
                noisy, m = corrupt(variant, noise.rho, noise.model, rng)
                sets.append(extract_patches(noisy, m, p, source, scale, aug))
    return PatchSet.concatenate(sets, p)


def iter_patch_sets(
    images: Iterable,
    p: int,
    noise: NoiseSpec,
    seed: int,
    scales: Iterable[float] = SCALES,
    augmentation: bool = False,
) -> Iterator[PatchSet]:
    """Per-image patch sets; image ``i`` uses a seed derived from ``(seed, i)``."""
    scales = tuple(scales)
    for i, image in enumerate(images):
        yield patches_from_image(image, p, noise, image_seed(seed, i), scales, augmentation, source=i)


def list_images(image_dir) -> list[Path]:
    d = Path(image_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"{d} is not a directory")
    return sorted(f for f in d.iterdir() if f.suffix.lower() in (".ppm", ".pnm") and f.is_file())


def build_training_set(
    image_dir,
    p: int,
    noise: NoiseSpec,
    seed: int = 0,
    scales: Iterable[float] = SCALES,
    augmentation: bool = True,
    max_images: int | None = None,
) -> PatchSet:
    """All patches from the PPM images in ``image_dir`` (sorted by name)."""
    files = list_images(image_dir)
    if max_images is not None:
        files = files[:max_images]
    if not files:
        raise ContractError(f"no PPM images found in {image_dir}")
    sets = []
    for i, ps in enumerate(iter_patch_sets((load_ppm(f) for f in files), p, noise, seed, scales, augmentation)):
        ps.provenance = [(files[i].name,) + prov[1:] for prov in ps.provenance]
        sets.append(ps)
    out = PatchSet.concatenate(sets, p)
    log.info("built %d patches of %dx%d from %d images", len(out), p, p, len(files))
    return out


# -- patch cache -------------------------------------------------------------

PATCH_MAGIC = b"IDCNNPAT"


def save_patchset(ps: PatchSet, path) -> None:
    """Flat binary cache: magic, u32 count, u32 p, then per patch p*p*3 image
    bytes (row-major RGB) followed by p*p map bytes (0 or 1)."""
    n, p = len(ps), ps.p
    body = np.concatenate([ps.noisy.reshape(n, -1), ps.maps.reshape(n, -1)], axis=1)
    Path(path).write_bytes(PATCH_MAGIC + struct.pack("<II", n, p) + body.astype(np.uint8).tobytes())


def load_patchset(path) -> PatchSet:
    data = Path(path).read_bytes()
    if data[:8] != PATCH_MAGIC or len(data) < 16:
        raise FormatError(f"{path}: not a patch cache")
    n, p = struct.unpack("<II", data[8:16])
    rec = p * p * 4
    if len(data) != 16 + n * rec:
        raise FormatError(f"{path}: expected {n} records of {rec} bytes")
    body = np.frombuffer(data, np.uint8, offset=16).reshape(n, rec)
    noisy = body[:, : p * p * 3].reshape(n, p, p, 3).copy()
    maps = body[:, p * p * 3:].reshape(n, p, p).copy()
    if np.any(maps > 1):
        raise FormatError(f"{path}: map bytes must be 0 or 1")
    return PatchSet(noisy, maps, p)
