"""Adaptive arithmetic mean restoration and the switching filter built on it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NoReferencePixelsError
from .images import as_binary_map, as_color_image


@dataclass(frozen=True)
class RestoreConfig:
    initial: int = 3
    step: int = 2
    max_side: int | None = None  # None: large enough to reach the whole image

    def __post_init__(self):
        if self.initial < 3 or self.initial % 2 == 0:
            raise ContractError(f"initial window side must be odd and >= 3, got {self.initial}")
        if self.step < 2 or self.step % 2:
            raise ContractError(f"window growth step must be even and >= 2, got {self.step}")
        if self.max_side is not None and (self.max_side < self.initial or self.max_side % 2 == 0):
            raise ContractError(f"max window side must be odd and >= {self.initial}, got {self.max_side}")

    def limit(self, h: int, w: int) -> int:
        return self.max_side if self.max_side is not None else 2 * max(h, w) + 1


def _integral(a: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0] + 1, a.shape[1] + 1) + a.shape[2:], dtype=np.int64)
    out[1:, 1:] = a.cumsum(0).cumsum(1)
    return out


def _box(sat: np.ndarray, y0, y1, x0, x1):
    return sat[y1, x1] - sat[y0, x1] - sat[y1, x0] + sat[y0, x0]


def adaptive_mean_restore(noisy, noise_map, cfg: RestoreConfig | None = None) -> np.ndarray:
    """Replace every flagged pixel by the mean of the clean pixels around it.

    The window starts at ``cfg.initial`` pixels square, centred on the
    flagged pixel and clipped at the image border, and grows by ``cfg.step``
    until it holds at least one unflagged pixel. Only pixels unflagged in
    the input map serve as references, so the result does not depend on
    the order in which flagged pixels are visited. Means are rounded to the
    nearest integer with halves rounded up.
    """
    cfg = cfg or RestoreConfig()
    img = as_color_image(noisy)
    flagged = as_binary_map(noise_map, img.shape[:2])
    h, w, _ = img.shape
    out = img.copy()
    if not flagged.any():
        return out
    clean = ~flagged
    if not clean.any():
        raise NoReferencePixelsError("no reference pixels: every pixel is flagged")

    count_sat = _integral(clean.astype(np.int64))
    sum_sat = _integral(img.astype(np.int64) * clean[..., None])

    ys, xs = np.nonzero(flagged)
    side, limit = cfg.initial, cfg.limit(h, w)
    while ys.size:
        if side > limit:
            raise NoReferencePixelsError(
                f"{ys.size} flagged pixels have no clean neighbour within a {limit}x{limit} window"
            )
        r = side // 2
        y0, y1 = np.maximum(ys - r, 0), np.minimum(ys + r + 1, h)
        x0, x1 = np.maximum(xs - r, 0), np.minimum(xs + r + 1, w)
        n = _box(count_sat, y0, y1, x0, x1)
        done = n > 0
        if done.any():
            s = _box(sum_sat, y0[done], y1[done], x0[done], x1[done])
            k = n[done][:, None]
            # exact round-half-up of s / k for non-negative integers
            out[ys[done], xs[done]] = ((2 * s + k) // (2 * k)).astype(np.uint8)
        ys, xs = ys[~done], xs[~done]
        side += cfg.step
    return out


def switching_filter(noisy, model, threshold: float = 0.5, cfg: RestoreConfig | None = None):
    """Detect impulses with ``model`` and restore only the flagged pixels.

    Returns ``(restored, detection_map)``.
    """
    from .idcnn import detect

    noise_map = detect(model, noisy, threshold)
    return adaptive_mean_restore(noisy, noise_map, cfg), noise_map
