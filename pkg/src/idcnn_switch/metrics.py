"""Detection and restoration quality measures."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError
from .images import as_binary_map, as_color_image


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def rho(self) -> float:
        """Realised impulse fraction of the ground truth."""
        return (self.tp + self.fn) / self.total if self.total else 0.0


def confusion(truth, est) -> ConfusionCounts:
    t = as_binary_map(truth)
    e = as_binary_map(est, t.shape)
    tp = int(np.count_nonzero(t & e))
    fn = int(np.count_nonzero(t & ~e))
    fp = int(np.count_nonzero(~t & e))
    return ConfusionCounts(tp=tp, tn=t.size - tp - fn - fp, fp=fp, fn=fn)


def _rate(num: int, den: int) -> float:
    # an empty class has rate 0 by convention
    return num / den if den else 0.0


def fpr(c: ConfusionCounts) -> float:
    return _rate(c.fp, c.fp + c.tn)


def fnr(c: ConfusionCounts) -> float:
    return _rate(c.fn, c.tp + c.fn)


def wacc(c: ConfusionCounts) -> float:
    """Weighted accuracy with the weight taken from the ground-truth impulse fraction.

    When one class is empty its weight is zero, so only the surviving term
    contributes.
    """
    rho = c.rho
    return rho * _rate(c.tp, c.tp + c.fn) + (1 - rho) * _rate(c.tn, c.tn + c.fp)


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    a, b = as_color_image(x), as_color_image(y)
    if a.shape != b.shape:
        raise ContractError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a.astype(np.int64), b.astype(np.int64)


def mse(x, y) -> float:
    a, b = _pair(x, y)
    return float(np.sum((a - b) ** 2)) / a.size


def psnr(x, y) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    err = mse(x, y)
    if err == 0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / err)


def mae(x, y) -> float:
    a, b = _pair(x, y)
    return float(np.sum(np.abs(a - b))) / a.size


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_RANGE = 255.0


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalised 1-d Gaussian; the 2-d window is its outer product."""
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def ssim_channel(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM of one channel: 11x11 Gaussian window (sigma 1.5), valid region only."""
    g = gaussian_window()
    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim_c(x, y) -> float:
    """Color SSIM: the per-channel SSIM averaged over R, G and B."""
    a, b = _pair(x, y)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ContractError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[:2]}")
    a, b = a.astype(np.float64), b.astype(np.float64)
    return sum(ssim_channel(a[..., q], b[..., q]) for q in range(3)) / 3


@dataclass(frozen=True)
class AimDiagram:
    """Share of total MAE contributed by each decision class."""

    mae_tp: float
    mae_fp: float
    mae_fn: float

    @property
    def total(self) -> float:
        return self.mae_tp + self.mae_fp + self.mae_fn


def aim_diagram(clean, restored, truth, est) -> AimDiagram:
    a, b = _pair(clean, restored)
    t = as_binary_map(truth, a.shape[:2])
    e = as_binary_map(est, a.shape[:2])
    err = np.abs(a - b).sum(axis=2)
    denom = a.size
    return AimDiagram(
        mae_tp=float(err[t & e].sum()) / denom,
        mae_fp=float(err[~t & e].sum()) / denom,
        mae_fn=float(err[t & ~e].sum()) / denom,
    )


@dataclass(frozen=True)
class QualityReport:
    psnr: float
    mae: float
    ssim: float


def quality(clean, restored) -> QualityReport:
    return QualityReport(psnr(clean, restored), mae(clean, restored), ssim_c(clean, restored))


REPORT_COLUMNS = ("wacc", "fpr", "fnr", "psnr", "mae", "ssim", "mae_tp", "mae_fp", "mae_fn")


def evaluate(clean, restored, truth, est) -> dict[str, float]:
    """Every detection and quality measure for one image, keyed by column name."""
    c = confusion(truth, est)
    q = quality(clean, restored)
    aim = aim_diagram(clean, restored, truth, est)
    return {
        "rho": c.rho,
        "wacc": wacc(c),
        "fpr": fpr(c),
        "fnr": fnr(c),
        **asdict(q),
        **asdict(aim),
    }
