"""Slow, literal reference implementations used as oracles.

Each function transcribes a definition with explicit loops and shares no
code with the vectorised implementations it is compared against.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d_loops(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    k = weight.shape[0]
    out = np.zeros((n, k, h, w), dtype=np.float64)
    for b in range(n):
        for o in range(k):
            for i in range(h):
                for j in range(w):
                    acc = float(bias[o])
                    for ci in range(c):
                        for dy in range(3):
                            for dx in range(3):
                                yy, xx = i + dy - 1, j + dx - 1
                                if 0 <= yy < h and 0 <= xx < w:
                                    acc += float(weight[o, ci, dy, dx]) * float(x[b, ci, yy, xx])
                    out[b, o, i, j] = acc
    return out


def mse_loss_loops(pred: np.ndarray, target: np.ndarray) -> float:
    per_item = []
    for p_item, t_item in zip(pred, target):
        s = 0.0
        for a, b in zip(p_item.ravel().tolist(), t_item.ravel().tolist()):
            s += (a - b) ** 2
        per_item.append(s / p_item.size)
    return sum(per_item) / len(per_item)


def confusion_loops(truth: np.ndarray, est: np.ndarray) -> tuple[int, int, int, int]:
    tp = tn = fp = fn = 0
    for t, e in zip(np.asarray(truth).ravel().tolist(), np.asarray(est).ravel().tolist()):
        if t and e:
            tp += 1
        elif t:
            fn += 1
        elif e:
            fp += 1
        else:
            tn += 1
    return tp, tn, fp, fn


def mae_loops(x: np.ndarray, y: np.ndarray) -> float:
    h, w, _ = x.shape
    total = 0
    for i in range(h):
        for j in range(w):
            for q in range(3):
                total += abs(int(x[i, j, q]) - int(y[i, j, q]))
    return total / (3 * h * w)


def psnr_loops(x: np.ndarray, y: np.ndarray) -> float:
    h, w, _ = x.shape
    total = 0
    for i in range(h):
        for j in range(w):
            for q in range(3):
                total += (int(x[i, j, q]) - int(y[i, j, q])) ** 2
    if total == 0:
        return math.inf
    return 10 * math.log10(255**2 / (total / (3 * h * w)))


def ssim_direct(x: np.ndarray, y: np.ndarray, size: int = 11, sigma: float = 1.5) -> float:
    """Color SSIM by explicit weighted sums over every valid window position."""
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    half = (size - 1) / 2
    wts = [[math.exp(-((u - half) ** 2 + (v - half) ** 2) / (2 * sigma**2)) for v in range(size)] for u in range(size)]
    norm = sum(map(sum, wts))
    wts = [[v / norm for v in row] for row in wts]
    h, w, _ = x.shape
    channel_means = []
    for q in range(3):
        vals = []
        for i in range(h - size + 1):
            for j in range(w - size + 1):
                ma = mb = 0.0
                for u in range(size):
                    for v in range(size):
                        ma += wts[u][v] * float(x[i + u, j + v, q])
                        mb += wts[u][v] * float(y[i + u, j + v, q])
                va = vb = cab = 0.0
                for u in range(size):
                    for v in range(size):
                        da = float(x[i + u, j + v, q]) - ma
                        db = float(y[i + u, j + v, q]) - mb
                        va += wts[u][v] * da * da
                        vb += wts[u][v] * db * db
                        cab += wts[u][v] * da * db
                vals.append(((2 * ma * mb + c1) * (2 * cab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
        channel_means.append(sum(vals) / len(vals))
    return sum(channel_means) / 3


def restore_bruteforce(noisy: np.ndarray, flagged: np.ndarray) -> np.ndarray:
    """Grow a centred odd window until it holds a clean pixel, then average."""
    h, w, _ = noisy.shape
    out = noisy.copy()
    for i in range(h):
        for j in range(w):
            if not flagged[i, j]:
                continue
            side = 3
            while True:
                r = side // 2
                refs = [
                    noisy[y, x]
                    for y in range(max(0, i - r), min(h, i + r + 1))
                    for x in range(max(0, j - r), min(w, j + r + 1))
                    if not flagged[y, x]
                ]
                if refs:
                    break
                if side > 2 * max(h, w) + 1:
                    raise ValueError("no reference pixels")
                side += 2
            for q in range(3):
                s = sum(int(p[q]) for p in refs)
                # round half up, exact in integers
                out[i, j, q] = (2 * s + len(refs)) // (2 * len(refs))
    return out


def minimal_window_side(flagged: np.ndarray, i: int, j: int) -> int:
    """Smallest odd side whose clipped window around (i, j) contains a clean pixel."""
    h, w = flagged.shape
    for side in range(3, 2 * max(h, w) + 3, 2):
        r = side // 2
        if not flagged[max(0, i - r):i + r + 1, max(0, j - r):j + r + 1].all():
            return side
    raise ValueError("no reference pixels")
